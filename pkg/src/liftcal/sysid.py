"""
Data-driven identification of drift and control generators from rollouts
(DMD and bilinear DMD), the feasibility check, and the observable-sufficiency
analysis for tracking.
"""
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.optimize import least_squares

from .errors import InsufficientDataError, ShapeError
from .lifting import measured_states

log = logging.getLogger(__name__)

EXCITATION_THRESHOLD = 1e-8
DERIVATIVE_MODES = ("discrete", "continuous-fd")


class ExcitationWarning(UserWarning):
    """Regression data do not excite every generator."""


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    X: np.ndarray  # (m, N) states x(s)
    X_prime: np.ndarray  # (m, N) states x(s+1)
    U: np.ndarray  # (J, N) controls held over [s, s+1)
    dt: float
    derivative_mode: str = "continuous-fd"

    @property
    def n_columns(self):
        return self.X.shape[1]


def assemble_snapshots(records, derivative_mode="continuous-fd", C=None):
    """
    Column-wise concatenation of offset snapshot pairs from one or more rollouts.

    States are estimated from the measured outputs through C (identity by default).
    """
    records = list(records)
    if not records:
        raise InsufficientDataError("no rollouts to assemble")
    if derivative_mode not in DERIVATIVE_MODES:
        raise ValueError(f"unknown derivative mode {derivative_mode!r}")
    dt = records[0].dt
    states = [measured_states(r, C) for r in records]
    m = states[0].shape[1]
    J = records[0].u.shape[1]
    for r, x in zip(records[1:], states[1:]):
        if not np.isclose(r.dt, dt, rtol=0, atol=1e-15):
            raise ShapeError(f"rollouts disagree on dt: {r.dt} vs {dt}")
        if x.shape[1] != m or r.u.shape[1] != J:
            raise ShapeError("rollouts disagree on state or control dimension")
    X = np.hstack([x[:-1].T for x in states])
    Xp = np.hstack([x[1:].T for x in states])
    U = np.hstack([r.u.T for r in records])
    return SnapshotSet(X=X, X_prime=Xp, U=U, dt=dt, derivative_mode=derivative_mode)


def khatri_rao(U, X):
    """Column-wise Kronecker product: column s is u(s) (x) x(s)."""
    J, N = U.shape
    m = X.shape[0]
    return (U[:, None, :] * X[None, :, :]).reshape(J * m, N)


@dataclass(frozen=True, eq=False)
class DmdResult:
    A: np.ndarray = field(repr=False)
    residual: float
    conditioning: float
    rank_deficient: bool


def dmd(snapshots):
    """Least-squares one-step propagator A minimizing ||A X - X'||_F (minimum norm if ambiguous)."""
    X, Xp = snapshots.X, snapshots.X_prime
    if X.shape[1] == 0:
        raise InsufficientDataError("empty snapshot set")
    At, *_ = np.linalg.lstsq(X.T, Xp.T, rcond=None)
    A = At.T
    sv = np.linalg.svd(X, compute_uv=False)
    smin = sv[-1] if X.shape[1] >= X.shape[0] else 0.0
    return DmdResult(
        A=A,
        residual=float(np.linalg.norm(A @ X - Xp)),
        conditioning=float(smin),
        rank_deficient=bool(smin < EXCITATION_THRESHOLD * max(sv[0], 1.0)),
    )


@dataclass(frozen=True, eq=False)
class LearnedModel:
    A0: np.ndarray = field(repr=False)
    Ac: np.ndarray = field(repr=False)  # (J, m, m)
    residual: float
    conditioning: float
    warning: str = ""

    @property
    def generators(self):
        return np.concatenate([self.A0[None], self.Ac])


def skew_basis(m):
    """(p, m, m) basis of skew-symmetric matrices E_ab = e_a e_b^T - e_b e_a^T, a < b."""
    iu = np.triu_indices(m, 1)
    E = np.zeros((len(iu[0]), m, m))
    for p, (a, b) in enumerate(zip(*iu)):
        E[p, a, b] = -1.0
        E[p, b, a] = 1.0
    return E


def _regression_targets(snapshots):
    """Regressor states and targets for the chosen derivative mode."""
    X, Xp, dt = snapshots.X, snapshots.X_prime, snapshots.dt
    if snapshots.derivative_mode == "continuous-fd":
        # central difference about the step midpoint; controls are constant across the step
        return 0.5 * (X + Xp), (Xp - X) / dt
    return X, Xp


def _to_continuous(gens, snapshots):
    if snapshots.derivative_mode == "continuous-fd":
        return gens
    m = gens.shape[1]
    out = gens / snapshots.dt
    out[0] = (gens[0] - np.eye(m)) / snapshots.dt
    return out


def bilinear_dmd(snapshots, constrain_skew=True, prior=None, prior_weight=0.0, refine=False):
    """
    Fit drift and control generators to snapshot data.

    Solves min ||[A0 A1 ... AJ] [X; U*X] - X'||_F^2 (+ prior_weight ||A - prior||_F^2)
    with X' replaced by midpoint central differences in continuous-fd mode.
    With constrain_skew the generators are parameterized as skew-symmetric
    matrices, so the fit is the constrained least-squares minimizer.

    refine=True polishes a skew fit against the exact zero-order-hold
    propagator, x(s+1) = expm(dt (A0 + sum_j u_j(s) A_j)) x(s), removing the
    O(dt^2) finite-difference bias. It is skipped when the data are not
    persistently exciting, since the polish then wanders along the null space.
    """
    X, U = snapshots.X, snapshots.U
    N = X.shape[1]
    if N == 0:
        raise InsufficientDataError("empty snapshot set")
    m, J = X.shape[0], U.shape[0]
    Z, Y = _regression_targets(snapshots)
    Phi = np.vstack([Z, khatri_rao(U, Z)])  # ((J+1) m, N)
    prior_gens = None
    if prior is not None and prior_weight > 0:
        prior_gens = np.asarray(prior.generators if hasattr(prior, "generators")
                                else np.concatenate([prior.drift[None], prior.controls]), dtype=float)
        if snapshots.derivative_mode == "discrete":
            prior_gens = prior_gens * snapshots.dt
            prior_gens[0] += np.eye(m)

    if constrain_skew and snapshots.derivative_mode == "continuous-fd":
        E = skew_basis(m)
        p = len(E)
        W = np.vstack([np.ones(N), U])  # (J+1, N) weights of each generator per sample
        # row (a, n), column (g, q): w_g(n) [E_q z(n)]_a
        D = np.einsum("gn,qan->angq", W, np.einsum("qab,bn->qan", E, Z)).reshape(m * N, (J + 1) * p)
        rows, targets = [D], [Y.reshape(-1)]
        if prior_gens is not None:
            rows.append(np.sqrt(prior_weight) * np.eye((J + 1) * p))
            targets.append(np.sqrt(prior_weight) * _skew_coordinates(prior_gens))
        theta, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(targets), rcond=None)
        sv = np.linalg.svd(D, compute_uv=False)
        conditioning = float(sv[-1]) if D.shape[0] >= D.shape[1] else 0.0
        gens = np.einsum("gq,qab->gab", theta.reshape(J + 1, p), E)
        if refine and conditioning >= EXCITATION_THRESHOLD:
            gens = _refine_zoh(gens, snapshots, E)
        residual = float(np.linalg.norm(np.einsum("gab,gn,bn->an", gens, W, Z) - Y))
    else:
        design_T, targets_T = Phi.T, Y.T
        if prior_gens is not None:
            flat_prior = np.hstack(list(prior_gens))  # (m, (J+1) m)
            design_T = np.vstack([design_T, np.sqrt(prior_weight) * np.eye((J + 1) * m)])
            targets_T = np.vstack([targets_T, np.sqrt(prior_weight) * flat_prior.T])
        Theta_T, *_ = np.linalg.lstsq(design_T, targets_T, rcond=None)
        Theta = Theta_T.T  # (m, (J+1) m)
        sv = np.linalg.svd(Phi, compute_uv=False)
        conditioning = float(sv[-1]) if N >= Phi.shape[0] else 0.0
        residual = float(np.linalg.norm(Theta @ Phi - Y))
        gens = _to_continuous(Theta.reshape(m, J + 1, m).transpose(1, 0, 2), snapshots)
        if constrain_skew:
            gens = 0.5 * (gens - np.transpose(gens, (0, 2, 1)))

    msg = ""
    if conditioning < EXCITATION_THRESHOLD:
        msg = f"insufficient excitation: smallest regressor singular value {conditioning:.2e}"
        warnings.warn(msg, ExcitationWarning, stacklevel=2)
    return LearnedModel(A0=gens[0], Ac=gens[1:], residual=residual, conditioning=conditioning, warning=msg)


def _skew_coordinates(gens):
    m = gens.shape[1]
    iu = np.triu_indices(m, 1)
    # E_ab has -1 at (a, b) for a < b, so the coordinate is -A[a, b] of the skew part
    skew = 0.5 * (gens - np.transpose(gens, (0, 2, 1)))
    return (-skew[:, iu[0], iu[1]]).reshape(-1)


def _refine_zoh(gens, snapshots, E):
    X, Xp, U, dt = snapshots.X, snapshots.X_prime, snapshots.U, snapshots.dt
    J1, p = gens.shape[0], len(E)
    W = np.vstack([np.ones(X.shape[1]), U])

    def resid(theta):
        G = np.einsum("gq,qab->gab", theta.reshape(J1, p), E)
        Gs = np.einsum("gn,gab->nab", W, G)
        pred = np.stack([expm(dt * Gs[n]) @ X[:, n] for n in range(X.shape[1])], axis=1)
        return (pred - Xp).ravel()

    theta0 = _skew_coordinates(gens)
    sol = least_squares(resid, theta0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return np.einsum("gq,qab->gab", sol.x.reshape(J1, p), E)


def learned_hamiltonian_model(template, learned):
    """HamiltonianModel with the template's basis, dt, horizon and C and the learned generators."""
    skew = lambda A: 0.5 * (A - A.T)
    return template.with_generators(skew(learned.A0), np.array([skew(A) for A in learned.Ac]))


def model_mismatch(nominal, learned):
    """(relative drift error, per-control relative errors) between a model and a fit."""
    drift_err = np.linalg.norm(learned.A0 - nominal.drift) / max(np.linalg.norm(nominal.drift), 1.0)
    ctrl_err = np.array([
        np.linalg.norm(Aj - Hj) / np.linalg.norm(Hj) for Aj, Hj in zip(learned.Ac, nominal.controls)
    ])
    return float(drift_err), ctrl_err


def feasible(nominal, learned, threshold=0.05):
    if learned.Ac.shape != nominal.controls.shape or learned.A0.shape != nominal.drift.shape:
        raise ShapeError("learned and nominal generators differ in shape")
    drift_err, ctrl_err = model_mismatch(nominal, learned)
    return bool(drift_err <= threshold and np.all(ctrl_err <= threshold))


@dataclass(frozen=True, eq=False)
class SufficiencyReport:
    S: np.ndarray = field(repr=False)  # (T+1, K L, |I|)
    S_bar: np.ndarray = field(repr=False)  # (T+1, K L, |I_bar|)
    control_axes: tuple
    rank_S: int
    overdetermined: bool
    step_ranks: np.ndarray = field(repr=False)
    step_condition: np.ndarray = field(repr=False)
    alpha_norm: float = None

    @property
    def n_equations(self):
        return self.S.shape[1]

    @property
    def underdetermined(self):
        return self.n_equations < len(self.control_axes)


def control_axes_of(model, tol=1e-12):
    """Pauli axes carrying a nonzero coefficient in any control Hamiltonian."""
    b = model.basis
    coef = np.array([b.generator_coefficients(g) for g in model.controls])
    return tuple(int(i) for i in np.flatnonzero(np.max(np.abs(coef), axis=0) > tol))


def sufficiency_analysis(x_ref, C, basis, control_axes, learned=None, nominal=None, rank_tol=1e-9):
    """
    Tracking-sufficiency matrix S with S[kl, i] = sum_{j,m} x_ref[l, j] Im(sigma_ijm) C[k, m].

    x_ref is (T+1, m) for one tracked initial state or (L, T+1, m) for several.
    The rank is taken over S stacked across all snapshots; per-snapshot ranks
    and condition numbers are reported alongside. alpha_norm is the size of
    the drift mismatch on uncontrolled axes when a learned model and its
    nominal counterpart are supplied.
    """
    x_ref = np.asarray(x_ref, dtype=float)
    if x_ref.ndim == 2:
        x_ref = x_ref[None]
    L, T1, m = x_ref.shape
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape[1] != m or basis.size != m:
        raise ShapeError("observation matrix, basis and reference disagree on dimension")
    axes = tuple(sorted(int(i) for i in control_axes))
    others = tuple(i for i in range(m) if i not in axes)
    # Tr(M_k [P_i, rho]) is imaginary; we keep the real coefficient of -i Tr(...)
    sig = np.imag(basis.sigma)
    full = np.einsum("ltj,ijm,km->tkli", x_ref, sig, C).reshape(T1, C.shape[0] * L, m)
    S, S_bar = full[:, :, list(axes)], full[:, :, list(others)]
    stacked = S.reshape(-1, len(axes))
    rank = int(np.linalg.matrix_rank(stacked, tol=rank_tol)) if axes else 0
    step_ranks = np.array([np.linalg.matrix_rank(St, tol=rank_tol) if axes else 0 for St in S])
    step_cond = np.array([np.linalg.cond(St) if axes else np.inf for St in S])
    n_eq = C.shape[0] * L
    alpha = None
    if learned is not None and nominal is not None:
        diff = basis.generator_coefficients(learned.A0 - nominal.drift)
        alpha = float(np.linalg.norm(diff[list(others)])) if others else 0.0
    return SufficiencyReport(
        S=S,
        S_bar=S_bar,
        control_axes=axes,
        rank_S=rank,
        overdetermined=bool(n_eq > len(axes) and rank == len(axes)),
        step_ranks=step_ranks,
        step_condition=step_cond,
        alpha_norm=alpha,
    )
