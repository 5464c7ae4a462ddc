"""Norm-optimal iterative learning control in lifted coordinates."""
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, ShapeError
from .lifting import lift_deviation

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IlcConfig:
    """
    Weights and limits of the correction problem

        min ||W (F du + d)||^2 + lam^2 ||D du||^2
        s.t. |u_ref + du| <= u_sat,  |du| <= du_sat

    W defaults to the identity over the lifted state; D is the forward time
    difference per control channel.
    """
    lam: float = 1e-3
    u_sat: float = 1.0
    du_sat: float = 1.0
    W: np.ndarray = field(default=None, repr=False, compare=False)
    max_qp_iterations: int = 20000
    qp_tolerance: float = 1e-12
    reset_tol: float = 1e-10  # widen when readouts are noisy

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigurationError("lambda must be nonnegative")
        if not (self.u_sat > 0 and self.du_sat > 0):
            raise ConfigurationError("saturation bounds must be positive")


@dataclass(frozen=True, eq=False)
class IlcState:
    d_hat: np.ndarray = field(default=None, repr=False)
    delta_u: np.ndarray = field(default=None, repr=False)
    iteration: int = 0
    tracking_rms: tuple = ()


def difference_operator(horizon, n_controls):
    """Forward difference over time for each channel of a time-major lifted control vector."""
    T, J = horizon, n_controls
    D = np.zeros(((T - 1) * J, T * J))
    for s in range(T - 1):
        for j in range(J):
            D[s * J + j, s * J + j] = -1.0
            D[s * J + j, (s + 1) * J + j] = 1.0
    return D


def estimate_disturbance(lifted, record, ref, delta_u_applied=None, reset_tol=1e-10):
    """d = delta_x - F delta_u from one rollout; used as the next-trial estimate."""
    dx, _, du = lift_deviation(record, ref, reset_tol)
    if delta_u_applied is None:
        delta_u_applied = du
    delta_u_applied = np.asarray(delta_u_applied, dtype=float).reshape(-1)
    if delta_u_applied.shape[0] != lifted.F.shape[1]:
        raise ShapeError("applied correction does not match the lifted system")
    return dx - lifted.F @ delta_u_applied


@dataclass(frozen=True, eq=False)
class QpResult:
    x: np.ndarray = field(repr=False)
    objective: float
    iterations: int
    converged: bool
    warning: str = ""


def _weights(cfg, n_rows):
    if cfg.W is None:
        return None
    W = np.asarray(cfg.W, dtype=float)
    if W.ndim == 1:
        W = np.diag(W)
    if W.shape[1] != n_rows:
        raise ShapeError(f"weight matrix must have {n_rows} columns")
    return W


def box_least_squares(M, b, lo, hi, max_iter=20000, tol=1e-12):
    """
    min 0.5 ||M x - b||^2 subject to lo <= x <= hi.

    Accelerated projected gradient with adaptive restart, followed by an
    active-set polish that solves the free subproblem exactly.
    """
    n = M.shape[1]
    if np.any(lo > hi):
        raise ConfigurationError("infeasible box constraints")
    H = M.T @ M
    c = M.T @ b

    def obj(x):
        r = M @ x - b
        return 0.5 * float(r @ r)

    def pg_norm(x):
        return float(np.linalg.norm(x - np.clip(x - (H @ x - c), lo, hi)))

    x_ls, *_ = np.linalg.lstsq(M, b, rcond=None)
    if np.all(x_ls >= lo) and np.all(x_ls <= hi):
        return QpResult(x=x_ls, objective=obj(x_ls), iterations=0, converged=True)

    Lip = max(np.linalg.norm(H, 2), 1e-300)
    x = np.clip(x_ls, lo, hi)
    y, t = x.copy(), 1.0
    it = 0
    for it in range(1, max_iter + 1):
        x_new = np.clip(y - (H @ y - c) / Lip, lo, hi)
        if obj(x_new) > obj(x):
            # restart momentum
            y, t = x.copy(), 1.0
            continue
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = x_new + ((t - 1) / t_new) * (x_new - x)
        x, t = x_new, t_new
        if it % 25 == 0:
            x = _polish(M, b, H, c, x, lo, hi, obj)
            if pg_norm(x) <= tol * max(1.0, np.linalg.norm(c)):
                break
    x = _polish(M, b, H, c, x, lo, hi, obj)
    converged = pg_norm(x) <= tol * max(1.0, np.linalg.norm(c))
    warn = "" if converged else f"box QP stopped after {it} iterations, stationarity {pg_norm(x):.2e}"
    if warn:
        log.warning(warn)
    return QpResult(x=x, objective=obj(x), iterations=it, converged=converged, warning=warn)


def _polish(M, b, H, c, x, lo, hi, obj, rounds=10):
    """Fix variables at their bounds when the gradient pushes outward and solve the rest exactly."""
    best = x
    for _ in range(rounds):
        g = H @ best - c
        at_lo = (best <= lo + 1e-12) & (g > 0)
        at_hi = (best >= hi - 1e-12) & (g < 0)
        fixed = at_lo | at_hi
        free = ~fixed
        cand = best.copy()
        cand[at_lo] = lo[at_lo]
        cand[at_hi] = hi[at_hi]
        if np.any(free):
            rhs = b - M[:, fixed] @ cand[fixed]
            sol, *_ = np.linalg.lstsq(M[:, free], rhs, rcond=None)
            cand[free] = sol
        cand = np.clip(cand, lo, hi)
        if obj(cand) <= obj(best) + 1e-15 * max(1.0, obj(best)):
            if np.allclose(cand, best, rtol=0, atol=1e-15):
                return cand
            best = cand
        else:
            break
    return best


def correction_problem(lifted, d_hat, cfg):
    """Stacked least-squares form [W F; lam D] du ~ [-W d; 0]."""
    F = lifted.F
    d_hat = np.asarray(d_hat, dtype=float).reshape(-1)
    if d_hat.shape[0] != F.shape[0]:
        raise ShapeError(f"disturbance has {d_hat.shape[0]} entries, lifted state has {F.shape[0]}")
    W = _weights(cfg, F.shape[0])
    WF = F if W is None else W @ F
    Wd = d_hat if W is None else W @ d_hat
    rows, rhs = [WF], [-Wd]
    if cfg.lam > 0 and lifted.horizon > 1:
        D = difference_operator(lifted.horizon, lifted.n_controls)
        rows.append(cfg.lam * D)
        rhs.append(np.zeros(D.shape[0]))
    return np.vstack(rows), np.concatenate(rhs)


def correction_bounds(u_ref, cfg):
    u_ref = np.asarray(u_ref, dtype=float).reshape(-1)
    lo = np.maximum(-cfg.u_sat - u_ref, -cfg.du_sat)
    hi = np.minimum(cfg.u_sat - u_ref, cfg.du_sat)
    return lo, hi


def solve_correction(lifted, d_hat, u_ref, cfg):
    """Next lifted deviation from the reference controls; returns a QpResult."""
    M, b = correction_problem(lifted, d_hat, cfg)
    lo, hi = correction_bounds(u_ref, cfg)
    res = box_least_squares(M, b, lo, hi, cfg.max_qp_iterations, cfg.qp_tolerance)
    zero = np.zeros_like(res.x)
    if np.all(lo <= 0) and np.all(hi >= 0):
        r0 = 0.5 * float(b @ b)
        if r0 < res.objective:
            res = replace(res, x=zero, objective=r0)
    return res


def tracking_rms(record, ref):
    dy = record.y - ref.y_ref
    return float(np.linalg.norm(dy) / np.sqrt(dy.size))


def ilc_step(lifted, record, ref, state, cfg):
    """Estimate the repetitive disturbance from `record` and solve for the next correction."""
    d_hat = estimate_disturbance(lifted, record, ref, reset_tol=cfg.reset_tol)
    res = solve_correction(lifted, d_hat, ref.u_ref, cfg)
    new_state = IlcState(
        d_hat=d_hat,
        delta_u=res.x,
        iteration=state.iteration + 1,
        tracking_rms=state.tracking_rms + (tracking_rms(record, ref),),
    )
    return res.x, new_state


def contraction_estimate(F_true, F_ref):
    """Spectral norm of I - pinv(F_ref) F_true."""
    F_true = np.asarray(F_true, dtype=float)
    F_ref = np.asarray(F_ref, dtype=float)
    if F_true.shape != F_ref.shape:
        raise ShapeError("lifted maps differ in shape")
    M = np.eye(F_ref.shape[1]) - np.linalg.pinv(F_ref) @ F_true
    return float(np.linalg.norm(M, 2))
