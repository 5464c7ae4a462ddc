"""Linearization around a reference trajectory and the lifted (trial-domain) system."""
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from .errors import InfeasibleReferenceError, ResetError, ShapeError
from .sim import expm_derivative, rollout, step_propagator

FEASIBILITY_TOL = 1e-10
RESET_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ReferenceTriplet:
    y_ref: np.ndarray = field(repr=False)  # (T+1, K)
    x_ref: np.ndarray = field(repr=False)  # (T+1, m)
    u_ref: np.ndarray = field(repr=False)  # (T, J)
    model: object

    @property
    def horizon(self):
        return self.u_ref.shape[0]

    def remainder(self, model=None):
        """r(s) = f(x_ref(s), u_ref(s)) - x_ref(s+1) for s = 0..T-1, on `model` or the design model."""
        model = self.model if model is None else model
        return np.array([
            step_propagator(model, self.u_ref[s]) @ self.x_ref[s] - self.x_ref[s + 1]
            for s in range(self.horizon)
        ])

    def is_feasible(self, model=None, tol=FEASIBILITY_TOL):
        return float(np.max(np.abs(self.remainder(model)), initial=0.0)) <= tol


def reference_from_controls(model, u, x0):
    """Roll u out on the design model; the resulting triplet is feasible by construction."""
    rec = rollout(model, u, x0)
    return ReferenceTriplet(y_ref=rec.y, x_ref=rec.x, u_ref=rec.u, model=model)


def linearize(model, ref, tol=FEASIBILITY_TOL):
    """
    Per-step Jacobians of x(s+1) = expm(dt G(u(s))) x(s) at the reference.

    Returns A of shape (T, m, m) and B of shape (T, m, J). A(s) is the step
    propagator itself; B(s)[:, j] = L(dt G_s, dt H_j) x_ref(s) with L the
    Frechet derivative of the matrix exponential.
    """
    if not ref.is_feasible(model, tol):
        raise InfeasibleReferenceError("reference remainder exceeds tolerance on this model")
    T, m, J = ref.horizon, model.n_states, model.n_controls
    A = np.empty((T, m, m))
    B = np.empty((T, m, J))
    for s in range(T):
        M = model.dt * model.generator(ref.u_ref[s])
        for j in range(J):
            P, L = expm_derivative(M, model.dt * model.controls[j])
            B[s, :, j] = L @ ref.x_ref[s]
        A[s] = P
    return A, B


@dataclass(frozen=True, eq=False)
class LiftedSystem:
    F: np.ndarray = field(repr=False)  # ((T+1) m, T J)
    G: np.ndarray = field(repr=False)  # ((T+1) K, (T+1) m)
    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)

    @property
    def horizon(self):
        return self.A.shape[0]

    @property
    def n_states(self):
        return self.A.shape[1]

    @property
    def n_controls(self):
        return self.B.shape[2]

    def block(self, s, k):
        m, J = self.n_states, self.n_controls
        return self.F[s * m:(s + 1) * m, k * J:(k + 1) * J]


def build_lifted(A, B, C):
    """Stack Markov parameters into the block-lower-triangular map delta_u -> delta_x."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if A.ndim != 3 or B.ndim != 3 or A.shape[0] != B.shape[0]:
        raise ShapeError(f"inconsistent Jacobian stacks {A.shape}, {B.shape}")
    T, m, _ = A.shape
    J = B.shape[2]
    if A.shape[2] != m or B.shape[1] != m or C.shape[1] != m:
        raise ShapeError("Jacobian and observation shapes disagree")
    F = np.zeros(((T + 1) * m, T * J))
    for k in range(T):
        # column block k: B(k), A(k+1) B(k), A(k+2) A(k+1) B(k), ...
        blk = B[k]
        for s in range(k + 1, T + 1):
            F[s * m:(s + 1) * m, k * J:(k + 1) * J] = blk
            if s < T:
                blk = A[s] @ blk
    G = block_diag(*([C] * (T + 1)))
    return LiftedSystem(F=F, G=G, A=A, B=B)


def lift(model, ref):
    A, B = linearize(model, ref)
    return build_lifted(A, B, model.C)


def measured_states(record, C=None):
    """
    Least-squares state estimates from the measured outputs, x = pinv(C) y.

    Calibration code reads rollouts only through this, so a simulator's exact
    state never leaks into learning. C defaults to the identity.
    """
    y = np.asarray(record.y, dtype=float)
    if C is None:
        return y
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape[0] != y.shape[1]:
        raise ShapeError(f"observation matrix has {C.shape[0]} rows, record has {y.shape[1]} outputs")
    if np.linalg.matrix_rank(C) < C.shape[1]:
        raise ShapeError("states are not recoverable from the outputs (C lacks full column rank)")
    return np.linalg.lstsq(C, y.T, rcond=None)[0].T


def lift_deviation(record, ref, reset_tol=RESET_TOL, C=None):
    """
    Time-major stacked (delta_x, delta_y, delta_u) of a rollout against the reference.

    delta_x is formed from the measured outputs (see measured_states).
    """
    C = getattr(ref.model, "C", None) if C is None else C
    x_meas = measured_states(record, C)
    if x_meas.shape != ref.x_ref.shape or record.u.shape != ref.u_ref.shape:
        raise ShapeError(
            f"rollout shapes {x_meas.shape}/{record.u.shape} do not match "
            f"reference {ref.x_ref.shape}/{ref.u_ref.shape}"
        )
    dx = x_meas - ref.x_ref
    dy = record.y - ref.y_ref
    if np.max(np.abs(dx[0])) > reset_tol:
        raise ResetError(f"initial state deviates from reference by {np.max(np.abs(dx[0])):.3g}")
    du = record.u - ref.u_ref
    return dx.reshape(-1), dy.reshape(-1), du.reshape(-1)


def lifted_schedule(du, horizon, n_controls):
    return np.asarray(du, dtype=float).reshape(horizon, n_controls)

