"""Gate design on a model (the black-box optimal-control step) and the gate fidelity metric."""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, logm
from scipy.optimize import minimize

from .errors import ConfigurationError, QocConvergenceError, ShapeError
from .lifting import reference_from_controls
from .pauli import pauli_matrix
from .sim import _check_schedule, expm_derivative

log = logging.getLogger(__name__)

GUESS_POLICIES = ("zero", "constant-area", "random-seeded")


@dataclass(frozen=True, eq=False)
class GateTarget:
    unitary: np.ndarray = field(repr=False)
    name: str = ""

    def __post_init__(self):
        U = np.asarray(self.unitary, dtype=complex)
        if U.ndim != 2 or U.shape[0] != U.shape[1]:
            raise ShapeError("target must be a square matrix")
        if np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0]))) > 1e-10:
            raise ConfigurationError("target is not unitary")
        object.__setattr__(self, "unitary", U)

    @property
    def d(self):
        return self.unitary.shape[0]

    @classmethod
    def pauli(cls, label):
        return cls(pauli_matrix(label), name=label)


@dataclass(frozen=True)
class QocConfig:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-12
    infidelity_tolerance: float = 1e-6
    u_sat: float = 1.0
    initial_guess_policy: str = "constant-area"
    guess_jitter: float = 0.3  # fraction of u_sat used by random-seeded guesses
    restarts: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1 or not self.u_sat > 0:
            raise ConfigurationError("need max_iterations >= 1 and u_sat > 0")
        if self.initial_guess_policy not in GUESS_POLICIES:
            raise ConfigurationError(f"unknown guess policy {self.initial_guess_policy!r}")


def step_unitaries(model, u):
    u = _check_schedule(model, u)
    return np.array([expm(-1j * model.dt * model.hamiltonian(u_s)) for u_s in u])


def evolution(model, u):
    """Time-ordered product U = U_{T-1} ... U_0."""
    U = np.eye(model.basis.dim, dtype=complex)
    for Us in step_unitaries(model, u):
        U = Us @ U
    return U


def gate_fidelity(model, u, target):
    """|Tr(U^dag U_target)| / d for the evolution of u on the model."""
    U = evolution(model, u)
    return float(abs(np.trace(U.conj().T @ target.unitary)) / target.d)


def _objective(model, target, T, J):
    """Infidelity 1 - |Tr(U_target^dag U)|^2 / d^2 and its exact gradient."""
    d = target.d
    Ut_dag = target.unitary.conj().T
    Hc = model.control_hamiltonians

    def fun(flat):
        u = flat.reshape(T, J)
        steps = []
        dsteps = []
        for s in range(T):
            M = -1j * model.dt * model.hamiltonian(u[s])
            Us = None
            ds = []
            for j in range(J):
                Us, L = expm_derivative(M, -1j * model.dt * Hc[j])
                ds.append(L)
            steps.append(Us)
            dsteps.append(ds)
        # forward products R_s = U_{s-1} ... U_0, backward L_s = Ut^dag U_{T-1} ... U_{s+1}
        fwd = [np.eye(d, dtype=complex)]
        for s in range(T):
            fwd.append(steps[s] @ fwd[-1])
        z = np.trace(Ut_dag @ fwd[-1])
        grad = np.empty((T, J))
        back = Ut_dag.copy()
        for s in reversed(range(T)):
            RL = fwd[s] @ back
            for j in range(J):
                dz = np.trace(RL @ dsteps[s][j])
                grad[s, j] = -2.0 * np.real(np.conj(z) * dz) / d**2
            back = back @ steps[s]
        return 1.0 - abs(z) ** 2 / d**2, grad.ravel()

    return fun


def constant_area_guess(model, target):
    """Constant controls whose summed rotation matches the target's generator, ignoring drift."""
    K = 1j * logm(target.unitary)  # target = exp(-i K)
    K = K - np.trace(K) / target.d * np.eye(target.d)
    b = model.basis
    k = b.coefficients((K + K.conj().T) / 2)
    Hcoef = np.array([b.coefficients(H) for H in model.control_hamiltonians]).T  # (m, J)
    total = model.dt * model.horizon
    c, *_ = np.linalg.lstsq(Hcoef, k / total, rcond=None)
    return np.tile(c, (model.horizon, 1))


def initial_guess(model, target, cfg, policy, rng):
    T, J = model.horizon, model.n_controls
    if policy == "zero":
        u = np.zeros((T, J))
    elif policy == "constant-area":
        u = constant_area_guess(model, target)
    else:
        u = constant_area_guess(model, target) + cfg.guess_jitter * cfg.u_sat * rng.uniform(-1, 1, (T, J))
    return np.clip(u, -cfg.u_sat, cfg.u_sat)


def optimize_controls(model, target, cfg, guess):
    """One L-BFGS-B run from `guess`; returns (controls, infidelity, history)."""
    T, J = model.horizon, model.n_controls
    fun = _objective(model, target, T, J)
    history = []

    def cb(xk):
        history.append(fun(xk)[0])

    res = minimize(
        fun,
        np.asarray(guess, dtype=float).ravel(),
        jac=True,
        method="L-BFGS-B",
        bounds=[(-cfg.u_sat, cfg.u_sat)] * (T * J),
        callback=cb,
        options={"maxiter": cfg.max_iterations, "gtol": cfg.gradient_tolerance, "ftol": 1e-16},
    )
    u = np.clip(res.x.reshape(T, J), -cfg.u_sat, cfg.u_sat)
    return u, 1.0 - gate_fidelity(model, u, target), history


def design_controls(model, target, cfg=None, rng=None):
    """
    Optimize a control schedule for `target` on `model`.

    Tries the configured initial guess first, then the constant-area guess,
    then seeded random restarts. Raises QocConvergenceError if none reaches
    cfg.infidelity_tolerance.
    """
    cfg = QocConfig() if cfg is None else cfg
    if target.d != model.basis.dim:
        raise ShapeError("target dimension does not match the model")
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    policies = [cfg.initial_guess_policy]
    if cfg.initial_guess_policy != "constant-area":
        policies.append("constant-area")
    policies += ["random-seeded"] * cfg.restarts
    best_u, best = None, np.inf
    best_so_far = []
    for policy in policies:
        u, infid, _ = optimize_controls(model, target, cfg, initial_guess(model, target, cfg, policy, rng))
        if infid < best:
            best_u, best = u, infid
        best_so_far.append(best)
        log.debug("qoc attempt %s: infidelity %.3e (best %.3e)", policy, infid, best)
        if best <= cfg.infidelity_tolerance:
            return best_u, best, best_so_far
    raise QocConvergenceError(
        f"optimizer reached infidelity {best:.3e} > {cfg.infidelity_tolerance:.1e}", best, best_u
    )


def design_reference(model, target, x0, cfg=None, rng=None):
    """Design controls on `model` and roll them out to get a feasible reference triplet."""
    u, _, _ = design_controls(model, target, cfg, rng)
    return reference_from_controls(model, u, x0), u
