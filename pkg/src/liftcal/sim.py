"""Bilinear Bloch-vector simulator with zero-order-hold controls."""
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.linalg import expm

from .errors import ConfigurationError, ShapeError
from .pauli import build_basis, pauli_matrix, vectorize_hamiltonian

PHASES = ("initial-qoc", "dmd-redesign", "ilc")


def _is_skew(M, tol=1e-12):
    return np.max(np.abs(M + M.T), initial=0.0) <= tol * max(1.0, np.max(np.abs(M), initial=0.0))


@dataclass(frozen=True, eq=False)
class HamiltonianModel:
    """
    Real vectorized bilinear model x' = (drift + sum_j u_j controls[j]) x, y = C x.

    drift is (m, m), controls is (J, m, m), both skew-symmetric.
    """
    basis: object
    drift: np.ndarray = field(repr=False)
    controls: np.ndarray = field(repr=False)
    dt: float
    horizon: int
    C: np.ndarray = field(default=None, repr=False)
    check_skew: bool = field(default=True, repr=False)

    def __post_init__(self):
        m = self.basis.size
        drift = np.asarray(self.drift, dtype=float)
        controls = np.asarray(self.controls, dtype=float)
        if controls.ndim == 2:
            controls = controls[None]
        if drift.shape != (m, m) or controls.ndim != 3 or controls.shape[1:] != (m, m):
            raise ShapeError(f"generators must be ({m}, {m}); got {drift.shape}, {controls.shape}")
        if controls.shape[0] < 1:
            raise ConfigurationError("model needs at least one control")
        if not self.dt > 0 or int(self.horizon) < 1:
            raise ConfigurationError("need dt > 0 and horizon >= 1")
        if self.check_skew and not all(_is_skew(g) for g in (drift, *controls)):
            raise ConfigurationError("generators must be skew-symmetric")
        C = np.eye(m) if self.C is None else np.atleast_2d(np.asarray(self.C, dtype=float))
        if C.shape[1] != m:
            raise ShapeError(f"observation matrix must have {m} columns")
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n_controls(self):
        return self.controls.shape[0]

    @property
    def n_states(self):
        return self.basis.size

    @property
    def n_outputs(self):
        return self.C.shape[0]

    def generator(self, u_s):
        return self.drift + np.tensordot(np.asarray(u_s, dtype=float), self.controls, axes=1)

    @cached_property
    def drift_hamiltonian(self):
        return self.basis.from_coefficients(self.basis.generator_coefficients(self.drift))

    @cached_property
    def control_hamiltonians(self):
        b = self.basis
        return np.array([b.from_coefficients(b.generator_coefficients(g)) for g in self.controls])

    def hamiltonian(self, u_s):
        """Complex 2^n x 2^n Hamiltonian reconstructed from the real generators."""
        return self.drift_hamiltonian + np.tensordot(np.asarray(u_s, dtype=float),
                                                     self.control_hamiltonians, axes=1)

    def with_generators(self, drift, controls):
        return replace(self, drift=drift, controls=controls)


def model_from_hamiltonians(basis, H0, Hc, dt, horizon, C=None):
    return HamiltonianModel(
        basis=basis,
        drift=vectorize_hamiltonian(H0, basis),
        controls=np.array([vectorize_hamiltonian(H, basis) for H in Hc]),
        dt=dt,
        horizon=horizon,
        C=C,
    )


def qubit_model(dt, horizon, drift_z=0.0, control_axes=("X", "Y")):
    """Single-qubit model H = drift_z Z + sum_j u_j P_j over the given control axes."""
    basis = build_basis(1)
    return model_from_hamiltonians(
        basis, drift_z * pauli_matrix("Z"), [pauli_matrix(a) for a in control_axes], dt, horizon
    )


def expm_derivative(M, E):
    """Frechet derivative of expm at M in direction E, via expm of [[M, E], [0, M]]."""
    k = M.shape[0]
    Z = np.zeros_like(M, dtype=np.result_type(M, E))
    big = expm(np.block([[M, E], [Z, M]]))
    return big[:k, :k], big[:k, k:]


def step_propagator(model, u_s):
    return expm(model.dt * model.generator(u_s))


def _check_schedule(model, u):
    u = np.asarray(u, dtype=float)
    if u.ndim == 1 and model.n_controls == 1:
        u = u[:, None]
    if u.shape != (model.horizon, model.n_controls):
        raise ShapeError(f"control schedule must be ({model.horizon}, {model.n_controls}), got {u.shape}")
    return u


@dataclass(frozen=True, eq=False)
class RolloutRecord:
    x: np.ndarray  # (T+1, m)
    y: np.ndarray  # (T+1, K)
    u: np.ndarray  # (T, J)
    dt: float
    iteration: int = 0
    phase: str = "initial-qoc"

    @property
    def horizon(self):
        return self.u.shape[0]


def rollout(model, u, x0, iteration=0, phase="initial-qoc", noise_std=0.0, rng=None):
    """Propagate x0 under the control schedule u; y carries optional Gaussian readout noise."""
    u = _check_schedule(model, u)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.n_states,):
        raise ShapeError(f"initial state must have {model.n_states} coordinates")
    if phase not in PHASES:
        raise ConfigurationError(f"unknown phase tag {phase!r}")
    x = np.empty((model.horizon + 1, model.n_states))
    x[0] = x0
    for s in range(model.horizon):
        x[s + 1] = step_propagator(model, u[s]) @ x[s]
    y = x @ model.C.T
    if noise_std > 0:
        rng = np.random.default_rng(rng)
        y = y + noise_std * rng.standard_normal(y.shape)
    return RolloutRecord(x=x, y=y, u=u.copy(), dt=model.dt, iteration=iteration, phase=phase)


@dataclass(frozen=True)
class ErrorModel:
    """
    Coherent model discrepancy.

    drift: additive Pauli coefficients on the drift Hamiltonian, keyed by label.
    control: relative amplitude error per control line, (1 + eps_j) H_j.
    """
    drift: dict = field(default_factory=dict)
    control: tuple = ()

    @classmethod
    def qubit(cls, eps_z=0.0, eps_x=0.0, eps_y=0.0):
        return cls(drift={"Z": float(eps_z)}, control=(float(eps_x), float(eps_y)))

    @property
    def eps_z(self):
        return self.drift.get("Z", 0.0)

    @property
    def eps_x(self):
        return self.control[0] if self.control else 0.0

    @property
    def eps_y(self):
        return self.control[1] if len(self.control) > 1 else 0.0

    def is_zero(self):
        return not any(self.drift.values()) and not any(self.control)


def apply_error_model(nominal, err):
    basis = nominal.basis
    if err.control and len(err.control) != nominal.n_controls:
        raise ConfigurationError(
            f"error model has {len(err.control)} control terms, model has {nominal.n_controls}"
        )
    unknown = set(err.drift) - set(basis.labels)
    if unknown:
        raise ConfigurationError(f"unknown Pauli labels in error model: {sorted(unknown)}")
    drift = nominal.drift.copy()
    for label, coef in err.drift.items():
        if coef:
            # H = c P_i has Pauli coefficient Tr(P_i c P_i) = c 2^n
            drift = drift + coef * basis.dim * basis.adjoint[basis.index(label)]
    scale = np.ones(nominal.n_controls)
    if err.control:
        scale = scale + np.asarray(err.control, dtype=float)
    controls = nominal.controls * scale[:, None, None]
    return nominal.with_generators(drift, controls)


def sample_error_model(mean_eps, rng_seed, sign_policy="random"):
    """
    Draw eps_z, eps_x, eps_y independently from N(+-mean_eps, mean_eps^2 / 100).

    With sign_policy="random" each component's sign is an independent fair coin.
    """
    if sign_policy not in ("random", "positive"):
        raise ConfigurationError(f"unknown sign policy {sign_policy!r}")
    rng = np.random.default_rng(rng_seed)
    mean_eps = float(mean_eps)
    signs = rng.choice([-1.0, 1.0], size=3) if sign_policy == "random" else np.ones(3)
    draws = signs * mean_eps + (mean_eps / 10.0) * rng.standard_normal(3)
    if mean_eps == 0.0:
        draws = np.zeros(3)
    return ErrorModel.qubit(*draws)
