"""Quick runtime self-checks of the structural invariants, used by `liftcal validate`."""
import numpy as np

from .lifting import lift, reference_from_controls
from .pauli import build_basis, density_to_bloch, ground_state, vectorize_hamiltonian
from .sim import ErrorModel, apply_error_model, qubit_model, rollout
from .sysid import assemble_snapshots, bilinear_dmd, feasible


def _check_basis():
    worst = 0.0
    for n in (1, 2):
        b = build_basis(n)
        gram = np.einsum("aij,bji->ab", b.operators, b.operators).real
        worst = max(worst, np.max(np.abs(gram - b.dim * np.eye(b.size))))
        worst = max(worst, np.max(np.abs(b.sigma + b.sigma.transpose(1, 0, 2))))
    return worst < 1e-12, f"max deviation {worst:.1e}"


def _check_generators():
    b = build_basis(2)
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    H = A + A.conj().T
    G = vectorize_hamiltonian(H, b)
    return bool(np.max(np.abs(G + G.T)) < 1e-12), f"skew residual {np.max(np.abs(G + G.T)):.1e}"


def _check_purity():
    model = qubit_model(0.04, 10, drift_z=0.3)
    rng = np.random.default_rng(1)
    rec = rollout(model, rng.uniform(-2, 2, (10, 2)), ground_state(model.basis))
    norms = np.linalg.norm(rec.x, axis=1)
    dev = float(np.max(np.abs(norms - 1.0)))
    return dev < 1e-12, f"max norm drift {dev:.1e}"


def _check_lifting():
    model = qubit_model(0.04, 10, drift_z=0.3)
    rng = np.random.default_rng(2)
    u = rng.uniform(-2, 2, (10, 2))
    x0 = ground_state(model.basis)
    ref = reference_from_controls(model, u, x0)
    lifted = lift(model, ref)
    upper = max(float(np.max(np.abs(lifted.block(s, k)))) for s in range(11) for k in range(s, 10))
    h = 1e-6
    J = np.empty_like(lifted.F)
    for i in range(u.size):
        e = np.zeros(u.size)
        e[i] = h
        xp = rollout(model, u + e.reshape(u.shape), x0).x.ravel()
        xm = rollout(model, u - e.reshape(u.shape), x0).x.ravel()
        J[:, i] = (xp - xm) / (2 * h)
    err = float(np.max(np.abs(J - lifted.F)))
    return upper == 0.0 and err < 1e-7, f"upper blocks {upper:.1e}, finite-difference error {err:.1e}"


def _check_dmd():
    nominal = qubit_model(0.04, 10)
    true = apply_error_model(nominal, ErrorModel.qubit(0.1, -0.1, 0.1))
    rng = np.random.default_rng(3)
    rec = rollout(true, rng.uniform(-4, 4, (10, 2)), ground_state(nominal.basis))
    learned = bilinear_dmd(assemble_snapshots([rec]), refine=True)
    errs = [np.linalg.norm(learned.A0 - true.drift)] + [
        np.linalg.norm(a - b) for a, b in zip(learned.Ac, true.controls)]
    ok = max(errs) < 1e-6 and not feasible(nominal, learned)
    return ok, f"max generator error {max(errs):.1e}, mismatch flagged {not feasible(nominal, learned)}"


def _check_density():
    b = build_basis(1)
    x = density_to_bloch(np.eye(2) / 2, b)
    return bool(np.allclose(x, 0)), "maximally mixed state maps to the origin"


CHECKS = [
    ("pauli basis orthogonality and antisymmetry", _check_basis),
    ("vectorized generators are skew-symmetric", _check_generators),
    ("pure-state rollouts keep unit Bloch norm", _check_purity),
    ("lifted map is causal and matches finite differences", _check_lifting),
    ("bilinear fit recovers a perturbed model", _check_dmd),
    ("density matrix conversion", _check_density),
]


def run_checks():
    results = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # report, do not abort the remaining checks
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))
    return results
