import numpy as np
import pytest
from scipy.linalg import expm

from liftcal.errors import ConfigurationError, QocConvergenceError, ShapeError
from liftcal.lifting import reference_from_controls
from liftcal.pauli import pauli_matrix
from liftcal.qoc import (GateTarget, QocConfig, _objective, constant_area_guess, design_controls,
                         design_reference, evolution, gate_fidelity)
from liftcal.sim import ErrorModel, apply_error_model, qubit_model, rollout
from liftcal.sysid import assemble_snapshots, bilinear_dmd, learned_hamiltonian_model

X = pauli_matrix("X")
T, DT = 10, 0.04
HALF_TURN = np.pi / (2 * T * DT)


def test_analytic_half_turn_is_exact(nominal):
    u = np.column_stack([np.full(T, HALF_TURN), np.zeros(T)])
    assert np.isclose(gate_fidelity(nominal, u, GateTarget.pauli("X")), 1.0, atol=1e-12)
    assert np.allclose(evolution(nominal, u), expm(-1j * np.pi / 2 * X), atol=1e-12)


def test_constant_area_guess_is_the_analytic_solution(nominal):
    u = constant_area_guess(nominal, GateTarget.pauli("X"))
    assert np.allclose(u[:, 0], HALF_TURN) and np.allclose(u[:, 1], 0, atol=1e-12)


def test_zero_controls_give_zero_fidelity_for_x(nominal):
    assert gate_fidelity(nominal, np.zeros((T, 2)), GateTarget.pauli("X")) == pytest.approx(0, abs=1e-15)


def test_quarter_turn_fidelity(nominal):
    # rotation by theta about X scores |cos((pi - theta)/2)| against X
    u = np.column_stack([np.full(T, HALF_TURN / 2), np.zeros(T)])
    assert abs(gate_fidelity(nominal, u, GateTarget.pauli("X")) - np.cos(np.pi / 4)) < 1e-9


def test_fidelity_ignores_global_phase(nominal, rng):
    u = rng.uniform(-4, 4, (T, 2))
    f = gate_fidelity(nominal, u, GateTarget.pauli("X"))
    g = gate_fidelity(nominal, u, GateTarget(np.exp(0.7j) * X))
    assert abs(f - g) < 1e-12


@pytest.mark.parametrize("policy", ["zero", "constant-area", "random-seeded"])
def test_design_reaches_tolerance(nominal, policy):
    cfg = QocConfig(u_sat=8.0, initial_guess_policy=policy)
    u, infid, best = design_controls(nominal, GateTarget.pauli("X"), cfg, np.random.default_rng(0))
    assert infid <= 1e-6
    assert gate_fidelity(nominal, u, GateTarget.pauli("X")) >= 1 - 1e-6
    assert np.all(np.abs(u) <= 8.0)
    assert all(b >= a for a, b in zip(best[1:], best[:-1]))


def test_identity_target_keeps_zero_controls(nominal):
    cfg = QocConfig(initial_guess_policy="zero")
    u, infid, _ = design_controls(nominal, GateTarget(np.eye(2)), cfg)
    assert infid == pytest.approx(0, abs=1e-15)
    assert not np.any(u)


def test_gradient_matches_finite_differences(rng):
    model = qubit_model(DT, T, drift_z=0.3)
    fun = _objective(model, GateTarget.pauli("X"), T, 2)
    u = rng.uniform(-3, 3, T * 2)
    _, g = fun(u)
    h = 1e-6
    fd = np.array([(fun(u + h * e)[0] - fun(u - h * e)[0]) / (2 * h) for e in np.eye(T * 2)])
    assert np.max(np.abs(g - fd)) < 1e-8


def test_reference_on_learned_model_is_feasible(nominal, x0, rng):
    true = apply_error_model(nominal, ErrorModel.qubit(0.2, 0.0, 0.0))
    rec = rollout(true, rng.uniform(-4, 4, (T, 2)), x0)
    learned = learned_hamiltonian_model(nominal, bilinear_dmd(assemble_snapshots([rec]), refine=True))
    ref, u = design_reference(learned, GateTarget.pauli("X"), x0, QocConfig(u_sat=8.0))
    assert np.max(np.abs(ref.remainder())) <= 1e-10
    assert np.array_equal(ref.x_ref, reference_from_controls(learned, u, x0).x_ref)


def test_unreachable_target_raises_with_best_iterate(nominal):
    cfg = QocConfig(u_sat=0.5, restarts=1, max_iterations=50)
    with pytest.raises(QocConvergenceError) as info:
        design_controls(nominal, GateTarget.pauli("X"), cfg)
    assert info.value.best_infidelity > 1e-6
    assert info.value.best_controls.shape == (T, 2)


def test_target_validation(nominal):
    with pytest.raises(ConfigurationError):
        GateTarget(np.array([[1, 1], [0, 1]]))
    with pytest.raises(ShapeError):
        design_controls(nominal, GateTarget(np.eye(4)))
    with pytest.raises(ConfigurationError):
        QocConfig(initial_guess_policy="magic")
