import numpy as np
import pytest

from liftcal.pauli import build_basis, ground_state
from liftcal.sim import qubit_model


@pytest.fixture
def basis1():
    return build_basis(1)


@pytest.fixture
def basis2():
    return build_basis(2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def x0():
    return ground_state(build_basis(1))


@pytest.fixture
def nominal():
    return qubit_model(0.04, 10)


def random_hermitian(rng, d):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (A + A.conj().T) / 2


def random_density(rng, d):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = A @ A.conj().T
    return rho / np.trace(rho)


ACCEPTANCE = {}


def acceptance(number, text):
    """Mark a test as acceptance criterion `number`; reported as PASS, FAIL or NOT RUN."""
    def wrap(fn):
        fn.criterion_number = number
        ACCEPTANCE[number] = [text, None, ""]
        return fn
    return wrap


def measured(number, detail):
    ACCEPTANCE[number][2] = detail


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    number = getattr(item.function, "criterion_number", None)
    if number is not None and rep.when == "call" and number in ACCEPTANCE:
        ACCEPTANCE[number][1] = rep.passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        text, ok, detail = ACCEPTANCE[number]
        tail = f" [{detail}]" if detail else ""
        status = "NOT RUN" if ok is None else ("PASS" if ok else "FAIL")
        terminalreporter.write_line(f"{status}  criterion {number}: {text}{tail}")
