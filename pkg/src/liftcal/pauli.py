"""
Pauli operator basis and the real (Bloch) coordinates of density matrices
and Hamiltonians.

Operators are ordered lexicographically over {I, X, Y, Z}^n in Kronecker
order with the identity string removed, e.g. for n = 2:
IX, IY, IZ, XI, XX, ..., ZZ.
"""
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product

import numpy as np

from .errors import InvalidOperatorError, InvalidStateError, UnsupportedDimensionError

MAX_QUBITS = 3

_SINGLE = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def pauli_matrix(label):
    """Kronecker product of single-qubit Paulis named by `label`, e.g. 'XZ'."""
    out = np.ones((1, 1), dtype=complex)
    for ch in label:
        out = np.kron(out, _SINGLE[ch])
    return out


@dataclass(frozen=True, eq=False)
class PauliBasis:
    n: int
    labels: tuple
    operators: np.ndarray = field(repr=False)  # (m, d, d)
    sigma: np.ndarray = field(repr=False)  # (m, m, m), [P_j, P_k] = sum_l d sigma_jkl P_l

    @property
    def dim(self):
        return 2 ** self.n

    @property
    def size(self):
        return len(self.labels)

    def index(self, label):
        return self.labels.index(label)

    @cached_property
    def adjoint(self):
        """Real (m, m, m) stack; adjoint[j] is the vectorized generator of P_j."""
        # [H]_lk = -i sum_j sigma_jkl h_j, so adjoint[j][l, k] = -i sigma_jkl
        return np.real(-1j * np.transpose(self.sigma, (0, 2, 1)))

    @cached_property
    def _adjoint_pinv(self):
        m = self.size
        return np.linalg.pinv(self.adjoint.reshape(m, m * m).T)

    def coefficients(self, H):
        """Pauli coefficients h_j = Tr(P_j H) of a matrix (real part for Hermitian H)."""
        return np.real(np.einsum("jab,ba->j", self.operators, H))

    def from_coefficients(self, h):
        """Traceless Hermitian matrix sum_j h_j P_j / 2^n."""
        return np.einsum("j,jab->ab", np.asarray(h, dtype=float), self.operators) / self.dim

    def generator_coefficients(self, generator):
        """Least-squares Pauli coefficients h with vectorize(sum h_j P_j / d) closest to `generator`."""
        return self._adjoint_pinv @ np.asarray(generator, dtype=float).reshape(-1)


def build_basis(n):
    """Traceless n-qubit Pauli basis with its structure constants."""
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= MAX_QUBITS:
        raise UnsupportedDimensionError(f"qubit count must be in 1..{MAX_QUBITS}, got {n!r}")
    labels = tuple("".join(p) for p in product("IXYZ", repeat=n))[1:]
    ops = np.array([pauli_matrix(lab) for lab in labels])
    d = 2 ** n
    # sigma_jkl = Tr(P_l [P_j, P_k]) / d^2
    prod_jk = np.einsum("jab,kbc->jkac", ops, ops)
    comm = prod_jk - prod_jk.transpose(1, 0, 2, 3)
    sigma = np.einsum("lca,jkac->jkl", ops, comm) / d**2
    return PauliBasis(n=int(n), labels=labels, operators=ops, sigma=sigma)


def _check_hermitian(M, tol, err, what):
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise err(f"{what} must be a square matrix, got shape {M.shape}")
    if np.max(np.abs(M - M.conj().T), initial=0.0) > tol:
        raise err(f"{what} is not Hermitian")
    return M


def density_to_bloch(rho, basis, tol=1e-10):
    rho = _check_hermitian(rho, tol, InvalidStateError, "density matrix")
    if rho.shape[0] != basis.dim:
        raise InvalidStateError(f"expected {basis.dim}x{basis.dim} density matrix")
    if abs(np.trace(rho) - 1) > tol:
        raise InvalidStateError(f"density matrix has trace {np.trace(rho).real:.3g}")
    if np.linalg.eigvalsh(rho).min() < -tol:
        raise InvalidStateError("density matrix is not positive semidefinite")
    x = np.einsum("jab,ba->j", basis.operators, rho)
    if np.max(np.abs(x.imag)) > 1e-12:
        raise InvalidStateError("Bloch coordinates have an imaginary part")
    return x.real


def purity_bound(basis):
    """Largest Bloch-vector norm of a valid state: sqrt(2^n - 1)."""
    return np.sqrt(basis.dim - 1)


def bloch_to_density(x, basis, tol=1e-10):
    x = np.asarray(x, dtype=float)
    if x.shape != (basis.size,):
        raise InvalidStateError(f"expected {basis.size} Bloch coordinates, got shape {x.shape}")
    if np.linalg.norm(x) > purity_bound(basis) + tol:
        raise InvalidStateError("Bloch vector violates the purity bound")
    return np.eye(basis.dim) / basis.dim + basis.from_coefficients(x)


def vectorize_hamiltonian(H, basis, tol=1e-10):
    """
    Real skew-symmetric generator of the Bloch dynamics induced by H.

    For x_l = Tr(P_l rho) and rho' = -i[H, rho], returns the matrix with
    x' = generator @ x. The identity part of H is dropped.
    """
    H = _check_hermitian(H, tol, InvalidOperatorError, "Hamiltonian")
    if H.shape[0] != basis.dim:
        raise InvalidOperatorError(f"expected {basis.dim}x{basis.dim} Hamiltonian")
    return np.einsum("j,jlk->lk", basis.coefficients(H), basis.adjoint)


def state_vector_to_bloch(psi, basis):
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return density_to_bloch(np.outer(psi, psi.conj()), basis)


def ground_state(basis):
    """Bloch coordinates of |0...0><0...0|."""
    psi = np.zeros(basis.dim)
    psi[0] = 1.0
    return state_vector_to_bloch(psi, basis)
