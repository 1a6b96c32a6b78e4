"""Dense complex multilinear algebra on (C^d)^{(x)M}.

Index convention: slot 1 is the slowest-varying index of a flattened tensor
(the ordering produced by ``np.kron``). Every module relies on it.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InstanceTooLarge, NotHermitian, ShapeError

DEFAULT_ELEMENT_CAP = 2**26
_element_cap = DEFAULT_ELEMENT_CAP

HERMITIAN_TOL = 1e-12


def get_element_cap() -> int:
    return _element_cap


def set_element_cap(cap: int) -> int:
    """Set the per-matrix element cap; returns the previous value."""
    global _element_cap
    previous, _element_cap = _element_cap, int(cap)
    return previous


def check_size(rows: int, cols: int) -> None:
    if rows * cols > _element_cap:
        raise InstanceTooLarge(
            f"{rows}x{cols} matrix exceeds element cap {_element_cap}"
        )


def as_matrix(x) -> np.ndarray:
    """Return the complex ndarray behind ``x`` (accepts objects with ``.matrix``)."""
    if hasattr(x, "matrix"):
        x = x.matrix
    m = np.asarray(x, dtype=complex)
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got array of shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ShapeError("matrix has non-finite entries")
    return m


def dagger(m: np.ndarray) -> np.ndarray:
    return m.conj().T


def hermiticity_defect(m: np.ndarray) -> float:
    return float(np.max(np.abs(m - m.conj().T), initial=0.0))


def is_hermitian(m, tol: float = HERMITIAN_TOL) -> bool:
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        return False
    scale = max(1.0, float(np.max(np.abs(m), initial=0.0)))
    return hermiticity_defect(m) <= tol * scale


def require_hermitian(m, name: str = "matrix", tol: float = HERMITIAN_TOL) -> np.ndarray:
    m = as_matrix(m)
    if not is_hermitian(m, tol):
        raise NotHermitian(f"{name} is not Hermitian (defect {hermiticity_defect(m):.3e})")
    return m


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def kron(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    check_size(a.shape[0] * b.shape[0], a.shape[1] * b.shape[1])
    return np.kron(a, b)


def kron_power(a, n: int) -> np.ndarray:
    a = as_matrix(a)
    out = np.ones((1, 1), dtype=complex)
    for _ in range(n):
        out = kron(out, a)
    return out


def identity(d: int, n: int = 1) -> np.ndarray:
    check_size(d**n, d**n)
    return np.eye(d**n, dtype=complex)


def infer_arity(dim: int, d: int) -> int:
    """Number of tensor slots ``p`` with ``d**p == dim``."""
    p = round(math.log(dim) / math.log(d)) if dim > 1 else 0
    if d**p != dim:
        raise ShapeError(f"dimension {dim} is not a power of {d}")
    return p


# ---------------------------------------------------------------------------
# Permutations and symmetrizers
# ---------------------------------------------------------------------------

def _digits(d: int, M: int) -> np.ndarray:
    """(d**M, M) array of base-d digits, slot 1 first."""
    idx = np.arange(d**M)
    out = np.empty((d**M, M), dtype=np.int64)
    for k in range(M - 1, -1, -1):
        out[:, k] = idx % d
        idx = idx // d
    return out


def _undigits(digits: np.ndarray, d: int) -> np.ndarray:
    out = np.zeros(digits.shape[0], dtype=np.int64)
    for k in range(digits.shape[1]):
        out = out * d + digits[:, k]
    return out


def permutation_operator(perm, d: int) -> np.ndarray:
    """Matrix of (U psi)(x_1..x_M) = psi(x_perm(1)..x_perm(M)), perm 0-based."""
    perm = tuple(perm)
    M = len(perm)
    check_size(d**M, d**M)
    digits = _digits(d, M)
    cols = _undigits(digits[:, list(perm)], d)
    U = np.zeros((d**M, d**M), dtype=complex)
    U[np.arange(d**M), cols] = 1.0
    return U


@lru_cache(maxsize=64)
def _symmetrizer_cached(M: int, d: int) -> np.ndarray:
    digits = _digits(d, M)
    rows = np.arange(d**M)
    P = np.zeros((d**M, d**M))
    for perm in itertools.permutations(range(M)):
        np.add.at(P, (rows, _undigits(digits[:, list(perm)], d)), 1.0)
    P /= math.factorial(M)
    P.setflags(write=False)
    return P


def symmetrize(M: int, d: int) -> np.ndarray:
    """Projection P_S^M onto the permutation-symmetric subspace of (C^d)^{(x)M}."""
    if M < 0 or d < 1:
        raise ShapeError("symmetrize needs M >= 0 and d >= 1")
    check_size(d**M, d**M)
    return _symmetrizer_cached(M, d).astype(complex)


def exchange_symmetrize(a, M: int, d: int) -> np.ndarray:
    """Average of U_s a U_s^dagger over all slot permutations s.

    Leaves Tr(a rho^{(x)M}) unchanged for every one-particle rho.
    """
    a = as_matrix(a)
    if a.shape != (d**M, d**M):
        raise ShapeError(f"kernel shape {a.shape} incompatible with d={d}, M={M}")
    if M <= 1:
        return a.copy()
    t = a.reshape((d,) * (2 * M))
    acc = np.zeros_like(t)
    for perm in itertools.permutations(range(M)):
        acc += t.transpose(list(perm) + [M + k for k in perm])
    return (acc / math.factorial(M)).reshape(d**M, d**M)


def swap_operator(d: int) -> np.ndarray:
    return permutation_operator((1, 0), d)


# ---------------------------------------------------------------------------
# Traces and norms
# ---------------------------------------------------------------------------

def partial_trace(m, dims, keep) -> np.ndarray:
    """Trace out every slot not listed in ``keep`` (0-based slot indices)."""
    m = as_matrix(m)
    dims = [int(x) for x in dims]
    n = len(dims)
    total = math.prod(dims)
    if m.shape != (total, total) or any(x < 1 for x in dims):
        raise ShapeError(f"dims {dims} do not match matrix of shape {m.shape}")
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= n for k in keep):
        raise ShapeError(f"keep {keep} out of range for {n} slots")
    t = m.reshape(dims + dims)
    letters = [chr(ord("a") + i) for i in range(2 * n)]
    row = letters[:n]
    col = [row[i] if i not in keep else letters[n + i] for i in range(n)]
    out = [row[i] for i in keep] + [col[i] for i in keep]
    res = np.einsum("".join(row + col) + "->" + "".join(out), t)
    kd = math.prod(dims[i] for i in keep)
    return res.reshape(kd, kd)


def contract_last_slot(m: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Tr_last[m (I (x) rho)] for m on k slots of dimension d = rho.shape[0]."""
    d = rho.shape[0]
    rest = m.shape[0] // d
    t = m.reshape(rest, d, rest, d)
    return np.einsum("xayb,ba->xy", t, rho)


def contract_first_slot(m: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Tr_first[m (rho (x) I)]."""
    d = rho.shape[0]
    rest = m.shape[0] // d
    t = m.reshape(d, rest, d, rest)
    return np.einsum("axby,ba->xy", t, rho)


def op_norm(m) -> float:
    """Largest singular value."""
    m = as_matrix(m)
    if m.size == 0:
        return 0.0
    return float(np.linalg.norm(m, 2))


def trace_norm(m) -> float:
    return float(np.sum(np.linalg.svd(as_matrix(m), compute_uv=False)))


# ---------------------------------------------------------------------------
# Spectra and propagation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HermitianSpectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        U = self.eigenvectors
        return (U * self.eigenvalues) @ U.conj().T

    def phases(self, t: float, hbar: float) -> np.ndarray:
        return np.exp(1j * self.eigenvalues * t / hbar)

    def unitary(self, t: float, hbar: float) -> np.ndarray:
        """exp(i H t / hbar)."""
        U = self.eigenvectors
        return (U * self.phases(t, hbar)) @ U.conj().T


def eigh_hermitian(H) -> HermitianSpectrum:
    H = require_hermitian(H, "H")
    Hs = 0.5 * (H + H.conj().T)
    w, U = np.linalg.eigh(Hs)
    return HermitianSpectrum(w, U)


def propagate(H, t: float, hbar: float, X, spectrum: HermitianSpectrum | None = None) -> np.ndarray:
    """exp(iHt/hbar) X exp(-iHt/hbar), via the spectrum of H."""
    X = as_matrix(X)
    if spectrum is None:
        spectrum = eigh_hermitian(H)
    if t == 0:
        return X.copy()
    U = spectrum.eigenvectors
    ph = spectrum.phases(t, hbar)
    Xe = U.conj().T @ X @ U
    Xe = ph[:, None] * Xe * ph.conj()[None, :]
    return U @ Xe @ U.conj().T


def free_hamiltonian(h, n: int) -> np.ndarray:
    """sum_i h_i on n slots."""
    h = as_matrix(h)
    d = h.shape[0]
    check_size(d**n, d**n)
    out = np.zeros((d**n, d**n), dtype=complex)
    for i in range(n):
        out += np.kron(np.kron(np.eye(d**i), h), np.eye(d ** (n - i - 1)))
    return out


def embed_pair(V, i: int, j: int, n: int, d: int) -> np.ndarray:
    """Two-body operator V acting on slots (i, j) (0-based, i != j) of n slots."""
    V = as_matrix(V)
    if i == j:
        raise ShapeError("pair slots must differ")
    check_size(d**n, d**n)
    rest = [k for k in range(n) if k not in (i, j)]
    order = [i, j] + rest
    base = np.kron(V, np.eye(d ** (n - 2)))
    # base acts on slots in `order`; permute back to natural order.
    inv = np.argsort(order)
    t = base.reshape((d,) * (2 * n))
    t = t.transpose(list(inv) + [n + k for k in inv])
    return t.reshape(d**n, d**n)
