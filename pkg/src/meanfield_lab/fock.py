"""Occupation-number representation of the symmetric subspace of (C^d)^{(x)N}.

Basis vectors |n> are labelled by occupation vectors n = (n_1..n_d) with
sum(n) = N, ordered with n_1 descending, then n_2 descending, and so on, so
that (N, 0, ..., 0) comes first.

The p-body lift P_S^N (a (x) I) P_S^N is assembled as
((N-p)!/N!) * L_p^dagger (a (x) I) L_p, where L_p stacks the products of
annihilators a_{y_p}...a_{y_1} over all ordered tuples y.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import BadArity, NotHermitian, NotPSD, NotSwapSymmetric, NotSymmetric, ShapeError
from .tensor_core import (
    as_matrix,
    check_size,
    exchange_symmetrize,
    is_hermitian,
    require_hermitian,
    swap_operator,
    symmetrize,
)

PSD_TOL = 1e-10


def basis_dimension(d: int, N: int) -> int:
    return math.comb(N + d - 1, N)


def _occupations(d: int, N: int):
    if d == 1:
        yield (N,)
        return
    for first in range(N, -1, -1):
        for rest in _occupations(d - 1, N - first):
            yield (first,) + rest


@dataclass(frozen=True)
class OccupationBasis:
    d: int
    N: int
    states: tuple = field(repr=False)
    index: dict = field(repr=False, compare=False)

    def __len__(self):
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    def vector(self, i: int) -> tuple:
        return self.states[i]

    def position(self, occ) -> int:
        return self.index[tuple(occ)]


@lru_cache(maxsize=256)
def occupation_basis(d: int, N: int) -> OccupationBasis:
    if d < 1 or N < 0:
        raise ShapeError(f"invalid basis parameters d={d}, N={N}")
    dim = basis_dimension(d, N)
    check_size(dim, 1)
    states = tuple(_occupations(d, N))
    return OccupationBasis(d, N, states, {s: i for i, s in enumerate(states)})


@lru_cache(maxsize=1024)
def _annihilator(d: int, N: int, mode: int) -> np.ndarray:
    """Matrix of a_mode from the N-particle to the (N-1)-particle basis."""
    src = occupation_basis(d, N)
    dst = occupation_basis(d, N - 1)
    A = np.zeros((len(dst), len(src)))
    for j, occ in enumerate(src.states):
        k = occ[mode]
        if k:
            tgt = list(occ)
            tgt[mode] -= 1
            A[dst.position(tgt), j] = math.sqrt(k)
    A.setflags(write=False)
    return A


def annihilator(d: int, N: int, mode: int) -> np.ndarray:
    return np.array(_annihilator(d, N, mode))


def creator(d: int, N: int, mode: int) -> np.ndarray:
    """a^dagger_mode from the N-particle to the (N+1)-particle basis."""
    return annihilator(d, N + 1, mode).T.copy()


@lru_cache(maxsize=256)
def _ladder_stack(d: int, N: int, p: int) -> np.ndarray:
    if p == 0:
        out = np.eye(basis_dimension(d, N))
    else:
        prev = _ladder_stack(d, N, p - 1)              # (d^{p-1} D_{N-p+1}, D_N)
        D_mid = basis_dimension(d, N - p + 1)
        D_out = basis_dimension(d, N - p)
        check_size(d**p * D_out, basis_dimension(d, N))
        blocks = prev.reshape(d ** (p - 1), D_mid, -1)
        out = np.empty((d ** (p - 1), d, D_out, blocks.shape[2]))
        for y in range(d):
            A = _annihilator(d, N - p + 1, y)
            out[:, y] = np.einsum("ij,kjl->kil", A, blocks)
        out = out.reshape(d**p * D_out, -1)
    out.setflags(write=False)
    return out


def ladder_stack(d: int, N: int, p: int) -> np.ndarray:
    """Rows indexed by (y_1..y_p, m) with y slot-1-major: <m| a_{y_p}...a_{y_1} |n>."""
    if p > N:
        raise BadArity(f"arity {p} exceeds particle number {N}")
    return _ladder_stack(d, N, p)


def _lift(a: np.ndarray, p: int, basis: OccupationBasis) -> np.ndarray:
    d, N = basis.d, basis.N
    L = ladder_stack(d, N, p)
    D_rest = basis_dimension(d, N - p)
    La = L.reshape(d**p, D_rest, -1)
    # sum_{x,y} a_{xy} L_x^dagger L_y
    tmp = np.einsum("xy,yml->xml", a, La)
    return np.einsum("xmk,xml->kl", La.conj(), tmp)


def second_quantize_1body(h, basis: OccupationBasis) -> np.ndarray:
    """sum_i h_i restricted to the symmetric subspace."""
    h = require_hermitian(h, "h")
    if h.shape != (basis.d, basis.d):
        raise ShapeError("h does not match the basis mode count")
    if basis.N == 0:
        return np.zeros((1, 1), dtype=complex)
    return _lift(h, 1, basis)


def check_swap_symmetric(V, d: int, tol: float = 1e-12) -> np.ndarray:
    V = as_matrix(V)
    if V.shape != (d * d, d * d):
        raise ShapeError(f"pair operator must be {d*d}x{d*d}")
    S = swap_operator(d)
    scale = max(1.0, float(np.max(np.abs(V), initial=0.0)))
    if np.max(np.abs(S @ V @ S - V), initial=0.0) > tol * scale:
        raise NotSwapSymmetric("pair operator is not invariant under particle exchange")
    return V


def second_quantize_2body(V, g: float, basis: OccupationBasis) -> np.ndarray:
    """(g/2) sum_{i != j} V_ij restricted to the symmetric subspace."""
    V = require_hermitian(V, "V")
    check_swap_symmetric(V, basis.d)
    if basis.N < 2 or g == 0:
        D = len(basis)
        return np.zeros((D, D), dtype=complex)
    return 0.5 * g * _lift(V, 2, basis)


def _kernel_and_arity(a, d: int):
    kernel = getattr(a, "kernel", a)
    kernel = as_matrix(kernel)
    p = getattr(a, "p", None)
    if p is None:
        p = round(math.log(kernel.shape[0], d)) if kernel.shape[0] > 1 else 0
    if kernel.shape != (d**p, d**p):
        raise ShapeError(f"kernel shape {kernel.shape} does not match d={d}, p={p}")
    return kernel, p


def embed_p_observable(a, N: int, basis: OccupationBasis, check: bool = True) -> np.ndarray:
    """Matrix of P_S^N (a (x) I^{N-p}) P_S^N in the occupation basis.

    ``a`` is a PObservable or a d^p x d^p kernel.
    """
    kernel, p = _kernel_and_arity(a, basis.d)
    if N != basis.N:
        raise ShapeError("particle number does not match basis")
    if p > N:
        raise BadArity(f"arity {p} exceeds N={N}")
    if check and p > 1:
        # either P_S a P_S = a or a commutes with slot permutations (e.g. a = I)
        tol = 1e-12 * max(1.0, np.abs(kernel).max())
        P = symmetrize(p, basis.d)
        if (np.max(np.abs(P @ kernel @ P - kernel), initial=0.0) > tol
                and np.max(np.abs(exchange_symmetrize(kernel, p, basis.d) - kernel), initial=0.0) > tol):
            raise NotSymmetric("observable kernel is neither symmetric nor permutation invariant")
    coef = math.factorial(N - p) / math.factorial(N)
    return coef * _lift(kernel, p, basis)


# ---------------------------------------------------------------------------
# Symmetric-subspace isometries and compressed kernels
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _isometry(d: int, M: int) -> np.ndarray:
    basis = occupation_basis(d, M)
    check_size(d**M, len(basis))
    W = np.zeros((d**M, len(basis)))
    if M == 0:
        W[0, 0] = 1.0
    else:
        # column |n> = (1/sqrt(M)) sum_y (W_{M-1} a_y |n>) (x) |y>
        prev = _isometry(d, M - 1)
        for y in range(d):
            A = _annihilator(d, M, y)
            W[y::d, :] += prev @ A
        W /= math.sqrt(M)
    W.setflags(write=False)
    return W


def symmetric_isometry(d: int, M: int) -> np.ndarray:
    """W with W^dagger W = I and W W^dagger = P_S^M; columns are the basis |n>."""
    return np.array(_isometry(d, M))


def compress(kernel, M: int, d: int) -> np.ndarray:
    """W^dagger a W: the restriction of a symmetric kernel to Sym^M."""
    W = _isometry(d, M)
    return W.T @ as_matrix(kernel) @ W


def expand(ck, M: int, d: int) -> np.ndarray:
    """W c W^dagger: the full-tensor kernel of a compressed symmetric kernel."""
    W = _isometry(d, M)
    return W @ np.asarray(ck, dtype=complex) @ W.T


@lru_cache(maxsize=256)
def _append_map(d: int, m: int) -> np.ndarray:
    D_in = basis_dimension(d, m)
    F = np.zeros((basis_dimension(d, m + 1), D_in * d))
    for x in range(d):
        F[:, x::d] = _annihilator(d, m + 1, x).T
    F /= math.sqrt(m + 1)
    F.setflags(write=False)
    return F


def append_map(d: int, m: int) -> np.ndarray:
    """W_{m+1}^dagger (W_m (x) I): columns indexed by (n, x), value a^dagger_x|n>/sqrt(m+1)."""
    return np.array(_append_map(d, m))


def append_pair_map(V, d: int, m: int) -> np.ndarray:
    """W_{m+1}^dagger (I^{m-1} (x) V)(W_m (x) I) for m >= 1.

    Column (n, x) equals (1/(m sqrt(m+1))) sum V_{(y'x'),(y x)} a+_{y'} a+_{x'} a_y |n>.
    """
    if m < 1:
        raise BadArity("pair insertion needs at least one existing particle")
    V = as_matrix(V)
    Vt = V.reshape(d, d, d, d)                          # [y', x', y, x]
    D_in = basis_dimension(d, m)
    D_out = basis_dimension(d, m + 1)
    G = np.zeros((D_out, D_in, d), dtype=complex)
    for y in range(d):
        A = _annihilator(d, m, y)                       # D_{m-1} x D_m
        for yp in range(d):
            for xp in range(d):
                coeff = Vt[yp, xp, y, :]                 # over x
                if not np.any(coeff):
                    continue
                chain = _annihilator(d, m + 1, xp).T @ _annihilator(d, m, yp).T @ A
                G += chain[:, :, None] * coeff[None, None, :]
    G /= m * math.sqrt(m + 1)
    return G.reshape(D_out, D_in * d)


@lru_cache(maxsize=256)
def _split(d: int, m: int, N: int) -> np.ndarray:
    """Isometry Sym^N -> Sym^m (x) Sym^{N-m} induced by the tensor split."""
    bN = occupation_basis(d, N)
    bm = occupation_basis(d, m)
    br = occupation_basis(d, N - m)
    Q = np.zeros((len(bm) * len(br), len(bN)))

    def mult(occ):
        out = math.factorial(sum(occ))
        for k in occ:
            out //= math.factorial(k)
        return out

    for j, n in enumerate(bN.states):
        mn = mult(n)
        for i, k in enumerate(bm.states):
            rest = tuple(a - b for a, b in zip(n, k))
            if min(rest) < 0:
                continue
            Q[i * len(br) + br.position(rest), j] = math.sqrt(mult(k) * mult(rest) / mn)
    Q.setflags(write=False)
    return Q


def split_isometry(d: int, m: int, N: int) -> np.ndarray:
    if not 0 <= m <= N:
        raise BadArity(f"cannot split {N} particles into {m} + {N - m}")
    return np.array(_split(d, m, N))


def embed_compressed(ck, m: int, N: int, d: int) -> np.ndarray:
    """P_S^N (c (x) I) P_S^N in the N-particle basis, for c given on Sym^m."""
    if m > N:
        raise BadArity(f"arity {m} exceeds N={N}")
    Q = _split(d, m, N)
    D_rest = basis_dimension(d, N - m)
    ck = np.asarray(ck, dtype=complex)
    Qt = Q.reshape(ck.shape[0], D_rest, -1)
    return np.einsum("irk,ij,jrl->kl", Qt, ck, Qt)


def product_state_compressed(rho, M: int) -> np.ndarray:
    """W_M^dagger rho^{(x)M} W_M, built recursively without forming rho^{(x)M}."""
    rho = as_matrix(rho)
    d = rho.shape[0]
    S = np.ones((1, 1), dtype=complex)
    for m in range(M):
        F = _append_map(d, m)
        S = F @ np.kron(S, rho) @ F.T
    return S


def product_vector_compressed(psi, M: int) -> np.ndarray:
    """Coordinates of psi^{(x)M} in the occupation basis."""
    psi = np.asarray(psi, dtype=complex)
    d = psi.shape[0]
    basis = occupation_basis(d, M)
    out = np.empty(len(basis), dtype=complex)
    for i, occ in enumerate(basis.states):
        mult = math.factorial(M)
        amp = 1.0 + 0j
        for k, n in enumerate(occ):
            mult //= math.factorial(n)
            amp *= psi[k] ** n
        out[i] = math.sqrt(mult) * amp
    return out


# ---------------------------------------------------------------------------
# Projected product states
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SymmetricNBodyState:
    """P_S rho_N P_S in the occupation basis of a fixed single-particle frame.

    ``frame`` holds the single-particle unitary whose columns define the modes.
    """
    basis: OccupationBasis
    matrix: np.ndarray
    frame: np.ndarray

    @property
    def mass(self) -> float:
        return float(np.trace(self.matrix).real)


def rho_eigenframe(rho) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and eigenvectors of a density matrix."""
    rho = require_hermitian(rho, "rho")
    w, U = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    order = np.argsort(-w, kind="stable")
    return w[order], U[:, order]


def project_product_state(rho, N: int) -> SymmetricNBodyState:
    """P_S rho^{(x)N} P_S, diagonal in the eigenbasis of rho with entries prod_k lam_k^{n_k}."""
    rho = as_matrix(rho)
    if not is_hermitian(rho):
        raise NotHermitian("rho is not Hermitian")
    lam, U = rho_eigenframe(rho)
    if lam[-1] < -PSD_TOL:
        raise NotPSD(f"rho has negative eigenvalue {lam[-1]:.3e}")
    lam = np.clip(lam, 0.0, None)
    D = basis_dimension(rho.shape[0], N)
    check_size(D, D)
    basis = occupation_basis(rho.shape[0], N)
    occ = np.array(basis.states, dtype=float)
    diag = np.prod(lam[None, :] ** occ, axis=1)  # 0**0 = 1
    return SymmetricNBodyState(basis, np.diag(diag).astype(complex), U)


def rotate_one_body(h, U) -> np.ndarray:
    return U.conj().T @ as_matrix(h) @ U


def rotate_kernel(kernel, U, p: int) -> np.ndarray:
    """(U^{(x)p})^dagger a U^{(x)p}."""
    Up = np.ones((1, 1), dtype=complex)
    for _ in range(p):
        Up = np.kron(Up, U)
    return Up.conj().T @ as_matrix(kernel) @ Up
