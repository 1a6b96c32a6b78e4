"""Tree and loop insertions, the Dyson cascade, and the checks that tie them together.

Kernels of arity m that live on the symmetric subspace are stored compressed,
as W_m^dagger c W_m on Sym^m. With F = W_{m+1}^dagger (W_m (x) I) and
G = W_{m+1}^dagger (I^{m-1} (x) V)(W_m (x) I) the tree insertion reads

    X_m(c) = m (i/hbar) (G (c (x) I) F^dagger - F (c (x) I) G^dagger),

so no d^m x d^m matrix is ever formed inside the cascade.

The cascade kernels solve

    dc_n/dt = (i/hbar)[H0, c_n] + X_{p+n-1}(c_{n-1}),  c_0(0) = a,  c_n(0) = 0,

whose solution is the simplex integral over t >= t_1 >= ... >= t_n >= 0 of
X_{p+n-1, t_n} ... X_{p, t_1}(a_t).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ArityCapExceeded, BadArity, InstanceTooLarge, ShapeError
from .fock import (
    append_map,
    append_pair_map,
    basis_dimension,
    compress,
    embed_compressed,
    expand,
    occupation_basis,
    product_state_compressed,
    rho_eigenframe,
    second_quantize_1body,
)
from .poisson import PObservable, bracket_kernel, evaluate
from .tensor_core import (
    as_matrix,
    check_size,
    commutator,
    embed_pair,
    get_element_cap,
    kron_power,
    symmetrize,
)

# (t/2tau)^{L+1} 2^{p-1} below this picks the default depth
TRUNCATION_TOL = 1e-8

# Brute-force checks refuse N-body spaces larger than d^N = this
BRUTE_FORCE_DIM = 2**8


# ---------------------------------------------------------------------------
# Free evolution
# ---------------------------------------------------------------------------

def free_unitary(model, t: float) -> np.ndarray:
    """exp(i h t / hbar)."""
    return model.h_spectrum.unitary(t, model.hbar)


def free_evolve_kernel(kernel, model, t: float, p: int) -> np.ndarray:
    """a_t = e^{iH0 t/hbar} a e^{-iH0 t/hbar} on p slots."""
    if t == 0:
        return as_matrix(kernel).copy()
    Up = kron_power(free_unitary(model, t), p)
    return Up @ as_matrix(kernel) @ Up.conj().T


def free_evolved_potential(model, t: float) -> np.ndarray:
    """V_t = propagate(h (x) I + I (x) h, t, hbar, V)."""
    return free_evolve_kernel(model.V, model, t, 2)


def classical_potential(model, t: float) -> PObservable:
    """Kernel (1/2) V_t of the free-evolved classical potential."""
    return PObservable(0.5 * free_evolved_potential(model, t), 2)


# ---------------------------------------------------------------------------
# Dense insertions (reference scale)
# ---------------------------------------------------------------------------

def _kernel(a):
    if isinstance(a, PObservable):
        return a.kernel, a.p
    raise ShapeError("expected a PObservable")


def tree_apply(a: PObservable, model, r: float = 0.0) -> PObservable:
    """X_{p,r}(a) = p P_S (i/hbar)[V_r^{p,p+1}, a (x) I] P_S, arity p+1."""
    k, p = _kernel(a)
    d = model.d
    if k.shape[0] != d**p:
        raise ShapeError("observable and model act on different spaces")
    check_size(d ** (p + 1), d ** (p + 1))
    Vr = free_evolved_potential(model, r)
    Vp = np.kron(np.eye(d ** (p - 1)), Vr)
    P = symmetrize(p + 1, d)
    out = p * (1j / model.hbar) * (P @ commutator(Vp, np.kron(k, np.eye(d))) @ P)
    return PObservable(out, p + 1)


def loop_apply(a: PObservable, model, r: float, N: int) -> PObservable:
    """Y_{p,r}(a) = (p(p-1)/2N) P_S (i/hbar)[V_r^{p-1,p}, a] P_S, arity p."""
    k, p = _kernel(a)
    d = model.d
    if p < 2:
        return PObservable(np.zeros_like(k), p)
    Vr = np.kron(np.eye(d ** (p - 2)), free_evolved_potential(model, r))
    P = symmetrize(p, d)
    coef = p * (p - 1) / (2 * N)
    return PObservable(coef * (1j / model.hbar) * (P @ commutator(Vr, k) @ P), p)


@dataclass(frozen=True)
class TreeInsertion:
    model: object

    def __call__(self, a: PObservable, r: float = 0.0) -> PObservable:
        return tree_apply(a, self.model, r)


@dataclass(frozen=True)
class LoopInsertion:
    model: object
    N: int

    def __call__(self, a: PObservable, r: float = 0.0) -> PObservable:
        return loop_apply(a, self.model, r, self.N)


def _lift_dense(kernel, p: int, N: int, d: int) -> np.ndarray:
    """P_S^N (a (x) I^{N-p}) P_S^N on the full tensor space."""
    P = symmetrize(N, d)
    return P @ np.kron(kernel, np.eye(d ** (N - p))) @ P


def _require_brute(d: int, N: int):
    if d**N > BRUTE_FORCE_DIM:
        raise InstanceTooLarge(f"brute-force check needs d^N <= {BRUTE_FORCE_DIM}, got {d**N}")


def commutator_decomposition_check(a: PObservable, model, r: float, N: int) -> float:
    """Operator-norm residual of (i/hbar)[V_{N,r}, phi_p(a)] - T_r(phi_p(a)) - L_r(phi_p(a))."""
    d, p = model.d, a.p
    _require_brute(d, N)
    if p > N:
        raise BadArity(f"arity {p} exceeds N={N}")
    Vr = free_evolved_potential(model, r)
    VN = sum(embed_pair(Vr, i, j, N, d) for i in range(N) for j in range(i + 1, N)) / N
    A = _lift_dense(a.kernel, p, N, d)
    lhs = (1j / model.hbar) * commutator(VN, A)
    rhs = np.zeros_like(lhs)
    if p < N:
        rhs += (N - p) / N * _lift_dense(tree_apply(a, model, r).kernel, p + 1, N, d)
    rhs += _lift_dense(loop_apply(a, model, r, N).kernel, p, N, d)
    return float(np.linalg.norm(lhs - rhs, 2))


# ---------------------------------------------------------------------------
# Compressed insertions and the cascade
# ---------------------------------------------------------------------------

@lru_cache(maxsize=128)
def _free_generator(h_bytes: bytes, d: int, m: int) -> np.ndarray:
    h = np.frombuffer(h_bytes, dtype=complex).reshape(d, d)
    return second_quantize_1body(h, occupation_basis(d, m))


class CompressedTree:
    """X_m on compressed kernels for one (V, hbar), with per-arity maps cached."""

    def __init__(self, V, d: int, hbar: float):
        self.V = as_matrix(V)
        self.d = d
        self.hbar = hbar
        self._maps = {}

    def maps(self, m: int):
        if m not in self._maps:
            self._maps[m] = (append_map(self.d, m), append_pair_map(self.V, self.d, m))
        return self._maps[m]

    def __call__(self, c: np.ndarray, m: int) -> np.ndarray:
        F, G = self.maps(m)
        cI = np.kron(c, np.eye(self.d))
        return m * (1j / self.hbar) * (G @ cI @ F.T - F @ cI @ G.conj().T)


def quantum_coefficient(N: int, p: int, n: int) -> float:
    """(N-p)! / ((N-p-n)! N^n); zero once n > N-p."""
    out = 1.0
    for j in range(n):
        out *= (N - p - j) / N
    return out


def auto_depth(t: float, tau: float, p: int, tol: float = TRUNCATION_TOL, max_depth: int = 200) -> int:
    """Smallest L with (t/2tau)^{L+1} 2^{p-1} <= tol."""
    q = t / (2 * tau)
    if q == 0:
        return 0
    if q >= 1:
        raise ValueError("geometric tail does not decay for t >= 2 tau")
    L = max(0, math.ceil((math.log(tol) - (p - 1) * math.log(2)) / math.log(q) - 1))
    while L > 0 and q ** L * 2 ** (p - 1) <= tol:
        L -= 1
    while q ** (L + 1) * 2 ** (p - 1) > tol:
        L += 1
    return min(L, max_depth)


@dataclass(frozen=True)
class DysonCascade:
    """Compressed kernels c_n(t) on Sym^{p+n}, n = 0..L."""
    p: int
    L: int
    t: float
    d: int
    steps: int
    kernels: tuple

    def kernel(self, n: int) -> PObservable:
        """Full-tensor kernel of c_n (reference scale only)."""
        return PObservable(expand(self.kernels[n], self.p + n, self.d), self.p + n)

    def term(self, n: int, rho) -> complex:
        """Tr(c_n rho^{(x)(p+n)})."""
        S = product_state_compressed(rho, self.p + n)
        return complex(np.sum(self.kernels[n].T * S))

    def terms(self, rho) -> list[complex]:
        rho = as_matrix(rho)
        out = []
        S = product_state_compressed(rho, self.p)
        for n, c in enumerate(self.kernels):
            if n:
                F = append_map(self.d, self.p + n - 1)
                S = F @ np.kron(S, rho) @ F.T
            out.append(complex(np.sum(c.T * S)))
        return out


def _default_steps(model, t: float, top: int) -> int:
    # keep dt * (spectral width of the generators) small enough for RK4
    spread = float(np.ptp(model.h_spectrum.eigenvalues)) if model.d > 1 else 0.0
    rate = (top * spread + 2 * top * model.v_inf) / model.hbar
    return max(64, math.ceil(abs(t) * rate / 0.02))


def dyson_terms(a: PObservable, t: float, L: int, model, steps: int | None = None) -> DysonCascade:
    """Cascade kernels c_0..c_L at time t, integrated with RK4 in compressed form."""
    p, d = a.p, model.d
    if L < 0:
        raise ValueError("depth must be nonnegative")
    top = p + L
    if d**top > get_element_cap():
        raise ArityCapExceeded(f"arity {top} gives d^{top} = {d**top} above the element cap")
    if a.kernel.shape[0] != d**p:
        raise ShapeError("observable and model act on different spaces")
    P = symmetrize(p, d)
    ka = P @ a.kernel @ P
    c = [compress(ka, p, d)] + [np.zeros((basis_dimension(d, p + n),) * 2, dtype=complex) for n in range(1, L + 1)]
    h_bytes = np.ascontiguousarray(model.h, dtype=complex).tobytes()
    H0 = [_free_generator(h_bytes, d, p + n) for n in range(L + 1)]
    tree = CompressedTree(model.V, d, model.hbar)
    ih = 1j / model.hbar

    def rhs(cs):
        out = []
        for n, cn in enumerate(cs):
            val = ih * (H0[n] @ cn - cn @ H0[n])
            if n:
                val = val + tree(cs[n - 1], p + n - 1)
            out.append(val)
        return out

    if steps is None:
        steps = _default_steps(model, t, top) if t else 0
    dt = t / steps if steps else 0.0
    for _ in range(steps):
        k1 = rhs(c)
        k2 = rhs([x + 0.5 * dt * k for x, k in zip(c, k1)])
        k3 = rhs([x + 0.5 * dt * k for x, k in zip(c, k2)])
        k4 = rhs([x + dt * k for x, k in zip(c, k3)])
        c = [x + dt / 6 * (q1 + 2 * q2 + 2 * q3 + q4) for x, q1, q2, q3, q4 in zip(c, k1, k2, k3, k4)]
    return DysonCascade(p, L, float(t), d, steps, tuple(c))


def symmetric_marginal_diagonal(lam, m: int, N: int) -> np.ndarray:
    """Diagonal of the m-body marginal of P_S rho^{(x)N} P_S in the eigenframe of rho.

    Entry k (an m-particle occupation vector) is
    sum_j lam^{k+j} C(m; k) C(N-m; j) / C(N; k+j), j over (N-m)-particle occupations,
    with C the multinomial coefficient.
    """
    from scipy.special import gammaln

    lam = np.clip(np.asarray(lam, dtype=float), 0.0, None)
    d = lam.shape[0]
    K = np.array(occupation_basis(d, m).states, dtype=float)
    J = np.array(occupation_basis(d, N - m).states, dtype=float)
    logC = lambda occ, M: gammaln(M + 1) - gammaln(occ + 1).sum(axis=-1)
    KJ = K[:, None, :] + J[None, :, :]
    w = np.exp(logC(K, m)[:, None] + logC(J, N - m)[None, :] - logC(KJ, N))
    powers = np.prod(lam ** KJ, axis=-1)          # 0**0 = 1
    return np.sum(w * powers, axis=1)


def gammaH_expectation(cascade: DysonCascade, rho, N: int) -> complex:
    """sum_n coefficient_n Tr(phi_{p+n}(c_n) P_S rho^{(x)N} P_S), n <= min(L, N-p)."""
    p = cascade.p
    if p > N:
        raise BadArity(f"arity {p} exceeds N={N}")
    lam, U = rho_eigenframe(as_matrix(rho))
    total = 0j
    for n in range(min(cascade.L, N - p) + 1):
        m = p + n
        G = product_state_compressed(U, m)      # U^{(x)m} restricted to Sym^m
        diag = np.einsum("ki,kl,li->i", G.conj(), cascade.kernels[n], G)
        total += quantum_coefficient(N, p, n) * np.dot(diag, symmetric_marginal_diagonal(lam, m, N))
    return complex(total)


def gammaH_expectation_embedded(cascade: DysonCascade, rho, N: int) -> complex:
    """Same quantity through the explicit N-particle embedding (small N reference)."""
    p, d = cascade.p, cascade.d
    S = product_state_compressed(rho, N)
    total = 0j
    for n in range(min(cascade.L, N - p) + 1):
        A = embed_compressed(cascade.kernels[n], p + n, N, d)
        total += quantum_coefficient(N, p, n) * np.sum(A.T * S)
    return complex(total)


def classical_dyson_expectation(cascade: DysonCascade, rho) -> complex:
    """sum_n Tr(c_n rho^{(x)(p+n)})."""
    return complex(sum(cascade.terms(rho)))


# ---------------------------------------------------------------------------
# Quadrature oracles
# ---------------------------------------------------------------------------

def _gauss(n: int, lo: float, hi: float):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * (hi - lo) * w


def simplex_term(a: PObservable, model, t: float, n: int, order: int = 24) -> PObservable:
    """Nested Gauss-Legendre value of the n-th simplex integral (dense kernels, n <= 2)."""
    at = PObservable(free_evolve_kernel(a.kernel, model, t, a.p), a.p)
    if n == 0:
        return at
    if n == 1:
        xs, ws = _gauss(order, 0.0, t)
        acc = sum(w * tree_apply(at, model, x).kernel for x, w in zip(xs, ws))
        return PObservable(acc, a.p + 1)
    if n == 2:
        # t >= t1 >= t2 >= 0: inner X_{t1} first, outer X_{t2}
        xs, ws = _gauss(order, 0.0, t)
        acc = 0
        for t1, w1 in zip(xs, ws):
            inner = tree_apply(at, model, t1)
            ys, vs = _gauss(order, 0.0, t1)
            acc = acc + w1 * sum(v * tree_apply(inner, model, t2).kernel for t2, v in zip(ys, vs))
        return PObservable(acc, a.p + 2)
    raise ValueError("quadrature oracle supports n <= 2")


def cascade_vs_quadrature(a: PObservable, model, t: float, n_max: int = 2, order: int = 24) -> float:
    """Largest operator-norm gap between cascade kernels and simplex quadrature."""
    cascade = dyson_terms(a, t, n_max, model)
    gap = 0.0
    for n in range(n_max + 1):
        ref = simplex_term(a, model, t, n, order).kernel
        gap = max(gap, float(np.linalg.norm(cascade.kernel(n).kernel - ref, 2)))
    return gap


def gammaH_dense(a: PObservable, model, t: float, rho, N: int, order: int = 24) -> complex:
    """Brute-force Tr(Gamma^H_t(A_t) rho^{(x)N}) from quadrature kernels (N - p <= 2)."""
    d, p = model.d, a.p
    _require_brute(d, N)
    if N - p > 2:
        raise ValueError("dense oracle supports N - p <= 2")
    R = kron_power(as_matrix(rho), N)
    total = 0j
    for n in range(N - p + 1):
        k = simplex_term(a, model, t, n, order).kernel
        A = _lift_dense(k, p + n, N, d)
        total += quantum_coefficient(N, p, n) * np.trace(A @ R)
    return complex(total)


# ---------------------------------------------------------------------------
# Multi-tree coefficients
# ---------------------------------------------------------------------------

def _quantum_chain(a_t: np.ndarray, p: int, model, times, N: int) -> np.ndarray:
    """Kernel b with T_{t_n}...T_{t_1}(phi_p(a_t)) = phi_{p+n}(b), built slot by slot."""
    d = model.d
    b, q = a_t, p
    for r in times:
        Vr = free_evolved_potential(model, r)
        acc = np.zeros((d ** (q + 1),) * 2, dtype=complex)
        bI = np.kron(b, np.eye(d))
        for i in range(q):
            Vi = embed_pair(Vr, i, q, q + 1, d)
            acc += commutator(Vi, bI)
        b = (N - q) / N * (1j / model.hbar) * acc
        q += 1
    return b


def multit_coefficient_check(a: PObservable, n: int, N: int, times, rho, model) -> float:
    """|quantum chain on rho^{(x)N} - coefficient * classical bracket chain|."""
    d, p = model.d, a.p
    times = tuple(float(x) for x in times)
    if len(times) != n:
        raise ValueError("need one time per insertion")
    if n > 2:
        raise ValueError("reference scale supports n <= 2")
    _require_brute(d, N)
    if p + n > N:
        raise BadArity("chain leaves the N-particle space")
    t = max(times, default=0.0)
    a_t = free_evolve_kernel(a.kernel, model, t, p)
    b = _quantum_chain(a_t, p, model, times, N)
    R = kron_power(as_matrix(rho), N)
    quantum = np.trace(_lift_dense(b, p + n, N, d) @ R)
    c = PObservable(a_t, p)
    for r in times:
        c = bracket_kernel(classical_potential(model, r), c, model.hbar)
    classical = quantum_coefficient(N, p, n) * evaluate(c, rho)
    return float(abs(quantum - classical))


def duality_residual(a: PObservable, model, t: float, rho) -> float:
    """|Tr(X_{p,t}(a) rho^{(x)p+1}) - {V_t^c, A}(rho)|."""
    lhs = evaluate(tree_apply(a, model, t), rho)
    rhs = evaluate(bracket_kernel(classical_potential(model, t), a, model.hbar), rho)
    return float(abs(lhs - rhs))
