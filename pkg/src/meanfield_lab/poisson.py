"""Classical field observables A(rho) = Tr(a rho^{(x)p}) and their Poisson bracket.

    {A, B}(rho) = -(i/hbar) Tr(A' rho B' - B' rho A'),

with A' the Frechet derivative, p Tr_{1..p-1}(a (rho^{(x)p-1} (x) I)).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NotSymmetric, ShapeError
from .tensor_core import (
    as_matrix,
    contract_first_slot,
    contract_last_slot,
    exchange_symmetrize,
    infer_arity,
    op_norm,
    symmetrize,
)

SYMMETRY_TOL = 1e-12


class SymmetrizedKernelWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PObservable:
    """A p-particle kernel acting on (C^d)^{(x)p}."""
    kernel: np.ndarray
    p: int
    symmetrized_on_construction: bool = False

    def __post_init__(self):
        k = as_matrix(self.kernel)
        if self.p < 1:
            raise ShapeError("arity must be at least 1")
        d = round(k.shape[0] ** (1.0 / self.p))
        if k.shape[0] != k.shape[1] or d**self.p != k.shape[0]:
            raise ShapeError(f"kernel of shape {k.shape} is not a {self.p}-slot operator")
        object.__setattr__(self, "kernel", k)

    @property
    def d(self) -> int:
        return round(self.kernel.shape[0] ** (1.0 / self.p))

    @property
    def norm(self) -> float:
        return op_norm(self.kernel)

    @property
    def symmetric(self) -> bool:
        """P_S a P_S = a (the kernel lives on the symmetric subspace)."""
        if self.p == 1:
            return True
        P = symmetrize(self.p, self.d)
        return _close(P @ self.kernel @ P, self.kernel)

    @property
    def exchange_symmetric(self) -> bool:
        """U a U^dagger = a for every slot permutation U."""
        if self.p == 1:
            return True
        return _close(exchange_symmetrize(self.kernel, self.p, self.d), self.kernel)

    @classmethod
    def from_kernel(cls, kernel, p: int | None = None, d: int | None = None) -> "PObservable":
        """Build a symmetric observable, projecting with P_S if needed (with a warning)."""
        kernel = as_matrix(kernel)
        if p is None:
            if d is None:
                raise ShapeError("need either p or d")
            p = infer_arity(kernel.shape[0], d)
        obs = cls(kernel, p)
        if obs.symmetric:
            return obs
        warnings.warn("kernel projected onto the symmetric subspace", SymmetrizedKernelWarning, stacklevel=2)
        P = symmetrize(p, obs.d)
        return cls(P @ kernel @ P, p, symmetrized_on_construction=True)

    def __add__(self, other):
        _same_shape(self, other)
        return PObservable(self.kernel + other.kernel, self.p)

    def __sub__(self, other):
        _same_shape(self, other)
        return PObservable(self.kernel - other.kernel, self.p)

    def __mul__(self, c):
        return PObservable(c * self.kernel, self.p)

    __rmul__ = __mul__

    def dagger(self) -> "PObservable":
        return PObservable(self.kernel.conj().T, self.p)


def _close(a, b, tol=SYMMETRY_TOL) -> bool:
    scale = max(1.0, float(np.max(np.abs(b), initial=0.0)))
    return float(np.max(np.abs(a - b), initial=0.0)) <= tol * scale


def _same_shape(a: PObservable, b: PObservable):
    if a.p != b.p or a.kernel.shape != b.kernel.shape:
        raise ShapeError("observables differ in arity or dimension")


def _rho(rho, d: int) -> np.ndarray:
    m = as_matrix(rho)
    if m.shape != (d, d):
        raise ShapeError(f"density matrix of shape {m.shape} does not match d={d}")
    return m


def evaluate(a: PObservable, rho) -> complex:
    """Tr(a rho^{(x)p}), contracting one slot at a time."""
    r = _rho(rho, a.d)
    m = a.kernel
    for _ in range(a.p):
        m = contract_last_slot(m, r)
    return complex(m[0, 0])


def frechet(a: PObservable, rho) -> np.ndarray:
    """One-particle operator D with Tr(D xi) = d/ds A(rho + s xi) at s = 0."""
    if not a.exchange_symmetric:
        raise NotSymmetric("Frechet formula needs an exchange-symmetric kernel")
    r = _rho(rho, a.d)
    m = a.kernel
    for _ in range(a.p - 1):
        m = contract_first_slot(m, r)
    return a.p * m


def bracket_from_derivatives(da: np.ndarray, db: np.ndarray, rho, hbar: float) -> complex:
    r = as_matrix(rho)
    return complex(-1j / hbar * np.trace(da @ r @ db - db @ r @ da))


def bracket_eval(a: PObservable, b: PObservable, rho, hbar: float = 1.0) -> complex:
    """{A, B}(rho)."""
    return bracket_from_derivatives(frechet(a, rho), frechet(b, rho), rho, hbar)


def bracket_kernel(a: PObservable, b: PObservable, hbar: float = 1.0, bosonic: bool = False) -> PObservable:
    """Kernel c of arity p+q-1 whose classical observable is {A, B}.

    The raw contraction (i/hbar) p q [a (x) I^{q-1}, I^{p-1} (x) b] shares slot p.
    By default it is averaged over slot permutations, which reproduces the bracket
    for every density matrix. ``bosonic=True`` projects with P_S^{p+q-1} instead;
    that kernel agrees with the bracket on pure states.
    """
    if a.d != b.d:
        raise ShapeError("observables act on different one-particle spaces")
    for x in (a, b):
        if not x.exchange_symmetric:
            raise NotSymmetric("bracket needs exchange-symmetric kernels")
    d, p, q = a.d, a.p, b.p
    n = p + q - 1
    A = np.kron(a.kernel, np.eye(d ** (q - 1)))
    B = np.kron(np.eye(d ** (p - 1)), b.kernel)
    raw = (1j / hbar) * p * q * (A @ B - B @ A)
    if bosonic:
        P = symmetrize(n, d)
        return PObservable(P @ raw @ P, n)
    return PObservable(exchange_symmetrize(raw, n, d), n)


# ---------------------------------------------------------------------------
# Wave-function form on rank-one states
# ---------------------------------------------------------------------------

def wavefunction_gradients(a: PObservable, psi) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of A(psi, psibar) = <psi^p | a | psi^p> in psi and in psibar.

    psi and psibar are independent variables; every slot of the multilinear
    form is differentiated on its own, so no kernel symmetry is assumed.
    """
    psi = np.asarray(psi, dtype=complex)
    d, p = a.d, a.p
    t = a.kernel.reshape((d,) * (2 * p))
    vecs = [psi.conj()] * p + [psi] * p
    grads = []
    for keep in range(2 * p):
        operands = [t, list(range(2 * p))]
        for ax in range(2 * p):
            if ax != keep:
                operands += [vecs[ax], [ax]]
        grads.append(np.einsum(*operands, [keep]))
    grad_bar = np.sum(grads[:p], axis=0)
    grad_psi = np.sum(grads[p:], axis=0)
    return grad_psi, grad_bar


def rank_one_reduction_check(a: PObservable, b: PObservable, psi, hbar: float = 1.0) -> tuple[complex, complex]:
    """Bracket at P_psi by the density-matrix formula and by the wave-function formula."""
    psi = np.asarray(psi, dtype=complex)
    P = np.outer(psi, psi.conj())
    via_rho = bracket_eval(a, b, P, hbar)
    da, dab = wavefunction_gradients(a, psi)
    db, dbb = wavefunction_gradients(b, psi)
    via_psi = complex(1j / hbar * (np.sum(da * dbb) - np.sum(dab * db)))
    return via_rho, via_psi


# ---------------------------------------------------------------------------
# Hamiltonian functional
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassicalHamiltonian:
    """H(rho) = Tr(h rho) + (1/2) Tr(V rho (x) rho)."""
    h_part: PObservable
    v_part: PObservable
    hbar: float = 1.0

    @classmethod
    def from_model(cls, model) -> "ClassicalHamiltonian":
        return cls(PObservable(model.h, 1), PObservable(0.5 * model.V, 2), model.hbar)

    def __call__(self, rho) -> float:
        return (evaluate(self.h_part, rho) + evaluate(self.v_part, rho)).real

    def derivative(self, rho) -> np.ndarray:
        return frechet(self.h_part, rho) + frechet(self.v_part, rho)

    def bracket(self, a: PObservable, rho) -> complex:
        """{H, A}(rho)."""
        return bracket_from_derivatives(self.derivative(rho), frechet(a, rho), rho, self.hbar)


def observable_norm_bound_ok(a: PObservable, rho, tol: float = 1e-12) -> bool:
    return abs(evaluate(a, rho)) <= a.norm * (1 + tol) + tol


__all__ = [
    "PObservable",
    "ClassicalHamiltonian",
    "SymmetrizedKernelWarning",
    "evaluate",
    "frechet",
    "bracket_eval",
    "bracket_kernel",
    "bracket_from_derivatives",
    "wavefunction_gradients",
    "rank_one_reduction_check",
]
