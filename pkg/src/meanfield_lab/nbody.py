"""Exact N-boson von Neumann dynamics on the symmetric subspace.

H_N = sum_i h_i + (1/(2N)) sum_{i != j} V_ij, with the same sign of h as in the
Hartree generator. The computation runs in the eigenframe of rho_0, where the
projected product state is diagonal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadArity, BasisMismatch
from .fock import (
    OccupationBasis,
    SymmetricNBodyState,
    basis_dimension,
    embed_p_observable,
    occupation_basis,
    product_state_compressed,
    project_product_state,
    rotate_kernel,
    rotate_one_body,
    second_quantize_1body,
    second_quantize_2body,
)
from .tensor_core import HermitianSpectrum, as_matrix, check_size, eigh_hermitian


@dataclass(frozen=True)
class NBodyHamiltonian:
    basis: OccupationBasis
    H0: np.ndarray
    HV: np.ndarray
    hbar: float
    frame: np.ndarray
    spectrum: HermitianSpectrum

    @property
    def H(self) -> np.ndarray:
        return self.H0 + self.HV

    @property
    def d(self) -> int:
        return self.basis.d

    @property
    def N(self) -> int:
        return self.basis.N


def build_hamiltonian(model, N: int, frame=None) -> NBodyHamiltonian:
    """Second-quantized H_N with modes given by the columns of ``frame``."""
    d = model.d
    U = np.eye(d, dtype=complex) if frame is None else as_matrix(frame)
    D = basis_dimension(d, N)
    check_size(D, D)
    basis = occupation_basis(d, N)
    H0 = second_quantize_1body(rotate_one_body(model.h, U), basis)
    HV = second_quantize_2body(rotate_kernel(model.V, U, 2), 1.0 / N, basis)
    H0 = 0.5 * (H0 + H0.conj().T)
    HV = 0.5 * (HV + HV.conj().T)
    return NBodyHamiltonian(basis, H0, HV, model.hbar, U, eigh_hermitian(H0 + HV))


def _check_match(H: NBodyHamiltonian, state: SymmetricNBodyState):
    if H.basis != state.basis or not np.allclose(H.frame, state.frame, atol=1e-14):
        raise BasisMismatch("state and Hamiltonian use different bases or frames")


def evolve_state(H: NBodyHamiltonian, state0: SymmetricNBodyState, t: float) -> SymmetricNBodyState:
    """exp(-iHt/hbar) rho exp(iHt/hbar)."""
    _check_match(H, state0)
    U = H.spectrum.unitary(-t, H.hbar)
    rho = U @ state0.matrix @ U.conj().T
    return SymmetricNBodyState(state0.basis, 0.5 * (rho + rho.conj().T), state0.frame)


def embed_in_frame(a, basis: OccupationBasis, frame) -> np.ndarray:
    kernel = getattr(a, "kernel", a)
    p = getattr(a, "p", 1)
    if p > basis.N:
        raise BadArity(f"arity {p} exceeds N={basis.N}")
    return embed_p_observable(rotate_kernel(kernel, frame, p), basis.N, basis, check=False) if p else None


def expectation(a, state: SymmetricNBodyState) -> complex:
    """Tr(phi_p(a) state)."""
    A = embed_in_frame(a, state.basis, state.frame)
    return complex(np.sum(A.T * state.matrix))


class NBodyDynamics:
    """Reusable propagator for one (model, rho_0, N) triple."""

    def __init__(self, model, rho0, N: int):
        self.model = model
        self.N = N
        self.state0 = project_product_state(as_matrix(rho0), N)
        self.H = build_hamiltonian(model, N, self.state0.frame)

    def state(self, t: float) -> SymmetricNBodyState:
        return evolve_state(self.H, self.state0, t)

    def expectation(self, a, t: float) -> complex:
        return expectation(a, self.state(t))

    def expectations(self, a, times) -> list[complex]:
        A = embed_in_frame(a, self.state0.basis, self.state0.frame)
        out = []
        for t in times:
            rho = self.state(t).matrix
            out.append(complex(np.sum(A.T * rho)))
        return out


def product_state_in_frame(rho0, H: NBodyHamiltonian) -> SymmetricNBodyState:
    """P_S rho0^{(x)N} P_S in the mode frame of ``H`` (diagonal only in the eigenframe of rho0)."""
    rho = as_matrix(rho0)
    if rho.shape != (H.d, H.d):
        raise BasisMismatch("rho0 does not match the one-particle dimension of H")
    state = project_product_state(rho, H.N)          # validates Hermitian and PSD
    if np.allclose(state.frame, H.frame, atol=1e-14):
        return state
    matrix = product_state_compressed(rotate_one_body(rho, H.frame), H.N)
    return SymmetricNBodyState(H.basis, 0.5 * (matrix + matrix.conj().T), H.frame)


def heisenberg_expectation(a, rho0, H: NBodyHamiltonian, t: float) -> complex:
    """Tr(A(t) rho0^{(x)N}) = Tr(A rho_N(t)) with A = phi_p(a)."""
    return expectation(a, evolve_state(H, product_state_in_frame(rho0, H), t))
