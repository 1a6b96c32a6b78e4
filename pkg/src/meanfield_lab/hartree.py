"""Nonlinear one-body flow  i hbar d(rho)/dt = [h + m(rho), rho].

m(rho) = Tr_2(V (I (x) rho)) is the mean field; for diagonal pair operators
V = diag(w(x, y)) it is diag(sum_y w(x, y) rho_yy).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson

from .errors import GridTooCoarse, NotPSD, PicardNoConvergence, ShapeError
from .fock import check_swap_symmetric
from .tensor_core import (
    HermitianSpectrum,
    as_matrix,
    commutator,
    eigh_hermitian,
    is_hermitian,
    op_norm,
    require_hermitian,
    trace_norm,
)

PSD_TOL = 1e-10

# Picard contraction ball radius (any R >= 2 works).
PICARD_RADIUS = 2.0


@dataclass(frozen=True)
class DensityMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        m = as_matrix(self.matrix)
        if not is_hermitian(m):
            raise ShapeError("density matrix must be Hermitian")
        if np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0] < -PSD_TOL:
            raise NotPSD("density matrix has a negative eigenvalue")
        object.__setattr__(self, "matrix", m)

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    @classmethod
    def pure(cls, psi) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))


@dataclass(frozen=True)
class InteractionModel:
    """One-body h, swap-symmetric pair operator V on C^d (x) C^d, and hbar."""
    h: np.ndarray
    V: np.ndarray
    hbar: float = 1.0
    _h_spectrum: HermitianSpectrum = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        h = require_hermitian(self.h, "h")
        d = h.shape[0]
        V = require_hermitian(self.V, "V")
        check_swap_symmetric(V, d)
        if self.hbar <= 0:
            raise ShapeError("hbar must be positive")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "_h_spectrum", eigh_hermitian(h))

    @property
    def d(self) -> int:
        return self.h.shape[0]

    @property
    def v_inf(self) -> float:
        return op_norm(self.V)

    @property
    def diagonal_pair(self) -> bool:
        return bool(np.count_nonzero(self.V - np.diag(np.diag(self.V))) == 0)

    @property
    def h_spectrum(self) -> HermitianSpectrum:
        return self._h_spectrum

    @property
    def tau(self) -> float:
        v = self.v_inf
        return math.inf if v == 0 else self.hbar / (8 * v)

    @classmethod
    def from_pair_table(cls, h, w, hbar: float = 1.0) -> "InteractionModel":
        """Diagonal pair operator with <xy|V|xy> = w[x, y]."""
        w = np.asarray(w, dtype=float)
        return cls(as_matrix(h), np.diag(w.reshape(-1)).astype(complex), hbar)

    def pair_table(self) -> np.ndarray:
        if not self.diagonal_pair:
            raise ShapeError("pair operator is not diagonal")
        return np.diag(self.V).real.reshape(self.d, self.d)

    def with_coupling(self, scale: float) -> "InteractionModel":
        return InteractionModel(self.h, scale * self.V, self.hbar)


def _mat(rho) -> np.ndarray:
    return as_matrix(rho)


def mean_field(model: InteractionModel, rho) -> np.ndarray:
    """Tr_2(V (I (x) rho))."""
    r = _mat(rho)
    d = model.d
    if model.diagonal_pair:
        w = model.pair_table()
        return np.diag(w @ np.diag(r)).astype(complex)
    Vt = model.V.reshape(d, d, d, d)
    return np.einsum("awbz,zw->ab", Vt, r)


def hartree_hamiltonian(model: InteractionModel, rho) -> np.ndarray:
    return model.h + mean_field(model, rho)


def hartree_rhs(model: InteractionModel, rho) -> np.ndarray:
    r = _mat(rho)
    return (-1j / model.hbar) * commutator(hartree_hamiltonian(model, r), r)


def energy(model: InteractionModel, rho) -> float:
    """Tr(h rho) + (1/2) Tr(V rho (x) rho)."""
    r = _mat(rho)
    val = np.trace(model.h @ r) + 0.5 * np.trace(mean_field(model, r) @ r)
    if abs(val.imag) > 1e-12 * max(1.0, abs(val.real)):
        raise ShapeError(f"energy has imaginary part {val.imag:.3e}")
    return float(val.real)


def default_step(model: InteractionModel) -> float:
    return min(1e-3, model.tau / 200)


def _rk4_step(model, r, dt):
    k1 = hartree_rhs(model, r)
    k2 = hartree_rhs(model, r + 0.5 * dt * k1)
    k3 = hartree_rhs(model, r + 0.5 * dt * k2)
    k4 = hartree_rhs(model, r + dt * k3)
    r = r + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return 0.5 * (r + r.conj().T)


def _rk4_path(model, rho0, times, dt):
    """RK4 through increasing ``times``; each segment uses equal sub-steps <= dt."""
    r = _mat(rho0).copy()
    out = []
    now = 0.0
    for t in times:
        seg = t - now
        if seg < 0:
            raise ValueError("times must be nondecreasing and >= 0")
        n = max(1, math.ceil(seg / dt - 1e-12)) if seg > 0 else 0
        for _ in range(n):
            r = _rk4_step(model, r, seg / n)
        now = t
        out.append(r.copy())
    return out


def free_flow(model: InteractionModel, rho0, t: float) -> np.ndarray:
    """exp(-iht/hbar) rho0 exp(iht/hbar)."""
    U = model.h_spectrum.unitary(-t, model.hbar)
    return U @ _mat(rho0) @ U.conj().T


def evolve_hartree(model: InteractionModel, rho0, t: float, method: str = "rk4", dt: float | None = None,
                   **picard_opts) -> DensityMatrix:
    """State of the Hartree-von Neumann flow at time t."""
    return DensityMatrix(evolve_hartree_path(model, rho0, [t], method, dt, **picard_opts)[0])


def evolve_hartree_path(model: InteractionModel, rho0, times, method: str = "rk4", dt: float | None = None,
                        **picard_opts) -> list[np.ndarray]:
    times = [float(t) for t in times]
    if any(t < 0 for t in times):
        raise ValueError("negative times are not supported")
    if model.v_inf == 0:
        return [free_flow(model, rho0, t) for t in times]
    if method == "rk4":
        order = np.argsort(times, kind="stable")
        path = _rk4_path(model, rho0, [times[i] for i in order], dt or default_step(model))
        out = [None] * len(times)
        for i, k in enumerate(order):
            out[k] = path[i]
        return out
    if method == "picard":
        return [picard_solve(model, rho0, t, **picard_opts)[-1] for t in times]
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# Duhamel / Picard formulation
# ---------------------------------------------------------------------------

def contraction_window(model: InteractionModel, radius: float = PICARD_RADIUS) -> float:
    """Length T <= hbar / (2 ||v|| R) on which the Duhamel map contracts."""
    v = model.v_inf
    return math.inf if v == 0 else model.hbar / (2 * v * radius)


def _integrand(model, traj, grid):
    # Interaction picture: sigma_{-s}([m(rho_s), rho_s]), sigma_t(X) = e^{-iht}Xe^{iht}
    out = np.empty((len(grid),) + traj[0].shape, dtype=complex)
    for k, (s, r) in enumerate(zip(grid, traj)):
        U = model.h_spectrum.unitary(s, model.hbar)
        out[k] = U @ commutator(mean_field(model, r), r) @ U.conj().T
    return out


def _csimpson(f, grid):
    # scipy casts complex input to real here, so integrate the parts separately
    re = cumulative_simpson(f.real, x=grid, axis=0, initial=0)
    im = cumulative_simpson(f.imag, x=grid, axis=0, initial=0)
    return re + 1j * im


def duhamel_map(model: InteractionModel, rho0, trajectory, grid, tol: float = 1e-8) -> list[np.ndarray]:
    """One application of rho -> sigma_t(rho0) - (i/hbar) int_0^t sigma_{t-s}([m(rho_s), rho_s]) ds.

    ``grid`` must be uniform, start at 0, and have an odd number of points
    (composite Simpson). Raises GridTooCoarse when halving the grid moves the
    result by more than ``tol``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid[0] != 0 or len(grid) < 3 or len(grid) % 2 == 0:
        raise ShapeError("grid must start at 0 and have an odd number (>= 3) of points")
    r0 = _mat(rho0)
    f = _integrand(model, trajectory, grid)
    integral = _csimpson(f, grid)
    if len(grid) >= 5 and tol is not None:
        coarse = _csimpson(f[::2], grid[::2])
        diff = np.max(np.abs(coarse - integral[::2]))
        if diff > tol:
            raise GridTooCoarse(f"Simpson refinement changed the integral by {diff:.3e}")
    out = []
    for k, t in enumerate(grid):
        U = model.h_spectrum.unitary(-t, model.hbar)
        out.append(U @ (r0 - (1j / model.hbar) * integral[k]) @ U.conj().T)
    return out


def picard_solve(model: InteractionModel, rho0, t: float, points_per_window: int = 201,
                 tol: float = 1e-13, max_iter: int = 200, grid_tol: float = 1e-8,
                 radius: float = PICARD_RADIUS) -> list[np.ndarray]:
    """Solve the fixed-point problem window by window; returns the trajectory on the last window's grid."""
    if points_per_window % 2 == 0:
        points_per_window += 1
    window = contraction_window(model, radius)
    n_windows = max(1, math.ceil(t / window - 1e-12)) if t > 0 else 1
    start = _mat(rho0).copy()
    traj = [start]
    for w in range(n_windows):
        length = t / n_windows
        grid = np.linspace(0.0, length, points_per_window)
        traj = [free_flow(model, start, s) for s in grid]
        for it in range(max_iter):
            new = duhamel_map(model, start, traj, grid, tol=None)
            change = max(trace_norm(a - b) for a, b in zip(new, traj))
            traj = new
            if change <= tol * max(1.0, trace_norm(start)):
                break
        else:
            raise PicardNoConvergence(f"window {w}: no convergence after {max_iter} iterations (last change {change:.3e})")
        duhamel_map(model, start, traj, grid, tol=grid_tol)  # refinement check
        start = traj[-1]
    return traj
