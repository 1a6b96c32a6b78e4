"""Closed-form bounds of the mean-field estimate and the exact sums behind them.

Combinatorial identities are evaluated in ``fractions.Fraction``; floats only
appear in the final bounds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import BadArity, FreeTheory, TOutOfRange, ValidationError


@dataclass(frozen=True)
class BoundParams:
    hbar: float
    v_inf: float
    p: int
    N: int
    t: float

    def __post_init__(self):
        for name in ("hbar", "v_inf", "t"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")
        if self.hbar <= 0 or self.v_inf < 0 or self.t < 0:
            raise ValidationError("need hbar > 0, v_inf >= 0, t >= 0")
        if self.p < 1 or self.N < 1:
            raise ValidationError("need p >= 1 and N >= 1")

    @property
    def tau(self) -> float:
        return tau(self.hbar, self.v_inf)

    @property
    def steps(self) -> int:
        """floor(t / tau)."""
        return math.floor(self.t / self.tau)


def tau(hbar: float, v_inf: float) -> float:
    """hbar / (8 ||v||)."""
    if v_inf == 0:
        raise FreeTheory("tau is infinite for a free theory")
    if v_inf < 0 or hbar <= 0:
        raise ValidationError("need hbar > 0 and v_inf > 0")
    return hbar / (8 * v_inf)


def gamma(t: float, tau_: float) -> float:
    """1 / (4e (floor(t/tau) + 1)!); at t = k tau the value of [k tau, (k+1) tau) is used."""
    if t < 0:
        raise ValidationError("t must be nonnegative")
    return 1.0 / (4 * math.e * math.factorial(math.floor(t / tau_) + 1))


def theorem_bound(params: BoundParams, a_norm: float, form: str = "coarse") -> float:
    k = params.steps
    g = gamma(params.t, params.tau)
    N, p = params.N, params.p
    if form == "coarse":
        return 2.0 ** ((k + 2) * p) * N ** (-g) * a_norm
    if form == "fine":
        return 2.0 ** ((k + 1) * p) * (p / math.sqrt(N) + N ** (-g)) * a_norm
    raise ValueError(f"unknown bound form {form!r}")


def small_time_bound(params: BoundParams, a_norm: float) -> float:
    """2^{p+1} ((p+1)/N) (t/tau) ||a||, valid for t <= tau."""
    ratio = params.t / params.tau
    if ratio > 1 + 1e-12:
        raise TOutOfRange(f"t = {params.t} exceeds tau = {params.tau}")
    p = params.p
    return 2.0 ** (p + 1) * (p + 1) / params.N * ratio * a_norm


def flowconv_bound(params: BoundParams, a_norm: float) -> float:
    """2^{p-2} (p/N) (t/tau) ||a||, the gap between the full and tree-only flows for t <= tau."""
    return 2.0 ** (params.p - 2) * params.p / params.N * (params.t / params.tau) * a_norm


def volterra_bound(t: float, tau_: float, n: int, p: int, a_norm: float) -> float:
    """(t/2tau)^n 2^{p-1} ||a||."""
    return (t / (2 * tau_)) ** n * 2.0 ** (p - 1) * a_norm


def tree_norm_bound(v_inf: float, hbar: float, p: int, a_norm: float) -> float:
    return 2 * v_inf / hbar * p * a_norm


def loop_norm_bound(v_inf: float, hbar: float, p: int, N: int, a_norm: float) -> float:
    return v_inf / hbar * p * (p - 1) / N * a_norm


# ---------------------------------------------------------------------------
# Induction constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InductionConstants:
    L: tuple          # L_0, L_1, ..., L_k
    R: float          # R_{p,k}
    weighted_sum: float  # sum_{r=1}^k r L_r


def induction_constants(N: int, p: int, k: int) -> InductionConstants:
    """L_0 = log2(N)/(4e), L_r = L_0/(r-1)!, R_{p,k} = 2^{kp}(2^{sum r L_r} p/N + 2^{-L_k})."""
    if k < 1 or N < 2:
        raise ValidationError("need k >= 1 and N >= 2")
    L0 = math.log2(N) / (4 * math.e)
    L = [L0] + [L0 / math.factorial(r - 1) for r in range(1, k + 1)]
    s = sum(r * L[r] for r in range(1, k + 1))
    R = 2.0 ** (k * p) * (2.0**s * p / N + 2.0 ** (-L[k]))
    return InductionConstants(tuple(L), R, s)


# ---------------------------------------------------------------------------
# Exact sums
# ---------------------------------------------------------------------------

def series_identity_2p(p: int, M: int) -> tuple[Fraction, Fraction]:
    """Partial sum of 2^{-n}(p+n-1) over n <= M, and partial sum plus the closed tail 2^{-M}(p+M+1)."""
    if p < 1 or M < 0:
        raise ValidationError("need p >= 1 and M >= 0")
    partial = sum(Fraction(p + n - 1, 2**n) for n in range(M + 1))
    tail = Fraction(p + M + 1, 2**M)
    return partial, partial + tail


def falling_coefficient(N: int, p: int, n: int) -> Fraction:
    """(N-p)! / ((N-p-n)! N^n) as an exact rational."""
    if n > N - p:
        return Fraction(0)
    return Fraction(math.perm(N - p, n), N**n)


def appendixC_identities(N: int, p: int) -> tuple[Fraction, Fraction, Fraction]:
    """(lhs, rhs, bound) with lhs = 1 - sum_{n>=1} c_n 2^{-n}, rhs = sum_{n>=0} c_n ((p+n)/N) 2^{-n}, bound = 2(p+1)/N."""
    if p < 1 or p > N:
        raise BadArity(f"need 1 <= p <= N, got p={p}, N={N}")
    lhs = 1 - sum(falling_coefficient(N, p, n) / 2**n for n in range(1, N - p + 1))
    rhs = sum(falling_coefficient(N, p, n) * Fraction(p + n, N) / 2**n for n in range(N - p + 1))
    return lhs, rhs, Fraction(2 * (p + 1), N)


def S_pN(p: int, N: int) -> Fraction:
    """(1 - sum_{n=1}^{N-p} c_n 2^{-n}) 2^{p-1}."""
    lhs, _, _ = appendixC_identities(N, p)
    return lhs * 2 ** (p - 1)


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

BOUND_COLUMNS = ("N", "t", "p", "coarse", "fine", "small_time")


def bound_row(params: BoundParams, a_norm: float = 1.0) -> dict:
    try:
        small = small_time_bound(params, a_norm)
    except TOutOfRange:
        small = None
    return {
        "N": params.N,
        "t": params.t,
        "p": params.p,
        "coarse": theorem_bound(params, a_norm, "coarse"),
        "fine": theorem_bound(params, a_norm, "fine"),
        "small_time": small,
    }
