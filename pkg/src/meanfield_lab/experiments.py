"""Configuration, seeded instance generation, sweeps and verification suites."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction

import numpy as np
import tomli

from . import bounds as B
from .errors import BoundViolation, FreeTheory, ShapeError, TOutOfRange, ValidationError
from .hartree import DensityMatrix, InteractionModel, energy, evolve_hartree, evolve_hartree_path
from .hierarchy import (
    commutator_decomposition_check,
    duality_residual,
    dyson_terms,
    gammaH_expectation,
    loop_apply,
    multit_coefficient_check,
    tree_apply,
)
from .nbody import NBodyDynamics
from .poisson import PObservable, bracket_kernel, evaluate, rank_one_reduction_check
from .tensor_core import hermiticity_defect, op_norm, swap_operator, symmetrize, trace_norm

# ---------------------------------------------------------------------------
# Random instances
# ---------------------------------------------------------------------------

def random_hermitian(rng: np.random.Generator, n: int) -> np.ndarray:
    """(G + G^dagger)/2 with independent standard normal real and imaginary parts."""
    G = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (G + G.conj().T)


def random_density(rng: np.random.Generator, d: int) -> np.ndarray:
    """G G^dagger / Tr(G G^dagger)."""
    G = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    R = G @ G.conj().T
    return R / np.trace(R).real


def random_unit_vector(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return v / np.linalg.norm(v)


def random_pure(rng: np.random.Generator, d: int) -> np.ndarray:
    v = random_unit_vector(rng, d)
    return np.outer(v, v.conj())


def random_pair_operator(rng: np.random.Generator, d: int, norm: float | None = None) -> np.ndarray:
    """Swap-symmetric Hermitian V = (H + S H S)/2."""
    S = swap_operator(d)
    H = random_hermitian(rng, d * d)
    V = 0.5 * (H + S @ H @ S)
    return V if norm is None else V * (norm / op_norm(V))


def random_pair_table(rng: np.random.Generator, d: int, norm: float | None = None) -> np.ndarray:
    w = rng.standard_normal((d, d))
    w = 0.5 * (w + w.T)
    return w if norm is None else w * (norm / np.abs(w).max())


def random_observable(rng: np.random.Generator, d: int, p: int, norm: float | None = None) -> PObservable:
    k = random_hermitian(rng, d**p)
    if p > 1:
        P = symmetrize(p, d)
        k = P @ k @ P
    if norm is not None:
        k = k * (norm / op_norm(k))
    return PObservable(k, p)


def random_model(rng: np.random.Generator, d: int, v_norm: float = 1.0, hbar: float = 1.0,
                 diagonal: bool = False) -> InteractionModel:
    h = random_hermitian(rng, d)
    if diagonal:
        return InteractionModel.from_pair_table(h, random_pair_table(rng, d, v_norm), hbar)
    return InteractionModel(h, random_pair_operator(rng, d, v_norm), hbar)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _matrix_from_spec(spec: dict, shape) -> np.ndarray:
    re = np.asarray(spec.get("re", spec.get("matrix")), dtype=float)
    im = np.asarray(spec.get("im", np.zeros_like(re)), dtype=float)
    m = re + 1j * im
    if m.shape != shape:
        raise ShapeError(f"matrix has shape {m.shape}, expected {shape}")
    return m


@dataclass(frozen=True)
class ModelConfig:
    d: int
    hbar: float
    seed: int
    N: tuple
    t: tuple = ()
    t_over_tau: tuple = ()
    h: dict = field(default_factory=lambda: {"kind": "random"})
    V: dict = field(default_factory=lambda: {"kind": "random_diagonal", "norm": 1.0})
    rho0: dict = field(default_factory=lambda: {"kind": "random_pure"})
    observable: dict = field(default_factory=lambda: {"p": 1, "kind": "random", "norm": 1.0})
    integrator: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 1 or self.hbar <= 0:
            raise ValidationError("need d >= 1 and hbar > 0")
        if not self.N or any(int(n) < 1 for n in self.N):
            raise ValidationError("N list must hold positive integers")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        if any(x < 0 for x in self.t) or any(x < 0 for x in self.t_over_tau):
            raise ValidationError("times must be nonnegative")

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        try:
            data = dict(raw)
            data["N"] = tuple(int(n) for n in raw["N"])
            data["t"] = tuple(float(x) for x in raw.get("t", ()))
            data["t_over_tau"] = tuple(float(x) for x in raw.get("t_over_tau", ()))
            data["d"] = int(raw["d"])
            data["hbar"] = float(raw.get("hbar", 1.0))
            data["seed"] = int(raw.get("seed", 0))
        except KeyError as exc:
            raise ValidationError(f"missing config key {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ValidationError(str(exc)) from None
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ModelConfig":
        try:
            with open(path, "rb") as fh:
                raw = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ValidationError(f"cannot parse {path}: {exc}") from None
        return cls.from_dict(raw)

    def with_seed(self, seed: int) -> "ModelConfig":
        return replace(self, seed=int(seed))

    # Independent streams for every random ingredient
    def _rngs(self):
        names = ("h", "V", "rho0", "observable", "suite")
        seqs = np.random.SeedSequence(self.seed).spawn(len(names))
        return {n: np.random.default_rng(s) for n, s in zip(names, seqs)}

    def rng(self, name: str) -> np.random.Generator:
        return self._rngs()[name]

    def build_model(self) -> InteractionModel:
        d = self.d
        rngs = self._rngs()
        hs = self.h
        if hs.get("kind", "random") == "random":
            h = random_hermitian(rngs["h"], d) * float(hs.get("scale", 1.0))
        elif hs["kind"] == "diagonal":
            h = np.diag(np.asarray(hs["values"], dtype=float)).astype(complex)
        elif hs["kind"] == "matrix":
            h = _matrix_from_spec(hs, (d, d))
        else:
            raise ValidationError(f"unknown h kind {hs['kind']!r}")
        vs = self.V
        kind = vs.get("kind", "random_diagonal")
        norm = vs.get("norm")
        hbar = self.hbar
        if kind == "zero":
            return InteractionModel(h, np.zeros((d * d, d * d), dtype=complex), hbar)
        if kind == "diagonal":
            w = np.asarray(vs["w"], dtype=float)
            if w.shape != (d, d):
                raise ShapeError(f"pair table has shape {w.shape}, expected {(d, d)}")
            if norm is not None:
                w = w * (float(norm) / np.abs(w).max())
            return InteractionModel.from_pair_table(h, w, hbar)
        if kind == "random_diagonal":
            return InteractionModel.from_pair_table(h, random_pair_table(rngs["V"], d, norm), hbar)
        if kind == "random":
            return InteractionModel(h, random_pair_operator(rngs["V"], d, norm), hbar)
        if kind == "matrix":
            V = _matrix_from_spec(vs, (d * d, d * d))
            if norm is not None:
                V = V * (float(norm) / op_norm(V))
            return InteractionModel(h, V, hbar)
        raise ValidationError(f"unknown V kind {kind!r}")

    def build_rho0(self) -> DensityMatrix:
        d = self.d
        rs = self.rho0
        rng = self.rng("rho0")
        kind = rs.get("kind", "random_pure")
        if kind == "random_pure":
            return DensityMatrix(random_pure(rng, d))
        if kind == "random":
            return DensityMatrix(random_density(rng, d))
        if kind == "pure":
            re = np.asarray(rs["re"], dtype=float)
            im = np.asarray(rs.get("im", np.zeros_like(re)), dtype=float)
            psi = re + 1j * im
            if psi.shape != (d,) or np.linalg.norm(psi) == 0:
                raise ShapeError("pure state vector must be nonzero of length d")
            return DensityMatrix.pure(psi)
        if kind == "matrix":
            return DensityMatrix(_matrix_from_spec(rs, (d, d)))
        raise ValidationError(f"unknown rho0 kind {kind!r}")

    def build_observable(self) -> PObservable:
        os_ = self.observable
        p = int(os_.get("p", 1))
        if os_.get("kind", "random") == "random":
            return random_observable(self.rng("observable"), self.d, p, os_.get("norm"))
        if os_["kind"] == "matrix":
            return PObservable.from_kernel(_matrix_from_spec(os_, (self.d**p, self.d**p)), p)
        raise ValidationError(f"unknown observable kind {os_['kind']!r}")

    def times(self, model: InteractionModel) -> list[float]:
        out = list(self.t)
        if self.t_over_tau:
            if model.v_inf == 0:
                raise FreeTheory("t_over_tau needs a nonzero interaction")
            out += [r * model.tau for r in self.t_over_tau]
        if not out:
            raise ValidationError("config lists no times")
        return sorted(set(out))


# ---------------------------------------------------------------------------
# Bounds for one record
# ---------------------------------------------------------------------------

def record_bounds(model: InteractionModel, p: int, N: int, t: float, a_norm: float) -> tuple:
    """(coarse, fine, small_time or None); a free theory is treated as t/tau = 0."""
    if model.v_inf == 0:
        params = B.BoundParams(model.hbar, 1.0, p, N, 0.0)
    else:
        params = B.BoundParams(model.hbar, model.v_inf, p, N, t)
    coarse = B.theorem_bound(params, a_norm, "coarse")
    fine = B.theorem_bound(params, a_norm, "fine")
    try:
        small = B.small_time_bound(params, a_norm)
    except TOutOfRange:
        small = None
    return coarse, fine, small


# ---------------------------------------------------------------------------
# Convergence sweep
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = ("N", "t", "p", "qm", "hartree", "abs_error", "bound_coarse", "bound_fine",
                 "bound_small_time", "wall_time_ms")


@dataclass(frozen=True)
class SweepRecord:
    N: int
    t: float
    p: int
    qm: float
    hartree: float
    abs_error: float
    bound_coarse: float
    bound_fine: float
    bound_small_time: float | None
    wall_time_ms: float


def _instance_dump(config: ModelConfig, model, rho0, a) -> dict:
    return {
        "config": asdict(config),
        "h": _cplx(model.h),
        "V": _cplx(model.V),
        "rho0": _cplx(rho0.matrix),
        "observable": {"p": a.p, "kernel": _cplx(a.kernel)},
    }


def _cplx(m):
    m = np.asarray(m)
    return {"re": m.real.tolist(), "im": m.imag.tolist()}


def run_converge_sweep(config: ModelConfig, workers: int = 1) -> list[SweepRecord]:
    model = config.build_model()
    rho0 = config.build_rho0()
    a = config.build_observable()
    times = config.times(model)
    timing = bool(config.output.get("timing", True))
    hartree_path = evolve_hartree_path(model, rho0.matrix, times, dt=config.integrator.get("rk4_step"))
    hartree_vals = [evaluate(a, r).real for r in hartree_path]
    a_norm = a.norm

    def job(N):
        out = []
        start = time.perf_counter()
        dyn = NBodyDynamics(model, rho0.matrix, N)
        setup = time.perf_counter() - start
        for t, hv in zip(times, hartree_vals):
            t0 = time.perf_counter()
            qm = dyn.expectation(a, t).real
            elapsed = (time.perf_counter() - t0 + setup / len(times)) * 1e3 if timing else 0.0
            coarse, fine, small = record_bounds(model, a.p, N, t, a_norm)
            out.append(SweepRecord(N, t, a.p, qm, hv, abs(qm - hv), coarse, fine, small, elapsed))
        return out

    Ns = sorted(set(config.N))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(job, Ns))
    else:
        chunks = [job(N) for N in Ns]
    records = sorted((r for c in chunks for r in c), key=lambda r: (r.t, r.N))
    for r in records:
        if not r.abs_error <= r.bound_coarse:
            raise BoundViolation(
                f"N={r.N}, t={r.t}: error {r.abs_error:.3e} exceeds bound {r.bound_coarse:.3e}",
                record=r, instance=_instance_dump(config, model, rho0, a))
    return records


def convergence_slope(Ns, errors) -> float:
    """Least-squares slope of log(error) against log(N)."""
    return float(np.polyfit(np.log(np.asarray(Ns, float)), np.log(np.asarray(errors, float)), 1)[0])


def monotone_with_slack(errors, slack: float = 0.10) -> bool:
    """Strictly decreasing, except at most one adjacent rise of relative size <= slack."""
    rises = [(a, b) for a, b in zip(errors, errors[1:]) if not b < a]
    if not rises:
        return True
    return len(rises) == 1 and rises[0][1] <= rises[0][0] * (1 + slack)


# ---------------------------------------------------------------------------
# Bound table and single-trajectory dump
# ---------------------------------------------------------------------------

def run_bound_table(config: ModelConfig) -> list[dict]:
    model = config.build_model()
    p_values = config.observable.get("p_values", [config.observable.get("p", 1)])
    a_norm = float(config.observable.get("norm", 1.0) or 1.0)
    rows = []
    for t in config.times(model):
        for p in p_values:
            for N in sorted(set(config.N)):
                coarse, fine, small = record_bounds(model, int(p), N, t, a_norm)
                rows.append({"N": N, "t": t, "p": int(p), "coarse": coarse, "fine": fine, "small_time": small})
    return rows


SIMULATE_COLUMNS = ("t", "trace", "energy", "purity", "min_eigenvalue", "hermiticity_defect",
                    "observable", "spectrum")


def simulate(config: ModelConfig) -> list[dict]:
    model = config.build_model()
    rho0 = config.build_rho0()
    a = config.build_observable()
    times = [0.0] + config.times(model)
    times = sorted(set(times))
    method = config.integrator.get("method", "rk4")
    path = evolve_hartree_path(model, rho0.matrix, times, method=method, dt=config.integrator.get("rk4_step"))
    rows = []
    for t, r in zip(times, path):
        w = np.linalg.eigvalsh(0.5 * (r + r.conj().T))
        rows.append({
            "t": t,
            "trace": float(np.trace(r).real),
            "energy": energy(model, r),
            "purity": float(np.trace(r @ r).real),
            "min_eigenvalue": float(w[0]),
            "hermiticity_defect": hermiticity_defect(r),
            "observable": evaluate(a, r).real,
            "spectrum": " ".join(repr(float(x)) for x in w),
        })
    return rows


# ---------------------------------------------------------------------------
# Identity suites
# ---------------------------------------------------------------------------

@dataclass
class IdentityResult:
    name: str
    passed: bool
    residual: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark} {self.name}: residual {self.residual:.3e} (tolerance {self.tolerance:.1e}) {self.detail}".rstrip()


def _result(name, residual, tol, detail="", passed=None) -> IdentityResult:
    residual = float(residual)
    ok = residual <= tol if passed is None else passed
    return IdentityResult(name, bool(ok), residual, float(tol), detail)


def _brute_models(rng, count, d=2):
    return [random_model(rng, d, v_norm=float(rng.uniform(0.5, 1.5))) for _ in range(count)]


def check_free_theory(rng, d=2, Ns=(2, 4, 8, 16), ps=(1, 2), times=(0.1, 0.5, 1.0), trials=3, tol=1e-10):
    worst = 0.0
    for _ in range(trials):
        h = random_hermitian(rng, d)
        model = InteractionModel(h, np.zeros((d * d, d * d), dtype=complex))
        rho = random_pure(rng, d)
        for p in ps:
            a = random_observable(rng, d, p, 1.0)
            for N in Ns:
                if p > N:
                    continue
                dyn = NBodyDynamics(model, rho, N)
                for t in times:
                    ref = evaluate(a, evolve_hartree(model, rho, t).matrix)
                    worst = max(worst, abs(dyn.expectation(a, t) - ref))
    return _result("free_theory", worst, tol)


def check_conservation(rng, instances=20, t_end=1.0, dims=(2, 3, 4)):
    tr = en = sp = herm = 0.0
    min_eig = math.inf
    for k in range(instances):
        d = dims[k % len(dims)]
        model = random_model(rng, d, v_norm=1.0, diagonal=bool(k % 2))
        rho0 = random_density(rng, d)
        times = np.linspace(0.0, t_end, 5)[1:]
        path = evolve_hartree_path(model, rho0, times)
        e0 = energy(model, rho0)
        s0 = np.linalg.eigvalsh(rho0)
        for r in path:
            tr = max(tr, abs(np.trace(r) - np.trace(rho0)))
            en = max(en, abs(energy(model, r) - e0) / abs(e0))
            s = np.linalg.eigvalsh(0.5 * (r + r.conj().T))
            sp = max(sp, float(np.max(np.abs(s - s0))))
            herm = max(herm, hermiticity_defect(r))
            min_eig = min(min_eig, float(s[0]))
    return [
        _result("trace_conservation", tr, 1e-10),
        _result("energy_conservation", en, 1e-8),
        _result("spectrum_conservation", sp, 1e-7),
        _result("hermiticity", herm, 1e-10),
        _result("positivity", max(0.0, -min_eig), 1e-8),
    ]


def check_exact_identities(max_p_series=20, max_M=60, max_N=60):
    ok1 = all(B.series_identity_2p(p, M)[1] == 2 * p for p in range(1, max_p_series + 1) for M in range(max_M + 1))
    beta_ok = True
    ineq_ok = True
    S_ok = True
    for N in range(1, max_N + 1):
        for p in range(1, N + 1):
            lhs, rhs, bound = B.appendixC_identities(N, p)
            beta_ok &= lhs == rhs
            ineq_ok &= lhs <= bound
            S_ok &= B.S_pN(p, N) <= Fraction(2**p * (p + 1), N)
    return [
        _result("series_2p", 0.0 if ok1 else 1.0, 0.0, passed=ok1),
        _result("beta_identity", 0.0 if beta_ok else 1.0, 0.0, passed=beta_ok),
        _result("beta_bound", 0.0 if ineq_ok else 1.0, 0.0, passed=ineq_ok),
        _result("S_pN_bound", 0.0 if S_ok else 1.0, 0.0, passed=S_ok),
    ]


def check_treeloop(rng, trials=2, d=2, cases=((1, 3, 0.0), (1, 4, 0.3), (2, 3, 0.3), (2, 4, 0.1), (3, 4, 0.2)),
                   tol=1e-10):
    worst = 0.0
    for model in _brute_models(rng, trials, d):
        for p, N, r in cases:
            a = random_observable(rng, d, p, 1.0)
            worst = max(worst, commutator_decomposition_check(a, model, r, N))
    return _result("tree_loop_decomposition", worst, tol)


def check_multitree(rng, trials=2, d=2, tol=1e-9):
    worst = 0.0
    for model in _brute_models(rng, trials, d):
        rho = random_pure(rng, d)
        for p in (1, 2):
            a = random_observable(rng, d, p, 1.0)
            worst = max(worst, multit_coefficient_check(a, 0, 3, (), rho, model))
            worst = max(worst, multit_coefficient_check(a, 1, 3, (float(rng.uniform(0, 0.3)),), rho, model))
            ts = tuple(sorted(rng.uniform(0, 0.3, 2), reverse=True))
            worst = max(worst, multit_coefficient_check(a, 2, 4, ts, rho, model))
    return _result("multi_tree_coefficients", worst, tol)


def check_duality(rng, states=50, d=2, tol=1e-10):
    worst = 0.0
    model = random_model(rng, d)
    obs = [random_observable(rng, d, p, 1.0) for p in (1, 2)]
    for _ in range(states):
        rho = random_pure(rng, d)
        t = float(rng.uniform(0, 1))
        for a in obs:
            worst = max(worst, duality_residual(a, model, t, rho))
    return _result("tree_bracket_duality", worst, tol)


def _random_kernel(rng, d, p):
    return random_observable(rng, d, p)


def check_jacobi(rng, trials=50, tol=1e-10):
    worst = 0.0
    for k in range(trials):
        d = 2 + k % 2
        p, q, r = (int(x) for x in rng.integers(1, 3, 3))
        a, b, c = _random_kernel(rng, d, p), _random_kernel(rng, d, q), _random_kernel(rng, d, r)
        hbar = float(rng.uniform(0.5, 2.0))
        br = lambda x, y: bracket_kernel(x, y, hbar)
        J = br(br(a, b), c).kernel + br(br(c, a), b).kernel + br(br(b, c), a).kernel
        rho = random_density(rng, d)
        worst = max(worst, abs(evaluate(PObservable(J, p + q + r - 2), rho)))
    return _result("jacobi_identity", worst, tol)


def check_rank_one(rng, trials=50, tol=1e-10):
    worst = 0.0
    for k in range(trials):
        d = 2 + k % 2
        p, q = (int(x) for x in rng.integers(1, 3, 2))
        a, b = _random_kernel(rng, d, p), _random_kernel(rng, d, q)
        x, y = rank_one_reduction_check(a, b, random_unit_vector(rng, d), float(rng.uniform(0.5, 2.0)))
        worst = max(worst, abs(x - y))
    return _result("rank_one_reduction", worst, tol)


def check_norm_estimates(rng, draws=100, d=2):
    """Tree estimate on ``draws`` observables with p in 1..3, loop estimate on ``draws`` with p in 2..3."""
    tree_ratio = loop_ratio = 0.0
    for k in range(draws):
        model = random_model(rng, d, v_norm=float(rng.uniform(0.2, 2.0)), hbar=float(rng.uniform(0.5, 2.0)))
        r = float(rng.uniform(0, 1))
        p = 1 + k % 3
        a = random_observable(rng, d, p)
        x = tree_apply(a, model, r)
        tree_ratio = max(tree_ratio, x.norm / B.tree_norm_bound(model.v_inf, model.hbar, p, a.norm))
        q = 2 + k % 2
        b = random_observable(rng, d, q)
        N = int(rng.integers(q, 20))
        y = loop_apply(b, model, r, N)
        loop_ratio = max(loop_ratio, y.norm / B.loop_norm_bound(model.v_inf, model.hbar, q, N, b.norm))
    eps = 1 + 1e-12
    return [
        _result("tree_norm_estimate", tree_ratio, eps, "max ||X(a)|| / bound"),
        _result("loop_norm_estimate", loop_ratio, eps, "max ||Y(a)|| / bound"),
    ]


def check_volterra(rng, states=100, n_max=6, d=2, fractions_of_tau=(0.25, 0.5, 1.0)):
    model = random_model(rng, d)
    worst = 0.0
    for p in (1, 2):
        a = random_observable(rng, d, p)
        for f in fractions_of_tau:
            t = f * model.tau
            cascade = dyson_terms(a, t, n_max, model)
            for _ in range(states):
                terms = cascade.terms(random_pure(rng, d))
                for n, val in enumerate(terms):
                    worst = max(worst, abs(val) / B.volterra_bound(t, model.tau, n, p, a.norm))
    return _result("volterra_terms", worst, 1 + 1e-9, "max |A_n| / bound")


def check_small_time(rng, seeds=10, Ns=(8, 16, 32), fractions=(0.25, 0.5, 1.0), d=2, p=1):
    worst = 0.0
    for _ in range(seeds):
        model = random_model(rng, d, v_norm=float(rng.uniform(0.5, 1.5)))
        rho = random_pure(rng, d)
        a = random_observable(rng, d, p)
        times = [f * model.tau for f in fractions]
        hartree = [evaluate(a, r) for r in evolve_hartree_path(model, rho, times)]
        for N in Ns:
            dyn = NBodyDynamics(model, rho, N)
            for t, hv in zip(times, hartree):
                params = B.BoundParams(model.hbar, model.v_inf, p, N, t)
                worst = max(worst, abs(dyn.expectation(a, t) - hv) / B.small_time_bound(params, a.norm))
    return _result("small_time_bound", worst, 1.0, "max error / bound")


def check_flowconv(rng, trials=5, Ns=(4, 8), fractions=(0.25, 0.5, 1.0), d=2, p=1):
    worst = 0.0
    for _ in range(trials):
        model = random_model(rng, d, v_norm=float(rng.uniform(0.5, 1.5)))
        rho = random_density(rng, d)
        a = random_observable(rng, d, p)
        for N in Ns:
            dyn = NBodyDynamics(model, rho, N)
            for f in fractions:
                t = f * model.tau
                cascade = dyson_terms(a, t, N - p, model)
                gap = abs(dyn.expectation(a, t) - gammaH_expectation(cascade, rho, N))
                params = B.BoundParams(model.hbar, model.v_inf, p, N, t)
                worst = max(worst, gap / B.flowconv_bound(params, a.norm))
    return _result("tree_flow_gap", worst, 1.0, "max gap / bound")


def check_cross_solver(rng, trials=3, d=2, tol=1e-6):
    from .hartree import contraction_window
    from .hierarchy import cascade_vs_quadrature

    worst_h = worst_c = 0.0
    for _ in range(trials):
        model = random_model(rng, d, v_norm=1.0)
        rho = random_density(rng, d)
        T = contraction_window(model)
        for t in (0.5 * T, T):
            a = evolve_hartree(model, rho, t).matrix
            b = evolve_hartree(model, rho, t, method="picard").matrix
            worst_h = max(worst_h, trace_norm(a - b))
        for p in (1, 2):
            obs = random_observable(rng, d, p)
            worst_c = max(worst_c, cascade_vs_quadrature(obs, model, model.tau))
    return [_result("rk4_vs_picard", worst_h, tol), _result("cascade_vs_quadrature", worst_c, tol)]


def check_dyson_vs_hartree(model, rho, a, tol=1e-6):
    t = model.tau / 2
    cascade = dyson_terms(a, t, 12, model)
    gap = abs(sum(cascade.terms(rho)) - evaluate(a, evolve_hartree(model, rho, t).matrix))
    return _result("dyson_vs_hartree", gap, tol)


REPORT_SCHEMA = {
    "type": "object",
    "required": ["seed", "passed", "identities"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "passed": {"type": "boolean"},
        "error": {"type": ["string", "null"]},
        "identities": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "passed", "residual", "tolerance"],
                "properties": {
                    "name": {"type": "string"},
                    "passed": {"type": "boolean"},
                    "residual": {"type": "number"},
                    "tolerance": {"type": "number"},
                    "detail": {"type": "string"},
                },
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}


def validate_report(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, REPORT_SCHEMA)


def run_verify_identities(config: ModelConfig, quick: bool = False) -> dict:
    """Run every identity suite; invalid model input is recorded as a failed validation entry."""
    results: list[IdentityResult] = []
    error = None
    try:
        model = config.build_model()
        rho0 = config.build_rho0()
        a = config.build_observable()
    except ValidationError as exc:
        error = f"{type(exc).__name__}: {exc}"
        results.append(IdentityResult("config_validation", False, math.inf, 0.0, error))
        report = {"seed": config.seed, "passed": False, "error": error,
                  "identities": [_json_safe(asdict(r)) for r in results]}
        return report
    rng = config.rng("suite")
    scale = 0.2 if quick else 1.0
    n = lambda k: max(1, int(round(k * scale)))
    results.append(check_free_theory(rng, trials=n(3)))
    results += check_conservation(rng, instances=n(20))
    results += check_exact_identities()
    results.append(check_treeloop(rng))
    results.append(check_multitree(rng))
    results.append(check_duality(rng, states=n(50)))
    results.append(check_jacobi(rng, trials=n(50)))
    results.append(check_rank_one(rng, trials=n(50)))
    results += check_norm_estimates(rng, draws=n(100))
    results.append(check_volterra(rng, states=n(100)))
    results.append(check_small_time(rng, seeds=n(10)))
    results.append(check_flowconv(rng, trials=n(5)))
    results += check_cross_solver(rng, trials=n(3))
    if model.v_inf > 0:
        rho_pure = DensityMatrix(random_pure(rng, model.d)) if np.linalg.matrix_rank(rho0.matrix) > 1 else rho0
        results.append(check_dyson_vs_hartree(model, rho_pure.matrix, a))
    report = {
        "seed": config.seed,
        "passed": all(r.passed for r in results),
        "error": error,
        "identities": [_json_safe(asdict(r)) for r in results],
    }
    return report


def _json_safe(d: dict) -> dict:
    out = dict(d)
    if not math.isfinite(out["residual"]):
        out["residual"] = 1e308
    return out


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def to_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        rec = r if isinstance(r, dict) else asdict(r)
        w.writerow([_fmt(rec[c]) for c in columns])
    return buf.getvalue()


def to_json(obj) -> str:
    if isinstance(obj, list):
        obj = [r if isinstance(r, dict) else asdict(r) for r in obj]
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


__all__ = [
    "ModelConfig",
    "SweepRecord",
    "IdentityResult",
    "random_hermitian",
    "random_density",
    "random_pure",
    "random_pair_operator",
    "random_observable",
    "random_model",
    "run_converge_sweep",
    "convergence_slope",
    "monotone_with_slack",
    "run_verify_identities",
    "validate_report",
    "run_bound_table",
    "simulate",
    "to_csv",
    "to_json",
]
