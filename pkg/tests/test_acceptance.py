"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` or directly with ``python3 tests/test_acceptance.py``.
"""
import math
import sys
from pathlib import Path

import numpy as np
import pytest

from meanfield_lab import experiments as ex
from meanfield_lab.experiments import ModelConfig

SEED = 20240611
DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "default.toml"


def rng_for(k):
    return np.random.default_rng([SEED, k])


def verdict(number, title, results):
    results = results if isinstance(results, list) else [results]
    ok = all(r.passed for r in results)
    detail = "; ".join(f"{r.name} {r.residual:.2e}/{r.tolerance:.0e}" for r in results)
    return ok, f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}: {detail}"


def report(capsys, ok, line):
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)
    assert ok, line


def criterion_1():
    return verdict(1, "free-theory coincidence", ex.check_free_theory(rng_for(1), d=2, Ns=(2, 4, 8, 16), ps=(1, 2),
                                                                     times=(0.1, 0.5, 1.0), trials=3, tol=1e-10))


def criterion_2():
    res = ex.check_conservation(rng_for(2), instances=20, t_end=1.0, dims=(2, 3, 4))
    return verdict(2, "Hartree conservation", res[:3])


def criterion_3():
    return verdict(3, "exact rational identities", ex.check_exact_identities(max_p_series=20, max_M=60, max_N=60))


def criterion_4():
    rng = rng_for(4)
    res = [ex.check_treeloop(rng, tol=1e-10), ex.check_multitree(rng, tol=1e-9), ex.check_duality(rng, states=50, tol=1e-10)]
    return verdict(4, "tree/loop, multi-tree and duality", res)


def criterion_5():
    rng = rng_for(5)
    return verdict(5, "Poisson layer", [ex.check_jacobi(rng, trials=50, tol=1e-10), ex.check_rank_one(rng, trials=50, tol=1e-10)])


def criterion_6():
    rng = rng_for(6)
    res = ex.check_norm_estimates(rng, draws=100) + [ex.check_volterra(rng, states=100, n_max=6)]
    return verdict(6, "norm estimates and Volterra terms", res)


def criterion_7():
    return verdict(7, "small-time bound", ex.check_small_time(rng_for(7), seeds=10, Ns=(8, 16, 32),
                                                                fractions=(0.25, 0.5, 1.0)))


def criterion_8():
    return verdict(8, "full versus tree-only flow", ex.check_flowconv(rng_for(8), trials=5, Ns=(4, 8),
                                                                      fractions=(0.25, 0.5, 1.0)))


def criterion_9():
    cfg = ModelConfig.load(DEFAULT_CONFIG)
    model = cfg.build_model()
    assert cfg.d == 2 and math.isclose(model.v_inf, 1.0) and cfg.hbar == 1.0 and cfg.build_observable().p == 1
    records = ex.run_converge_sweep(cfg)  # raises BoundViolation if any record exceeds the coarse bound
    res = []
    for ratio in (0.5, 2.0):
        t = ratio * model.tau
        rows = sorted((r for r in records if math.isclose(r.t, t)), key=lambda r: r.N)
        Ns = [r.N for r in rows]
        errs = [r.abs_error for r in rows]
        assert Ns == [4, 8, 16, 32, 64]
        slope = ex.convergence_slope(Ns, errs)
        res.append(ex._result(f"slope(t={ratio}tau)", slope, -0.7))
        res.append(ex._result(f"monotone(t={ratio}tau)", 0.0, 0.0, passed=ex.monotone_with_slack(errs, 0.10)))
        worst = max(r.abs_error / r.bound_coarse for r in rows)
        res.append(ex._result(f"error/bound(t={ratio}tau)", worst, 1.0))
        if ratio == 0.5:
            halving = min(math.log2(a / b) for a, b in zip(errs, errs[1:]))
            res.append(ex._result("min log2 ratio(t=0.5tau)", -halving, -0.7))
    return verdict(9, "convergence sweep", res)


def criterion_10():
    return verdict(10, "cross-solver agreement", ex.check_cross_solver(rng_for(10), trials=3, tol=1e-6))


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{k}" for k in range(1, 11)])
def test_acceptance(criterion, capsys):
    report(capsys, *criterion())


if __name__ == "__main__":
    failures = 0
    for c in CRITERIA:
        ok, line = c()
        print(line)
        failures += not ok
    sys.exit(1 if failures else 0)
