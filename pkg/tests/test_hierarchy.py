import numpy as np
import pytest

from conftest import brute_symmetrizer, density, herm, kron_all, pure, swap_symmetric
from meanfield_lab.bounds import flowconv_bound, BoundParams, volterra_bound
from meanfield_lab.errors import ArityCapExceeded, InstanceTooLarge
from meanfield_lab.hartree import InteractionModel, evolve_hartree
from meanfield_lab.hierarchy import (
    auto_depth,
    cascade_vs_quadrature,
    classical_dyson_expectation,
    classical_potential,
    commutator_decomposition_check,
    duality_residual,
    dyson_terms,
    free_evolve_kernel,
    free_evolved_potential,
    gammaH_dense,
    gammaH_expectation,
    gammaH_expectation_embedded,
    loop_apply,
    multit_coefficient_check,
    quantum_coefficient,
    simplex_term,
    tree_apply,
)
from meanfield_lab.nbody import NBodyDynamics
from meanfield_lab.poisson import PObservable, evaluate
from meanfield_lab.tensor_core import propagate, set_element_cap


def model(rng, d=2, v=1.0, hbar=1.0):
    V = swap_symmetric(rng, d)
    return InteractionModel(herm(rng, d), v * V / np.linalg.norm(V, 2), hbar)


def sym(rng, d, p):
    P = brute_symmetrizer(p, d) if p > 1 else np.eye(d)
    return PObservable(P @ herm(rng, d**p) @ P, p)


def test_free_evolved_potential(rng):
    m = model(rng)
    hh = np.kron(m.h, np.eye(2)) + np.kron(np.eye(2), m.h)
    assert np.allclose(free_evolved_potential(m, 0.8), propagate(hh, 0.8, 1.0, m.V))
    assert np.allclose(classical_potential(m, 0.8).kernel, 0.5 * propagate(hh, 0.8, 1.0, m.V))


def _dense_tree(a, V, p, d, hbar):
    P = brute_symmetrizer(p + 1, d)
    Vp = kron_all([np.eye(d)] * (p - 1) + [V])
    aI = np.kron(a, np.eye(d))
    return p * P @ (1j / hbar * (Vp @ aI - aI @ Vp)) @ P


def test_tree_examples(rng):
    d = 2
    scalar = InteractionModel(herm(rng, d), 2.5 * np.eye(4))
    for p in (1, 2):
        assert np.allclose(tree_apply(sym(rng, d, p), scalar, 0.4).kernel, 0)
    m = model(rng, hbar=0.8)
    for p in (1, 2, 3):
        a = sym(rng, d, p)
        x = tree_apply(a, m, 0.0)
        assert x.p == p + 1 and x.symmetric
        assert np.allclose(x.kernel, _dense_tree(a.kernel, m.V, p, d, m.hbar), atol=1e-12)


def test_tree_covariance(rng):
    """X_{p,r}(a_r) is the free evolution of X_{p,0}(a)."""
    m = model(rng)
    a = sym(rng, 2, 2)
    r = 0.37
    lhs = tree_apply(PObservable(free_evolve_kernel(a.kernel, m, r, 2), 2), m, r).kernel
    rhs = free_evolve_kernel(tree_apply(a, m, 0.0).kernel, m, r, 3)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_tree_loop_norms(rng):
    for k in range(100):
        m = model(rng, v=float(rng.uniform(0.1, 3)), hbar=float(rng.uniform(0.3, 2)))
        p = 1 + k % 3
        a = sym(rng, 2, p)
        r = float(rng.uniform(0, 2))
        assert tree_apply(a, m, r).norm <= 2 * m.v_inf / m.hbar * p * a.norm * (1 + 1e-12)
        N = int(rng.integers(p, 30))
        assert loop_apply(a, m, r, N).norm <= m.v_inf / m.hbar * p * (p - 1) / N * a.norm * (1 + 1e-12) + 1e-15


def test_loop_examples(rng):
    m = model(rng)
    assert np.allclose(loop_apply(sym(rng, 2, 1), m, 0.3, 5).kernel, 0)
    scalar = InteractionModel(herm(rng, 2), -1.5 * np.eye(4))
    assert np.allclose(loop_apply(sym(rng, 2, 2), scalar, 0.3, 5).kernel, 0)


def test_commutator_decomposition(rng):
    free = InteractionModel(herm(rng, 2), np.zeros((4, 4)))
    assert commutator_decomposition_check(sym(rng, 2, 1), free, 0.2, 3) == 0
    m = model(rng)
    assert commutator_decomposition_check(sym(rng, 2, 1), m, 0.0, 3) <= 1e-10
    assert commutator_decomposition_check(sym(rng, 2, 2), m, 0.3, 3) <= 1e-10
    for p, N in [(1, 4), (2, 4), (3, 4), (4, 4)]:
        assert commutator_decomposition_check(sym(rng, 2, p), m, 0.7, N) <= 1e-10
    with pytest.raises(InstanceTooLarge):
        commutator_decomposition_check(sym(rng, 2, 1), m, 0.0, 9)


def test_duality(rng):
    m = model(rng)
    for p in (1, 2):
        a = sym(rng, 2, p)
        for _ in range(25):
            assert duality_residual(a, m, float(rng.uniform(0, 1)), pure(rng, 2)) <= 1e-10


def test_cascade_free_theory(rng):
    free = InteractionModel(herm(rng, 2), np.zeros((4, 4)))
    a = sym(rng, 2, 2)
    c = dyson_terms(a, 0.9, 3, free)
    assert np.allclose(c.kernel(0).kernel, free_evolve_kernel(a.kernel, free, 0.9, 2), atol=1e-10)
    for n in (1, 2, 3):
        assert np.allclose(c.kernels[n], 0)


def test_cascade_first_order_small_t(rng):
    m = model(rng)
    a = sym(rng, 2, 1)
    x0 = tree_apply(a, m, 0.0).kernel
    gaps = []
    for t in (1e-2, 5e-3):
        c1 = dyson_terms(a, t, 1, m).kernel(1).kernel
        gaps.append(np.linalg.norm(c1 / t - x0, 2))
    assert gaps[1] < 0.6 * gaps[0]          # first-order remainder
    # Richardson: 2 f(t/2) - f(t) removes the O(t) term
    t = 1e-2
    f = lambda s: dyson_terms(a, s, 1, m).kernel(1).kernel / s
    assert np.linalg.norm(2 * f(t / 2) - f(t) - x0, 2) < gaps[1] / 10


def test_cascade_vs_quadrature(rng):
    m = model(rng)
    for p in (1, 2):
        assert cascade_vs_quadrature(sym(rng, 2, p), m, m.tau) <= 1e-6
        assert cascade_vs_quadrature(sym(rng, 2, p), m, 2 * m.tau) <= 1e-6


def test_arity_cap(rng):
    m = model(rng)
    old = set_element_cap(2**6)
    try:
        with pytest.raises(ArityCapExceeded):
            dyson_terms(sym(rng, 2, 1), 0.1, 6, m)
    finally:
        set_element_cap(old)


def test_gammaH_examples(rng):
    m = model(rng)
    a = sym(rng, 2, 1)
    rho = pure(rng, 2)
    t = 0.6 * m.tau
    c0 = dyson_terms(a, t, 0, m)
    a_t = free_evolve_kernel(a.kernel, m, t, 1)
    assert abs(gammaH_expectation(c0, rho, 5) - np.trace(a_t @ rho)) < 1e-10
    c = dyson_terms(a, t, 12, m)
    # large N: the quantum coefficients approach 1
    assert abs(gammaH_expectation(c, rho, 10**5) - classical_dyson_expectation(c, rho)) < 1e-3
    for r in (rho, density(rng, 2)):
        full = dyson_terms(a, t, 2, m)
        assert abs(gammaH_expectation(full, r, 3) - gammaH_dense(a, m, t, r, 3)) < 1e-8
    for N in (3, 6, 9):
        for r in (rho, density(rng, 2)):
            assert abs(gammaH_expectation(c, r, N) - gammaH_expectation_embedded(c, r, N)) < 1e-12


def test_nilpotency(rng):
    assert quantum_coefficient(6, 2, 5) == 0.0
    assert quantum_coefficient(6, 2, 4) > 0
    m = model(rng)
    a = sym(rng, 2, 1)
    rho = density(rng, 2)
    t = m.tau
    assert np.isclose(gammaH_expectation(dyson_terms(a, t, 3, m), rho, 4),
                      gammaH_expectation(dyson_terms(a, t, 6, m), rho, 4), atol=1e-14)


def test_classical_dyson(rng):
    m = model(rng)
    a = sym(rng, 2, 1)
    rho = pure(rng, 2)
    assert np.isclose(classical_dyson_expectation(dyson_terms(a, 0.0, 4, m), rho), evaluate(a, rho))
    t = m.tau / 2
    val = classical_dyson_expectation(dyson_terms(a, t, 12, m), rho)
    assert abs(val - evaluate(a, evolve_hartree(m, rho, t).matrix)) < 1e-6


def test_volterra_sampled(rng):
    m = model(rng)
    for p in (1, 2):
        a = sym(rng, 2, p)
        for f in (0.5, 1.0):
            t = f * m.tau
            c = dyson_terms(a, t, 6, m)
            for _ in range(30):
                for n, v in enumerate(c.terms(pure(rng, 2))):
                    assert abs(v) <= volterra_bound(t, m.tau, n, p, a.norm) * (1 + 1e-9)


def test_multit(rng):
    m = model(rng)
    rho = pure(rng, 2)
    for p in (1, 2):
        a = sym(rng, 2, p)
        assert multit_coefficient_check(a, 0, 3, (), rho, m) <= 1e-12
        assert multit_coefficient_check(a, 1, 3, (0.05,), rho, m) <= 1e-9
        assert multit_coefficient_check(a, 2, 4, (0.09, 0.02), rho, m) <= 1e-9


def test_flowconv(rng):
    m = model(rng)
    a = sym(rng, 2, 1)
    rho = density(rng, 2)
    for N in (4, 8):
        dyn = NBodyDynamics(m, rho, N)
        for f in (0.5, 1.0):
            t = f * m.tau
            gap = abs(dyn.expectation(a, t) - gammaH_expectation(dyson_terms(a, t, N - 1, m), rho, N))
            assert gap <= flowconv_bound(BoundParams(1.0, m.v_inf, 1, N, t), a.norm)


def test_simplex_term_zero(rng):
    m = model(rng)
    a = sym(rng, 2, 1)
    assert np.allclose(simplex_term(a, m, 0.3, 0).kernel, free_evolve_kernel(a.kernel, m, 0.3, 1))


def test_auto_depth():
    assert auto_depth(0.0, 0.125, 1) == 0
    L = auto_depth(0.0625, 0.125, 1)
    assert 0.25 ** (L + 1) <= 1e-8 < 0.25**L
    L2 = auto_depth(0.0625, 0.125, 3)
    assert 0.25 ** (L2 + 1) * 4 <= 1e-8 < 0.25**L2 * 4
    with pytest.raises(ValueError):
        auto_depth(0.3, 0.125, 1)
