import itertools
import math

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def herm(rng, n):
    G = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (G + G.conj().T)


def density(rng, d):
    G = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    R = G @ G.conj().T
    return R / np.trace(R).real


def unit(rng, d):
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return v / np.linalg.norm(v)


def pure(rng, d):
    v = unit(rng, d)
    return np.outer(v, v.conj())


def perm_matrix_loop(perm, d):
    """Permutation operator by explicit enumeration of basis states."""
    M = len(perm)
    D = d**M
    U = np.zeros((D, D))
    for idx in itertools.product(range(d), repeat=M):
        src = tuple(idx[perm[k]] for k in range(M))
        row = sum(i * d ** (M - 1 - k) for k, i in enumerate(idx))
        col = sum(i * d ** (M - 1 - k) for k, i in enumerate(src))
        U[row, col] = 1
    return U


def brute_symmetrizer(M, d):
    D = d**M
    P = np.zeros((D, D))
    for perm in itertools.permutations(range(M)):
        P += perm_matrix_loop(perm, d)
    return P / math.factorial(M)


def sym_basis(M, d):
    """Orthonormal basis of the symmetric subspace by eigendecomposition of the brute symmetrizer."""
    P = brute_symmetrizer(M, d)
    w, U = np.linalg.eigh(P)
    return U[:, w > 0.5]


def swap_symmetric(rng, d):
    S = perm_matrix_loop((1, 0), d)
    V = herm(rng, d * d)
    return 0.5 * (V + S @ V @ S)


def kron_all(mats):
    out = np.ones((1, 1))
    for m in mats:
        out = np.kron(out, m)
    return out


def brute_hamiltonian(h, V, N):
    """sum_i h_i + (1/N) sum_{i<j} V_ij on the full tensor space, by explicit slot placement."""
    d = h.shape[0]
    D = d**N
    H = np.zeros((D, D), dtype=complex)
    for i in range(N):
        H += kron_all([h if k == i else np.eye(d) for k in range(N)])
    Vt = V.reshape(d, d, d, d)
    for i in range(N):
        for j in range(i + 1, N):
            Vij = np.zeros((D, D), dtype=complex)
            for x in itertools.product(range(d), repeat=N):
                for y in itertools.product(range(d), repeat=N):
                    if any(x[k] != y[k] for k in range(N) if k not in (i, j)):
                        continue
                    r = sum(v * d ** (N - 1 - k) for k, v in enumerate(x))
                    c = sum(v * d ** (N - 1 - k) for k, v in enumerate(y))
                    Vij[r, c] = Vt[x[i], x[j], y[i], y[j]]
            H += Vij / N
    return H


def occupation_vectors(d, N, states):
    """Columns |n> = normalized sum of all product basis states with occupations n."""
    W = np.zeros((d**N, len(states)))
    for col, occ in enumerate(states):
        for idx in itertools.product(range(d), repeat=N):
            if tuple(idx.count(k) for k in range(d)) == tuple(occ):
                W[sum(i * d ** (N - 1 - k) for k, i in enumerate(idx)), col] = 1.0
        W[:, col] /= np.linalg.norm(W[:, col])
    return W
