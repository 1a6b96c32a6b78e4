"""Finite-dimensional laboratory for the bosonic mean-field limit.

Exact N-boson dynamics on the symmetric subspace, the Hartree flow, the
density-matrix Poisson bracket, the tree/loop Dyson hierarchy and the
closed-form error bounds.
"""
from .errors import *  # noqa: F401,F403
from .hartree import DensityMatrix, InteractionModel, energy, evolve_hartree, mean_field
from .nbody import NBodyDynamics, build_hamiltonian, evolve_state, expectation, heisenberg_expectation
from .poisson import ClassicalHamiltonian, PObservable, bracket_eval, bracket_kernel, evaluate, frechet
from .hierarchy import DysonCascade, dyson_terms, gammaH_expectation, classical_dyson_expectation
from .experiments import ModelConfig, run_converge_sweep, run_verify_identities, run_bound_table, simulate

__version__ = "0.1.0"
