"""Decentralized convex optimization with a shared affine constraint.

Solvers for ``min sum_i f_i(x)`` subject to ``B x = 0`` over a network in
which every node only talks to its graph neighbours.
"""

from .context import RunContext
from .harness import (
    AggregateResult,
    ExperimentConfig,
    emit_trace,
    read_trace,
    reproduce_case,
    run_batch,
    run_single,
)
from .network import Graph, MixingMatrix, erdos_renyi_connected, laplacian, ring, validate_mixing
from .problem import ProblemInstance, exact_solution, random_instance, reduce
from .solvers import (
    ApdgParams,
    apdg_default_params,
    apdg_params,
    apdg_run,
    globally_dual_run,
    locally_dual_run,
)
from .spectral import (
    SpectralBounds,
    chebyshev_apply,
    chebyshev_build,
    kronecker_sum_bounds,
    nullspace_basis,
    spectral_bounds,
)
from .trace import SolverTrace, StopCriterion

__version__ = "0.1.0"
