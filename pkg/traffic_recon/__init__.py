"""Reconstruction of unobserved road traffic densities with a Gaussian Markov random field.

Typical use:

    from traffic_recon import build_graph, fit, reconstruct_snapshot, PartialSnapshot

    g = build_graph(pairs)
    model = fit(history, g, epsilon=1e-4)
    result = reconstruct_snapshot(g, model, PartialSnapshot.from_mapping(g.n, observed))
"""

from .errors import (
    ConvergenceError,
    DataDegeneracyError,
    DomainError,
    GenerationError,
    ModelGraphMismatchError,
    ReconError,
    StructuralError,
    UndefinedMetricError,
    ValidationError,
)
from .gmrf import (
    Model,
    PartialSnapshot,
    PosteriorProblem,
    assemble_posterior,
    posterior_log_density_unnormalized,
    prior_log_density_unnormalized,
)
from .learn import LearnConfig, SufficientStats, compute_stats, fit, gradient, objective
from .reconstruct import ReconstructionResult, SolverConfig, direct_solve, mean_field_solve, reconstruct_snapshot
from .road_graph import PrecisionPattern, RoadGraph, build_graph, precision_pattern, subgraph_pattern

__version__ = "1.0.0"
