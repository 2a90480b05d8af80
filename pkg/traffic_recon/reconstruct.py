"""
reconstruct.py - Mean-field reconstruction of unobserved road densities

The posterior mean solves η·A·x = b. Each unobserved road is updated from its
neighbors,

    x_i ← ( β_i + η Σ_{j∈∂i} z_j ) / (η A_ii),   z_j = x_j (unobserved) or y_j (observed)

which is a Jacobi or Gauss-Seidel sweep on A·x = b/η. A is strictly diagonally
dominant, so both schemes converge from any starting point. Negative solutions
are clamped to zero only when the result is reported.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import settings
from .errors import ValidationError
from .gmrf import assemble_posterior

logger = logging.getLogger(__name__)

SCHEMES = ("jacobi", "gauss_seidel")
DENSE_SOLVE_LIMIT = 2000


@dataclass(frozen=True)
class SolverConfig:
    """Iteration settings.

    max_iterations=None means 10 sweeps per road of the network.
    """
    tolerance: float = settings.SOLVER_TOLERANCE
    max_iterations: int = None
    scheme: str = settings.SOLVER_SCHEME
    warm_start: bool = False

    def __post_init__(self):
        if not (self.tolerance > 0):
            raise ValidationError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValidationError(f"max_iterations must be at least 1, got {self.max_iterations}")
        if self.scheme not in SCHEMES:
            raise ValidationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")

    def iteration_cap(self, n_vertices):
        if self.max_iterations is not None:
            return self.max_iterations
        return max(10 * n_vertices, 1)


@dataclass(frozen=True, eq=False)
class ReconstructionResult:
    """Reconstructed densities plus solver diagnostics.

    Attributes:
        estimates: Full-length vector; clamped x* on unobserved roads, y on observed ones
        raw_estimates: Unclamped solution over the unobserved roads
        unobserved: Vertex indices aligned with raw_estimates
        iterations_used: Number of sweeps performed
        final_residual: Max absolute coordinate change of the last sweep
        converged: Whether final_residual fell below the tolerance
        isolated: Unobserved vertices without any neighbor (estimate is β/(ηε))
    """
    estimates: np.ndarray
    raw_estimates: np.ndarray
    unobserved: np.ndarray
    iterations_used: int
    final_residual: float
    converged: bool
    isolated: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def merge_estimates(p, raw):
    """Clamp the unobserved solution at zero and merge it with the observations."""
    estimates = np.zeros(p.n_vertices)
    estimates[p.observed_index] = p.observed_values
    estimates[p.index_map] = np.maximum(raw, 0.0)
    return estimates


def _warm_start(p):
    """Average of observed neighbors, or zero when a road has none."""
    start = np.zeros(p.dim)
    has_neighbors = p.neighbor_count > 0
    start[has_neighbors] = p.neighbor_mass[has_neighbors] / p.neighbor_count[has_neighbors]
    return start


def _result(p, raw, iterations, residual, converged):
    isolated = p.index_map[p.isolated_positions()]
    if len(isolated):
        logger.warning(f"{len(isolated)} unobserved road(s) have no neighbors; their estimate is beta/(eta*epsilon)")
    return ReconstructionResult(
        estimates=merge_estimates(p, raw),
        raw_estimates=raw,
        unobserved=p.index_map,
        iterations_used=iterations,
        final_residual=float(residual),
        converged=bool(converged),
        isolated=isolated,
    )


def mean_field_solve(p, cfg=None, initial=None):
    """Solve the posterior problem with the mean-field fixed-point iteration.

    Args:
        p: PosteriorProblem
        cfg: SolverConfig (defaults apply when None)
        initial: Optional starting vector over the unobserved roads

    Returns:
        ReconstructionResult; converged=False when the sweep cap is reached
    """
    cfg = cfg or SolverConfig()
    if p.is_empty:
        return _result(p, np.zeros(0), 0, 0.0, True)

    if initial is not None:
        x = np.array(initial, dtype=float)
        if x.shape != (p.dim,):
            raise ValidationError(f"initial has shape {x.shape}, expected ({p.dim},)")
    elif cfg.warm_start:
        x = _warm_start(p)
    else:
        x = np.zeros(p.dim)

    matrix = p.pattern.to_sparse("csr")
    rhs = p.bias / p.eta
    cap = cfg.iteration_cap(p.n_vertices)

    if cfg.scheme == "jacobi":
        diag = p.pattern.diag
        off = sp.diags(diag).tocsr() - matrix

        def sweep(current):
            return (rhs + off @ current) / diag
    else:
        # (D - L) x_new = b/η + U x_old; the triangular factor is computed once
        lower = splu(sp.tril(matrix).tocsc(), permc_spec="NATURAL", diag_pivot_thresh=0.0)
        upper = sp.triu(matrix, k=1).tocsr()

        def sweep(current):
            return lower.solve(rhs - upper @ current)

    residual = np.inf
    iterations = 0
    while iterations < cap:
        updated = sweep(x)
        residual = float(np.max(np.abs(updated - x)))
        x = updated
        iterations += 1
        if residual < cfg.tolerance:
            break

    converged = residual < cfg.tolerance
    if not converged:
        logger.warning(f"Mean-field iteration stopped after {iterations} sweeps with residual {residual:.3e}")
    else:
        logger.debug(f"Mean-field {cfg.scheme} converged in {iterations} sweeps (residual {residual:.3e})")
    return _result(p, x, iterations, residual, converged)


def direct_solve(p):
    """Exact posterior mean A⁻¹b/η by Cholesky (dense) or sparse LU factorization."""
    if p.is_empty:
        return np.zeros(0)
    if p.dim <= DENSE_SOLVE_LIMIT:
        factor = scipy.linalg.cho_factor(p.eta * p.pattern.to_dense())
        return scipy.linalg.cho_solve(factor, p.bias)
    lu = splu((p.eta * p.pattern.to_sparse()).tocsc())
    return lu.solve(p.bias)


def jacobi_iteration_matrix(p):
    """Dense D⁻¹(D − A); its spectral radius is below one for every problem."""
    dense = p.pattern.to_dense()
    diag = np.diag(dense)
    return (np.diag(diag) - dense) / diag[:, None]


def reconstruct_snapshot(g, m, s, cfg=None):
    """Reconstruct one partial snapshot end to end.

    Step 1 takes the observed/unobserved split from s, step 2 builds A and b,
    step 3 iterates to the fixed point and clamps.
    """
    problem = assemble_posterior(g, m, s)
    if problem.is_empty:
        logger.info("Every road is observed; nothing to reconstruct")
    return mean_field_solve(problem, cfg)
