"""
gmrf.py - Model hyperparameters, partial snapshots and the posterior problem

The prior over a full density vector x is

    P(x) ∝ exp( β·x − (ηε/2) Σ x_i² − (η/2) Σ_{(i,j)∈E} (x_i − x_j)² )
         = exp( β·x − (η/2) xᵀCx )

Observed roads are fixed at their measured values (exact conditioning), which
leaves a Gaussian over the unobserved roads with precision ηA and linear term b.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError, ModelGraphMismatchError, ValidationError
from .road_graph import precision_pattern, subgraph_pattern

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class Model:
    """Learned hyperparameters plus training provenance.

    Attributes:
        beta: Per-vertex linear coefficients (length N)
        eta: Coupling strength, > 0
        epsilon: Regularizer of C used at training time, > 0
        lambda_used: Ridge penalty used at training time, >= 0
        graph_fingerprint: RoadGraph.fingerprint() of the training network
        road_ids: Road id (as text) of each beta entry; None when unknown
    """
    beta: np.ndarray
    eta: float
    epsilon: float
    lambda_used: float
    graph_fingerprint: str
    format_version: int = MODEL_FORMAT_VERSION
    road_ids: tuple = None

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float)
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        if beta.ndim != 1:
            raise ValidationError("beta must be a one-dimensional vector")
        if not np.all(np.isfinite(beta)):
            raise ValidationError("beta must be finite")
        if not (np.isfinite(self.eta) and self.eta > 0):
            raise ValidationError(f"eta must be positive, got {self.eta}")
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if not (np.isfinite(self.lambda_used) and self.lambda_used >= 0):
            raise ValidationError(f"lambda must be nonnegative, got {self.lambda_used}")
        if self.format_version != MODEL_FORMAT_VERSION:
            raise ValidationError(f"Unsupported model format_version {self.format_version}")
        if self.road_ids is not None:
            road_ids = tuple(str(r) for r in self.road_ids)
            object.__setattr__(self, "road_ids", road_ids)
            if len(road_ids) != len(beta):
                raise ValidationError(f"Model lists {len(road_ids)} road ids for {len(beta)} beta values")

    def check_compatible(self, g):
        """Raise ModelGraphMismatchError unless this model was trained on g."""
        if self.graph_fingerprint != g.fingerprint():
            raise ModelGraphMismatchError(
                "Model was trained on a different road network "
                f"(model {self.graph_fingerprint[:12]}..., network {g.fingerprint()[:12]}...)"
            )
        if len(self.beta) != g.n:
            raise ModelGraphMismatchError(f"Model has {len(self.beta)} beta values but network has {g.n} roads")
        if self.road_ids is not None and self.road_ids != _road_ids(g):
            raise ModelGraphMismatchError(
                "Model beta is stored in a different road order than the network; align it with aligned_to()"
            )

    def aligned_to(self, g):
        """This model with beta reordered to g's vertex order.

        The network must be the one the model was trained on; only the internal
        ordering of its roads may differ (e.g. integer ids read back as text).
        """
        if self.graph_fingerprint != g.fingerprint() or self.road_ids is None:
            self.check_compatible(g)
            return self
        target = _road_ids(g)
        if self.road_ids == target:
            return self
        position = {road: k for k, road in enumerate(self.road_ids)}
        order = np.array([position[road] for road in target], dtype=np.int64)
        logger.debug(f"Reordered model beta to the vertex order of a {g.n}-road network")
        return replace(self, beta=self.beta[order], road_ids=target)


def _road_ids(g):
    return tuple(str(label) for label in g.labels)


@dataclass(frozen=True, eq=False)
class PartialSnapshot:
    """Real-time state: observed densities on some roads, the rest unknown.

    Attributes:
        n: Number of roads in the network
        observed_index: Sorted indices of observed roads
        observed_values: Densities aligned with observed_index (finite, >= 0)
        unobserved: Sorted indices of unobserved roads
    """
    n: int
    observed_index: np.ndarray
    observed_values: np.ndarray
    unobserved: np.ndarray

    def __post_init__(self):
        observed_index = np.asarray(self.observed_index, dtype=np.int64)
        observed_values = np.asarray(self.observed_values, dtype=float)
        unobserved = np.asarray(self.unobserved, dtype=np.int64)
        order = np.argsort(observed_index, kind="stable")
        observed_index, observed_values = observed_index[order], observed_values[order]
        unobserved = np.sort(unobserved)
        object.__setattr__(self, "observed_index", observed_index)
        object.__setattr__(self, "observed_values", observed_values)
        object.__setattr__(self, "unobserved", unobserved)

        if len(observed_index) != len(observed_values):
            raise ValidationError("observed_index and observed_values differ in length")
        combined = np.concatenate([observed_index, unobserved])
        if len(combined) != self.n or not np.array_equal(np.sort(combined), np.arange(self.n)):
            raise ValidationError("Observed and unobserved roads must partition the network")
        if not np.all(np.isfinite(observed_values)):
            raise DomainError("Observed densities must be finite")
        if np.any(observed_values < 0):
            bad = observed_index[observed_values < 0][:5].tolist()
            raise DomainError(f"Observed densities must be nonnegative (roads at index {bad})")

    @classmethod
    def from_mapping(cls, n, observed):
        """Build from a {vertex index: density} mapping; missing vertices are unobserved."""
        observed_index = np.array(sorted(observed), dtype=np.int64)
        observed_values = np.array([observed[i] for i in observed_index], dtype=float)
        unobserved = np.setdiff1d(np.arange(n), observed_index)
        return cls(n=n, observed_index=observed_index, observed_values=observed_values, unobserved=unobserved)

    @classmethod
    def from_mask(cls, x, unobserved_mask):
        """Hide the masked entries of a complete density vector."""
        x = np.asarray(x, dtype=float)
        mask = np.asarray(unobserved_mask, dtype=bool)
        observed_index = np.flatnonzero(~mask)
        return cls(n=len(x), observed_index=observed_index,
                   observed_values=x[observed_index], unobserved=np.flatnonzero(mask))

    @property
    def observed(self):
        return dict(zip(self.observed_index.tolist(), self.observed_values.tolist()))

    def observed_vector(self):
        """Full-length vector with observed densities and zeros elsewhere."""
        y = np.zeros(self.n)
        y[self.observed_index] = self.observed_values
        return y


@dataclass(frozen=True, eq=False)
class PosteriorProblem:
    """Gaussian posterior over the unobserved roads: maximize b·x − (η/2) xᵀAx.

    Attributes:
        pattern: Structure of A over the unobserved roads
        bias: b_i = β_i + η Σ_{observed neighbors j} y_j
        eta: Coupling strength
        index_map: Graph vertex index of each row of A
        beta: β restricted to the unobserved roads
        neighbor_mass: Σ of observed neighbor densities per unobserved road
        neighbor_count: Number of observed neighbors per unobserved road
        n_vertices: Size of the full network
        observed_index: Observed vertex indices, for merging results back
        observed_values: Observed densities aligned with observed_index
    """
    pattern: object
    bias: np.ndarray
    eta: float
    index_map: np.ndarray
    beta: np.ndarray
    neighbor_mass: np.ndarray
    neighbor_count: np.ndarray
    n_vertices: int
    observed_index: np.ndarray
    observed_values: np.ndarray

    @property
    def dim(self):
        return self.pattern.dim

    @property
    def is_empty(self):
        return self.pattern.dim == 0

    def isolated_positions(self):
        """Rows whose road has no neighbor at all in the network."""
        return np.flatnonzero(self.pattern.degrees == 0)


def assemble_posterior(g, m, s):
    """Build A and b for one partial snapshot.

    Args:
        g: RoadGraph
        m: Model trained on g
        s: PartialSnapshot over g

    Returns:
        PosteriorProblem; empty when every road is observed
    """
    m.check_compatible(g)
    if s.n != g.n:
        raise ValidationError(f"Snapshot covers {s.n} roads but network has {g.n}")

    unobserved = s.unobserved
    pattern = subgraph_pattern(g, unobserved, m.epsilon)

    y = s.observed_vector()
    observed_flag = np.zeros(g.n)
    observed_flag[s.observed_index] = 1.0
    adjacency = g.adjacency_matrix
    neighbor_mass = (adjacency @ y)[unobserved]
    neighbor_count = (adjacency @ observed_flag)[unobserved].astype(np.int64)

    beta_u = m.beta[unobserved]
    bias = beta_u + m.eta * neighbor_mass

    logger.debug(f"Assembled posterior over {len(unobserved)} of {g.n} roads")
    return PosteriorProblem(
        pattern=pattern,
        bias=bias,
        eta=float(m.eta),
        index_map=unobserved,
        beta=beta_u,
        neighbor_mass=neighbor_mass,
        neighbor_count=neighbor_count,
        n_vertices=g.n,
        observed_index=s.observed_index,
        observed_values=s.observed_values,
    )


def prior_log_density_unnormalized(g, m, x):
    """β·x − (ηε/2) Σ x_i² − (η/2) Σ_E (x_i − x_j)²."""
    x = np.asarray(x, dtype=float)
    if x.shape != (g.n,):
        raise ValidationError(f"Density vector has shape {x.shape}, expected ({g.n},)")
    pattern = precision_pattern(g, m.epsilon)
    return float(np.dot(m.beta, x) - 0.5 * m.eta * pattern.quadratic_form(x))


def posterior_log_density_unnormalized(p, x_u):
    """b·x_u − (η/2) x_uᵀ A x_u; maximized at x_u = A⁻¹b / η."""
    x_u = np.asarray(x_u, dtype=float)
    if x_u.shape != (p.dim,):
        raise ValidationError(f"Vector has shape {x_u.shape}, expected ({p.dim},)")
    return float(np.dot(p.bias, x_u) - 0.5 * p.eta * p.pattern.quadratic_form(x_u))
