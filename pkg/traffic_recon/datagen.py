"""
datagen.py - Synthetic road networks, historical snapshots and sensor masks

Everything here is a pure function of its spec and seed. Snapshot k draws its
random numbers from the k-th child of the TrafficSpec seed, so results do not depend
on how work is scheduled.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, minimum_spanning_tree, shortest_path
from scipy.sparse.linalg import factorized
from scipy.spatial import Delaunay, QhullError

from .errors import GenerationError, ValidationError
from .gmrf import PartialSnapshot
from .road_graph import build_graph, precision_pattern

logger = logging.getLogger(__name__)

NETWORK_KINDS = ("grid", "random_planar", "file")
MAX_RETRIES = 10
DENSE_SAMPLER_LIMIT = 2000


@dataclass(frozen=True)
class NetworkSpec:
    """Which network to build.

    kind="grid" uses width and height, kind="random_planar" uses n and density,
    kind="file" loads path.
    """
    kind: str
    width: int = 1
    height: int = 1
    n: int = 1
    density: float = 1.0
    seed: int = 0
    path: str = None

    def __post_init__(self):
        if self.kind not in NETWORK_KINDS:
            raise ValidationError(f"kind must be one of {NETWORK_KINDS}, got {self.kind!r}")
        if self.kind == "grid" and (self.width < 1 or self.height < 1):
            raise ValidationError("grid width and height must be at least 1")
        if self.kind == "random_planar":
            if self.n < 1:
                raise ValidationError("random_planar needs n >= 1")
            if not (0 < self.density <= 1):
                raise ValidationError("density must lie in (0, 1]")
        if self.kind == "file" and not self.path:
            raise ValidationError("kind='file' needs a path")


@dataclass(frozen=True, eq=False)
class GmrfTruth:
    """Ground truth drawn exactly from the prior with these hyperparameters."""
    beta: np.ndarray
    eta: float
    epsilon: float

    def __post_init__(self):
        if not (self.eta > 0 and self.epsilon > 0):
            raise ValidationError("gmrf truth needs eta > 0 and epsilon > 0")


@dataclass(frozen=True)
class HotspotTruth:
    """Congestion bumps around center roads decaying with hop distance.

    Each snapshot scales every center's peak by a lognormal factor with the
    given noise level, so snapshots differ while keeping the same shape.
    """
    centers: tuple
    peak: float
    decay: float
    noise: float = 0.2
    base: float = 0.0

    def __post_init__(self):
        if self.peak <= 0:
            raise ValidationError("hotspot peak must be positive")
        if self.decay <= 0:
            raise ValidationError("hotspot decay must be positive")
        if self.noise < 0 or self.base < 0:
            raise ValidationError("hotspot noise and base must be nonnegative")
        if not self.centers:
            raise ValidationError("hotspot truth needs at least one center")


@dataclass(frozen=True, eq=False)
class TrafficSpec:
    ground_truth: object
    snapshots: int
    clamp_negative: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.snapshots < 1:
            raise ValidationError("snapshots must be at least 1")

    def metadata(self):
        truth = self.ground_truth
        if isinstance(truth, GmrfTruth):
            described = {"mode": "gmrf", "eta": truth.eta, "epsilon": truth.epsilon,
                         "beta": np.asarray(truth.beta, dtype=float).tolist()}
        else:
            described = {"mode": "hotspot", "centers": list(truth.centers), "peak": truth.peak,
                         "decay": truth.decay, "noise": truth.noise, "base": truth.base}
        return {"ground_truth": described, "snapshots": self.snapshots,
                "clamp_negative": self.clamp_negative, "seed": self.seed}


def _grid(width, height):
    width_digits = len(str(width * height - 1))
    labels = [f"{i:0{width_digits}d}" for i in range(width * height)]
    pairs = []
    for r in range(height):
        for c in range(width):
            idx = r * width + c
            if c + 1 < width:
                pairs.append((labels[idx], labels[idx + 1]))
            if r + 1 < height:
                pairs.append((labels[idx], labels[idx + width]))
    coordinates = {labels[r * width + c]: [float(c), float(r)] for r in range(height) for c in range(width)}
    return build_graph(pairs, vertices=labels, metadata={"coordinates": coordinates})


def _triangulation_edges(points):
    """Unique undirected edges of the Delaunay triangulation (complete graph below 4 points)."""
    n = len(points)
    if n < 4:
        return np.array([(i, j) for i in range(n) for j in range(i + 1, n)], dtype=np.int64).reshape(-1, 2)
    tri = Delaunay(points)
    simplices = tri.simplices
    pairs = np.concatenate([simplices[:, [0, 1]], simplices[:, [1, 2]], simplices[:, [0, 2]]])
    return np.unique(np.sort(pairs, axis=1), axis=0)


def _random_planar(n, density, seed):
    """Connected planar graph: a Euclidean spanning tree of a Delaunay triangulation
    plus a random share of the remaining triangulation edges.

    density is the fraction of triangulation edges kept.
    """
    seeds = np.random.SeedSequence(seed).spawn(MAX_RETRIES)
    last_error = None
    for attempt, child in enumerate(seeds):
        rng = np.random.default_rng(child)
        points = rng.random((n, 2))
        try:
            candidates = _triangulation_edges(points)
        except QhullError as e:
            last_error = e
            logger.debug(f"Triangulation attempt {attempt} failed: {e}")
            continue

        target = int(round(density * len(candidates)))
        if target < n - 1:
            raise GenerationError(
                f"density {density} keeps {target} of {len(candidates)} edges; "
                f"a connected network on {n} roads needs at least {n - 1}"
            )

        if len(candidates):
            lengths = np.linalg.norm(points[candidates[:, 0]] - points[candidates[:, 1]], axis=1)
            # zero-length edges would vanish from the sparse matrix
            weights = sp.coo_matrix((lengths + 1e-12, (candidates[:, 0], candidates[:, 1])), shape=(n, n))
            tree = minimum_spanning_tree(weights.tocsr()).tocoo()
            tree_edges = np.unique(np.sort(np.column_stack([tree.row, tree.col]), axis=1), axis=0)
        else:
            tree_edges = np.zeros((0, 2), dtype=np.int64)

        tree_keys = set(map(tuple, tree_edges.tolist()))
        rest = np.array([pair for pair in candidates.tolist() if tuple(pair) not in tree_keys],
                        dtype=np.int64).reshape(-1, 2)
        extra = target - len(tree_edges)
        chosen = rest[np.sort(rng.choice(len(rest), size=extra, replace=False))] if extra > 0 else rest[:0]
        edges = np.concatenate([tree_edges, chosen]) if len(chosen) else tree_edges

        if n > 1:
            graph_matrix = sp.coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
            components, _ = connected_components(graph_matrix, directed=False)
            if components != 1:
                last_error = GenerationError(f"attempt {attempt} produced {components} components")
                continue

        width_digits = len(str(n - 1))
        labels = [f"{i:0{width_digits}d}" for i in range(n)]
        pairs = [(labels[i], labels[j]) for i, j in edges.tolist()]
        coordinates = {labels[i]: points[i].tolist() for i in range(n)}
        return build_graph(pairs, vertices=labels, metadata={"coordinates": coordinates})

    raise GenerationError(f"Could not generate a random planar network after {MAX_RETRIES} attempts: {last_error}")


def generate_network(spec):
    """Build the road network described by a NetworkSpec."""
    if spec.kind == "grid":
        graph = _grid(spec.width, spec.height)
    elif spec.kind == "random_planar":
        graph = _random_planar(spec.n, spec.density, spec.seed)
    else:
        from .file_formats import read_network
        graph = read_network(spec.path)
    logger.info(f"Generated {spec.kind} network: {graph.n} roads, {graph.num_edges} edges")
    return graph


def _snapshot_generators(seed, count):
    return [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(count)]


def _sample_gmrf(g, truth, generators):
    """Exact draws from N(C⁻¹β/η, (ηC)⁻¹)."""
    beta = np.asarray(truth.beta, dtype=float)
    if beta.shape != (g.n,):
        raise ValidationError(f"gmrf beta has {beta.size} values but network has {g.n} roads")
    pattern = precision_pattern(g, truth.epsilon)
    precision = truth.eta * pattern.to_sparse("csc")
    k = len(generators)

    if g.n <= DENSE_SAMPLER_LIMIT:
        # ηC = L Lᵀ; solving Lᵀ z = w gives Cov(z) = (ηC)⁻¹
        lower = scipy.linalg.cholesky(precision.toarray(), lower=True)
        mean = scipy.linalg.cho_solve((lower, True), beta)
        noise = np.column_stack([rng.standard_normal(g.n) for rng in generators]) if k else np.zeros((g.n, 0))
        draws = scipy.linalg.solve_triangular(lower.T, noise, lower=False)
    else:
        # ηC = BᵀB with B = √η [√ε I; D] (D the edge incidence matrix), so
        # (ηC)⁻¹Bᵀw has covariance (ηC)⁻¹ and needs only one factorization
        solve = factorized(precision)
        mean = solve(beta)
        m_edges = g.num_edges
        incidence = sp.coo_matrix(
            (np.concatenate([np.ones(m_edges), -np.ones(m_edges)]),
             (np.concatenate([np.arange(m_edges)] * 2), np.concatenate([g.edges[:, 0], g.edges[:, 1]]))),
            shape=(m_edges, g.n),
        ).tocsr()
        draws = np.empty((g.n, k))
        for column, rng in enumerate(generators):
            w_vertex = rng.standard_normal(g.n)
            w_edge = rng.standard_normal(m_edges)
            rhs = np.sqrt(truth.eta) * (np.sqrt(truth.epsilon) * w_vertex + incidence.T @ w_edge)
            draws[:, column] = solve(rhs)

    return (mean[:, None] + draws).T


def _sample_hotspot(g, truth, generators):
    centers = [g.index_of(center) if center in g.label_index else int(center) for center in truth.centers]
    for center in centers:
        if not 0 <= center < g.n:
            raise ValidationError(f"hotspot center {center} is not a road of the network")
    hops = shortest_path(g.adjacency_matrix, directed=False, unweighted=True, indices=centers)
    with np.errstate(over="ignore", under="ignore"):
        profile = np.exp(-truth.decay * hops)
    profile[~np.isfinite(hops)] = 0.0

    rows = []
    for rng in generators:
        amplitude = truth.peak * np.exp(truth.noise * rng.standard_normal(len(centers)))
        rows.append(truth.base + amplitude @ profile)
    return np.array(rows).reshape(len(generators), g.n)


def sample_snapshots(g, spec):
    """Draw spec.snapshots complete density vectors, shape (K, N)."""
    generators = _snapshot_generators(spec.seed, spec.snapshots)
    truth = spec.ground_truth
    if isinstance(truth, GmrfTruth):
        values = _sample_gmrf(g, truth, generators)
    elif isinstance(truth, HotspotTruth):
        values = _sample_hotspot(g, truth, generators)
    else:
        raise ValidationError(f"Unknown ground truth {type(truth).__name__}")

    if spec.clamp_negative:
        negatives = int(np.sum(values < 0))
        if negatives:
            logger.info(f"Clamped {negatives} negative densities to zero")
        values = np.maximum(values, 0.0)
    logger.info(f"Sampled {spec.snapshots} snapshots over {g.n} roads")
    return values


def mean_density_field(g, level=0.3, amplitude=0.1, roughness=0.0, seed=0):
    """A positive per-road mean: a smooth swing over the network coordinates
    plus an independent uniform offset of up to ±roughness per road.

    Falls back to vertex order when the network has no coordinates.
    """
    coordinates = g.metadata.get("coordinates")
    if coordinates:
        xy = np.array([coordinates[str(label)] if str(label) in coordinates else coordinates[label]
                       for label in g.labels], dtype=float)
        span = np.ptp(xy, axis=0)
        span[span == 0] = 1.0
        u = (xy - xy.min(axis=0)) / span
    else:
        t = np.linspace(0.0, 1.0, g.n)
        u = np.column_stack([t, t])
    mean = level + amplitude * np.sin(np.pi * u[:, 0]) * np.cos(np.pi * u[:, 1])
    if roughness > 0:
        mean = mean + roughness * np.random.default_rng(seed).uniform(-1.0, 1.0, g.n)
    return mean


def gmrf_truth_for_mean(g, mean, eta, epsilon):
    """GmrfTruth whose prior mean is `mean`: β = η C mean."""
    pattern = precision_pattern(g, epsilon)
    beta = eta * (pattern.to_sparse() @ np.asarray(mean, dtype=float))
    return GmrfTruth(beta=beta, eta=eta, epsilon=epsilon)


def mask_snapshot(s, p, seed):
    """Hide each road independently with probability p.

    Args:
        s: Complete density vector
        p: Masking probability in [0, 1]
        seed: int or numpy SeedSequence

    Returns:
        PartialSnapshot
    """
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"p must lie in [0, 1], got {p}")
    s = np.asarray(s, dtype=float)
    rng = np.random.default_rng(seed)
    hidden = rng.random(len(s)) < p
    return PartialSnapshot.from_mask(s, hidden)
