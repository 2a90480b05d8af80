"""
road_graph.py - Undirected road network and its precision-matrix structure

Roads are vertices; two roads sharing an intersection are joined by an edge.
Road direction is ignored, so (i, j) and (j, i) describe the same edge.

Internal vertex indices are 0..N-1, assigned by sorting the external road ids
ascending. The label map is persisted so files keep using road ids.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import StructuralError, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RoadGraph:
    """Immutable undirected simple graph of road segments.

    Attributes:
        n: Number of vertices
        edges: (E, 2) int array of index pairs with i < j, sorted lexicographically
        labels: External road id for each internal index
        metadata: Opaque per-graph data (e.g. coordinates); never used by inference
    """
    n: int
    edges: np.ndarray
    labels: tuple
    metadata: dict = field(default_factory=dict)

    @cached_property
    def adjacency(self):
        """Sorted neighbor index tuple per vertex."""
        neighbors = [[] for _ in range(self.n)]
        for i, j in self.edges:
            neighbors[i].append(int(j))
            neighbors[j].append(int(i))
        return tuple(tuple(sorted(row)) for row in neighbors)

    @cached_property
    def degrees(self):
        counts = np.zeros(self.n, dtype=np.int64)
        if len(self.edges):
            np.add.at(counts, self.edges[:, 0], 1)
            np.add.at(counts, self.edges[:, 1], 1)
        counts.setflags(write=False)
        return counts

    @cached_property
    def label_index(self):
        return {label: idx for idx, label in enumerate(self.labels)}

    @cached_property
    def adjacency_matrix(self):
        """Symmetric 0/1 CSR matrix with a one per edge orientation."""
        rows = np.concatenate([self.edges[:, 0], self.edges[:, 1]]) if len(self.edges) else np.zeros(0, dtype=np.int64)
        cols = np.concatenate([self.edges[:, 1], self.edges[:, 0]]) if len(self.edges) else np.zeros(0, dtype=np.int64)
        data = np.ones(len(rows), dtype=float)
        return sp.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))

    @property
    def num_edges(self):
        return int(len(self.edges))

    def neighbors(self, i):
        return self.adjacency[i]

    def index_of(self, label):
        try:
            return self.label_index[label]
        except KeyError:
            raise StructuralError(f"Unknown road id: {label!r}") from None

    def fingerprint(self):
        """Canonical hash of the sorted vertex ids and sorted canonical edge pairs."""
        return self._fingerprint

    @cached_property
    def _fingerprint(self):
        vertices = sorted(str(label) for label in self.labels)
        pairs = sorted(
            sorted((str(self.labels[i]), str(self.labels[j])))
            for i, j in self.edges
        )
        payload = json.dumps({"vertices": vertices, "edges": pairs}, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def relabeled(self, permutation):
        """Return the same network with vertex i moved to index permutation[i].

        Labels travel with their vertices, so the result describes the same roads
        under a different internal ordering. Used to check permutation equivariance.
        """
        permutation = np.asarray(permutation, dtype=np.int64)
        if sorted(permutation.tolist()) != list(range(self.n)):
            raise ValidationError("permutation must be a rearrangement of 0..N-1")
        labels = [None] * self.n
        for old, new in enumerate(permutation):
            labels[new] = self.labels[old]
        edges = _canonical_edges(permutation[self.edges] if len(self.edges) else self.edges)
        return RoadGraph(n=self.n, edges=edges, labels=tuple(labels), metadata=dict(self.metadata))


@dataclass(frozen=True, eq=False)
class PrecisionPattern:
    """Structure of the precision matrix C (or of its unobserved block A).

    Only the diagonal and the edge list are stored, never a dense matrix.

    Attributes:
        dim: Matrix dimension
        diag: Diagonal values epsilon + |neighbors| (neighbors counted in the full graph)
        offdiag: (E', 2) index pairs carrying the -1 entries
        epsilon: Regularizer, > 0
        degrees: Full-graph degree of each row's vertex
    """
    dim: int
    diag: np.ndarray
    offdiag: np.ndarray
    epsilon: float
    degrees: np.ndarray

    def to_sparse(self, fmt="csr"):
        """Assemble the pattern as a scipy sparse matrix."""
        if len(self.offdiag):
            rows = np.concatenate([np.arange(self.dim), self.offdiag[:, 0], self.offdiag[:, 1]])
            cols = np.concatenate([np.arange(self.dim), self.offdiag[:, 1], self.offdiag[:, 0]])
            data = np.concatenate([self.diag, -np.ones(2 * len(self.offdiag))])
        else:
            rows = cols = np.arange(self.dim)
            data = np.asarray(self.diag, dtype=float)
        matrix = sp.coo_matrix((data, (rows, cols)), shape=(self.dim, self.dim))
        return matrix.asformat(fmt)

    def to_dense(self):
        return self.to_sparse().toarray()

    def offdiag_counts(self):
        counts = np.zeros(self.dim, dtype=np.int64)
        if len(self.offdiag):
            np.add.at(counts, self.offdiag[:, 0], 1)
            np.add.at(counts, self.offdiag[:, 1], 1)
        return counts

    def dominance_margin(self):
        """diag(i) minus the off-diagonal magnitude sum of row i; positive everywhere."""
        return self.diag - self.offdiag_counts()

    def quadratic_form(self, x):
        """x^T M x evaluated from the structure, without assembling the matrix."""
        x = np.asarray(x, dtype=float)
        value = float(np.dot(self.diag, x * x))
        if len(self.offdiag):
            value -= 2.0 * float(np.dot(x[self.offdiag[:, 0]], x[self.offdiag[:, 1]]))
        return value


def _canonical_edges(index_pairs):
    """Sort each pair, drop repeats and order the edge list lexicographically."""
    pairs = np.asarray(index_pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = np.sort(pairs, axis=1)
    pairs = np.unique(pairs, axis=0)
    pairs.setflags(write=False)
    return pairs


def build_graph(pairs, vertices=None, metadata=None):
    """Build a RoadGraph from (id, id) pairs.

    Args:
        pairs: Sequence of (id, id) pairs; orientation and repeats collapse to one edge
        vertices: Optional explicit id list; the only way to declare isolated roads
        metadata: Optional opaque metadata (e.g. coordinates) carried on the graph

    Returns:
        RoadGraph with ids sorted ascending onto indices 0..N-1
    """
    pairs = [tuple(pair) for pair in pairs]
    for pair in pairs:
        if len(pair) != 2:
            raise StructuralError(f"Edge must have exactly two endpoints: {pair!r}")
        if pair[0] == pair[1]:
            raise StructuralError(f"Self-loop on road {pair[0]!r} is not allowed")

    ids = set(vertices or ())
    for a, b in pairs:
        ids.add(a)
        ids.add(b)
    try:
        labels = tuple(sorted(ids))
    except TypeError as e:
        raise StructuralError(f"Road ids are not mutually comparable: {e}") from e

    index = {label: idx for idx, label in enumerate(labels)}
    index_pairs = [(index[a], index[b]) for a, b in pairs]
    edges = _canonical_edges(index_pairs)

    graph = RoadGraph(n=len(labels), edges=edges, labels=labels, metadata=dict(metadata or {}))
    logger.debug(f"Built road graph with {graph.n} vertices and {graph.num_edges} edges")
    return graph


def _check_epsilon(epsilon):
    if not np.isfinite(epsilon) or epsilon <= 0:
        raise ValidationError(f"epsilon must be a positive finite number, got {epsilon}")


def precision_pattern(g, epsilon):
    """Structure of C: epsilon + degree on the diagonal, -1 on every edge."""
    _check_epsilon(epsilon)
    degrees = np.asarray(g.degrees, dtype=np.int64)
    return PrecisionPattern(
        dim=g.n,
        diag=epsilon + degrees.astype(float),
        offdiag=g.edges,
        epsilon=float(epsilon),
        degrees=degrees,
    )


def subgraph_pattern(g, unobserved, epsilon):
    """Structure of A, the block of C restricted to the unobserved vertices.

    The diagonal keeps the full-graph degree (observed neighbors included);
    only edges with both ends unobserved contribute -1 entries. Rows follow
    the ascending order of the unobserved vertex indices.
    """
    _check_epsilon(epsilon)
    unobserved = np.unique(np.asarray(list(unobserved), dtype=np.int64))
    if len(unobserved) and (unobserved[0] < 0 or unobserved[-1] >= g.n):
        raise StructuralError(f"Unobserved set references vertices outside 0..{g.n - 1}")

    position = np.full(g.n, -1, dtype=np.int64)
    position[unobserved] = np.arange(len(unobserved))

    if g.num_edges:
        internal = (position[g.edges[:, 0]] >= 0) & (position[g.edges[:, 1]] >= 0)
        offdiag = position[g.edges[internal]]
    else:
        offdiag = np.zeros((0, 2), dtype=np.int64)

    degrees = np.asarray(g.degrees, dtype=np.int64)[unobserved]
    return PrecisionPattern(
        dim=len(unobserved),
        diag=epsilon + degrees.astype(float),
        offdiag=offdiag,
        epsilon=float(epsilon),
        degrees=degrees,
    )
