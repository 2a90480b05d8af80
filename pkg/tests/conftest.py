import os

import hypothesis
import numpy as np
import pytest

from traffic_recon.gmrf import Model
from traffic_recon.road_graph import build_graph

np.seterr(all="warn")

hypothesis.settings.register_profile("dev", deadline=None, max_examples=50)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=5)
hypothesis.settings.register_profile(
    "ci", deadline=None, max_examples=300, suppress_health_check=[hypothesis.HealthCheck.too_slow]
)
hypothesis.settings.register_profile("debugger", deadline=None, report_multiple_bugs=False)
hypothesis.settings.load_profile(os.environ.get("RECON_HYPOTHESIS_PROFILE", "dev"))

TOY_EDGES = [(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4), (4, 5), (4, 6), (5, 6)]


@pytest.fixture
def toy_graph():
    """Six roads: a 4-clique {1,2,3,4} plus a triangle {4,5,6}."""
    return build_graph(TOY_EDGES)


@pytest.fixture
def make_model():
    def _make(g, beta=None, eta=1.0, epsilon=1e-4, lam=0.0):
        beta = np.zeros(g.n) if beta is None else np.asarray(beta, dtype=float)
        return Model(beta=beta, eta=eta, epsilon=epsilon, lambda_used=lam, graph_fingerprint=g.fingerprint(),
                     road_ids=g.labels)
    return _make


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
