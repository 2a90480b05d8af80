import numpy as np
import pytest
from scipy.sparse.csgraph import connected_components

from traffic_recon import datagen
from traffic_recon.datagen import (
    GmrfTruth,
    HotspotTruth,
    NetworkSpec,
    TrafficSpec,
    generate_network,
    gmrf_truth_for_mean,
    mask_snapshot,
    mean_density_field,
    sample_snapshots,
)
from traffic_recon.errors import GenerationError, ValidationError
from traffic_recon.road_graph import build_graph, precision_pattern


@pytest.mark.parametrize("width,height", [(1, 1), (3, 1), (4, 3), (10, 10)])
def test_grid_counts(width, height):
    g = generate_network(NetworkSpec(kind="grid", width=width, height=height))
    assert g.n == width * height
    assert g.num_edges == (width - 1) * height + width * (height - 1)


def test_grid_labels_and_coordinates():
    g = generate_network(NetworkSpec(kind="grid", width=4, height=3))
    assert g.labels[0] == "00"
    assert g.labels[-1] == "11"
    assert g.metadata["coordinates"]["05"] == [1.0, 1.0]


def test_grid_row_degrees():
    g = generate_network(NetworkSpec(kind="grid", width=3, height=1))
    assert g.degrees.tolist() == [1, 2, 1]


@pytest.mark.parametrize("kwargs", [
    {"kind": "ring"},
    {"kind": "grid", "width": 0},
    {"kind": "random_planar", "n": 0},
    {"kind": "random_planar", "n": 10, "density": 0.0},
    {"kind": "random_planar", "n": 10, "density": 1.5},
    {"kind": "file"},
])
def test_network_spec_validation(kwargs):
    with pytest.raises(ValidationError):
        NetworkSpec(**kwargs)


def test_random_planar_is_connected_and_deterministic():
    spec = NetworkSpec(kind="random_planar", n=200, density=0.7, seed=5)
    g = generate_network(spec)
    again = generate_network(spec)
    assert g.n == 200
    assert g.num_edges >= 199
    components, _ = connected_components(g.adjacency_matrix, directed=False)
    assert components == 1
    assert g.fingerprint() == again.fingerprint()
    assert g.metadata == again.metadata
    other = generate_network(NetworkSpec(kind="random_planar", n=200, density=0.7, seed=6))
    assert other.fingerprint() != g.fingerprint()


def test_random_planar_edge_budget():
    g_sparse = generate_network(NetworkSpec(kind="random_planar", n=300, density=0.7, seed=1))
    g_full = generate_network(NetworkSpec(kind="random_planar", n=300, density=1.0, seed=1))
    # same points, so the full network is the whole triangulation
    assert g_sparse.num_edges == round(0.7 * g_full.num_edges)
    assert g_full.num_edges <= 3 * 300 - 6


@pytest.mark.parametrize("n", [1, 2, 3])
def test_random_planar_tiny(n):
    g = generate_network(NetworkSpec(kind="random_planar", n=n, density=1.0, seed=0))
    assert g.n == n
    assert g.num_edges == n * (n - 1) // 2


def test_random_planar_density_too_low():
    with pytest.raises(GenerationError):
        generate_network(NetworkSpec(kind="random_planar", n=100, density=0.1, seed=0))


def test_snapshots_deterministic_and_prefix_stable(toy_graph):
    truth = GmrfTruth(beta=np.full(6, 0.5), eta=2.0, epsilon=0.1)
    five = sample_snapshots(toy_graph, TrafficSpec(ground_truth=truth, snapshots=5, seed=3))
    three = sample_snapshots(toy_graph, TrafficSpec(ground_truth=truth, snapshots=3, seed=3))
    assert five.shape == (5, 6)
    np.testing.assert_allclose(five[:3], three, rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(five, sample_snapshots(toy_graph, TrafficSpec(ground_truth=truth, snapshots=5, seed=3)))
    assert not np.allclose(five, sample_snapshots(toy_graph, TrafficSpec(ground_truth=truth, snapshots=5, seed=4)))


def test_clamp_negative(toy_graph):
    truth = GmrfTruth(beta=np.full(6, -0.05), eta=1.0, epsilon=0.1)
    raw = sample_snapshots(toy_graph, TrafficSpec(ground_truth=truth, snapshots=50, seed=1))
    clamped = sample_snapshots(toy_graph, TrafficSpec(ground_truth=truth, snapshots=50, seed=1, clamp_negative=True))
    assert np.any(raw < 0)
    np.testing.assert_array_equal(clamped, np.maximum(raw, 0.0))


def test_gmrf_beta_shape_checked(toy_graph):
    truth = GmrfTruth(beta=np.zeros(4), eta=1.0, epsilon=0.1)
    with pytest.raises(ValidationError):
        sample_snapshots(toy_graph, TrafficSpec(ground_truth=truth, snapshots=2))


def test_truth_validation():
    with pytest.raises(ValidationError):
        GmrfTruth(beta=np.zeros(2), eta=0.0, epsilon=0.1)
    with pytest.raises(ValidationError):
        HotspotTruth(centers=("0",), peak=0.0, decay=1.0)
    with pytest.raises(ValidationError):
        HotspotTruth(centers=(), peak=1.0, decay=1.0)
    with pytest.raises(ValidationError):
        TrafficSpec(ground_truth=None, snapshots=0)


def test_hotspot_profile():
    g = generate_network(NetworkSpec(kind="grid", width=5, height=1))
    truth = HotspotTruth(centers=("0",), peak=1.0, decay=1.0, noise=0.0, base=0.1)
    values = sample_snapshots(g, TrafficSpec(ground_truth=truth, snapshots=2, seed=0))
    np.testing.assert_allclose(values[0], 0.1 + np.exp(-np.arange(5.0)))
    np.testing.assert_array_equal(values[0], values[1])


def test_hotspot_sharp_decay():
    g = generate_network(NetworkSpec(kind="grid", width=5, height=5))
    truth = HotspotTruth(centers=("12",), peak=2.0, decay=50.0, noise=0.0)
    values = sample_snapshots(g, TrafficSpec(ground_truth=truth, snapshots=1))[0]
    assert values[g.index_of("12")] == pytest.approx(2.0)
    assert np.all(np.delete(values, g.index_of("12")) < 1e-20)


def test_hotspot_noise_varies_snapshots():
    g = generate_network(NetworkSpec(kind="grid", width=4, height=4))
    truth = HotspotTruth(centers=("00", "15"), peak=1.0, decay=0.5)
    values = sample_snapshots(g, TrafficSpec(ground_truth=truth, snapshots=3, seed=9))
    assert np.all(values > 0)
    assert not np.allclose(values[0], values[1])


def test_hotspot_unreachable_roads_get_base():
    g = build_graph([("a", "b")], vertices=["a", "b", "c"])
    truth = HotspotTruth(centers=("a",), peak=1.0, decay=1.0, noise=0.0, base=0.2)
    values = sample_snapshots(g, TrafficSpec(ground_truth=truth, snapshots=1))[0]
    np.testing.assert_allclose(values, [1.2, 0.2 + np.exp(-1.0), 0.2])


def test_hotspot_unknown_center():
    g = generate_network(NetworkSpec(kind="grid", width=3, height=3))
    truth = HotspotTruth(centers=("9",), peak=1.0, decay=1.0)
    with pytest.raises(ValidationError):
        sample_snapshots(g, TrafficSpec(ground_truth=truth, snapshots=1))


def test_mean_density_field():
    g = generate_network(NetworkSpec(kind="grid", width=6, height=6))
    smooth = mean_density_field(g, level=0.3, amplitude=0.1)
    assert np.all(smooth >= 0.2 - 1e-12)
    assert np.all(smooth <= 0.4 + 1e-12)
    rough = mean_density_field(g, level=0.3, amplitude=0.1, roughness=0.05, seed=2)
    assert np.max(np.abs(rough - smooth)) <= 0.05
    np.testing.assert_array_equal(rough, mean_density_field(g, level=0.3, amplitude=0.1, roughness=0.05, seed=2))


def test_mean_density_field_without_coordinates(toy_graph):
    mean = mean_density_field(toy_graph, level=0.5, amplitude=0.0)
    np.testing.assert_allclose(mean, np.full(6, 0.5))


def test_truth_for_mean_has_that_mean(toy_graph, rng):
    mean = rng.uniform(0.1, 0.5, 6)
    truth = gmrf_truth_for_mean(toy_graph, mean, eta=3.0, epsilon=0.2)
    dense = precision_pattern(toy_graph, 0.2).to_dense()
    np.testing.assert_allclose(np.linalg.solve(dense, truth.beta) / truth.eta, mean, rtol=1e-10)


def test_metadata_records_truth(toy_graph):
    spec = TrafficSpec(ground_truth=GmrfTruth(beta=np.ones(6), eta=2.0, epsilon=0.1), snapshots=4, seed=8)
    meta = spec.metadata()
    assert meta["ground_truth"]["mode"] == "gmrf"
    assert meta["ground_truth"]["beta"] == [1.0] * 6
    assert meta["seed"] == 8
    hotspot = TrafficSpec(ground_truth=HotspotTruth(centers=("1",), peak=1.0, decay=2.0), snapshots=1)
    assert hotspot.metadata()["ground_truth"]["centers"] == ["1"]


def test_mask_extremes():
    s = np.linspace(0.0, 1.0, 20)
    nothing_hidden = mask_snapshot(s, 0.0, 1)
    assert len(nothing_hidden.unobserved) == 0
    all_hidden = mask_snapshot(s, 1.0, 1)
    assert len(all_hidden.observed_index) == 0
    assert all_hidden.unobserved.tolist() == list(range(20))


def test_mask_fraction_and_determinism():
    s = np.full(10_000, 0.3)
    first = mask_snapshot(s, 0.3, 17)
    assert abs(len(first.unobserved) / 10_000 - 0.3) < 0.02
    again = mask_snapshot(s, 0.3, 17)
    np.testing.assert_array_equal(first.unobserved, again.unobserved)
    seq = mask_snapshot(s, 0.3, np.random.SeedSequence(17))
    np.testing.assert_array_equal(first.unobserved, seq.unobserved)


@pytest.mark.parametrize("p", [-0.1, 1.1])
def test_mask_probability_range(p):
    with pytest.raises(ValidationError):
        mask_snapshot([0.1, 0.2], p, 0)


@pytest.mark.slow
def test_single_road_moments():
    g = build_graph([], vertices=["a"])
    truth = GmrfTruth(beta=np.array([2.0]), eta=4.0, epsilon=1.0)
    values = sample_snapshots(g, TrafficSpec(ground_truth=truth, snapshots=100_000, seed=1))[:, 0]
    # mean β/(ηε) = 0.5, variance 1/(ηε) = 0.25; three standard errors
    assert abs(values.mean() - 0.5) < 3 * 0.5 / np.sqrt(100_000)
    assert abs(values.var() - 0.25) < 3 * 0.25 * np.sqrt(2 / 100_000)


def test_zero_beta_sample_mean_vanishes():
    g = generate_network(NetworkSpec(kind="grid", width=4, height=4))
    truth = GmrfTruth(beta=np.zeros(g.n), eta=1.0, epsilon=0.5)
    k = 2000
    values = sample_snapshots(g, TrafficSpec(ground_truth=truth, snapshots=k, seed=6))
    sigma = np.sqrt(np.diag(np.linalg.inv(precision_pattern(g, 0.5).to_dense())))
    assert np.all(np.abs(values.mean(axis=0)) < 4 * sigma / np.sqrt(k))


@pytest.mark.slow
@pytest.mark.parametrize("dense_limit", [datagen.DENSE_SAMPLER_LIMIT, 0])
def test_empirical_precision(monkeypatch, dense_limit):
    monkeypatch.setattr(datagen, "DENSE_SAMPLER_LIMIT", dense_limit)
    g = build_graph([(1, 2), (2, 3)])
    truth = GmrfTruth(beta=np.array([0.5, 1.0, 0.5]), eta=2.0, epsilon=0.5)
    values = sample_snapshots(g, TrafficSpec(ground_truth=truth, snapshots=50_000, seed=2))
    expected = 2.0 * precision_pattern(g, 0.5).to_dense()
    np.testing.assert_allclose(np.linalg.inv(np.cov(values, rowvar=False)), expected, atol=0.15)
    np.testing.assert_allclose(values.mean(axis=0), np.linalg.solve(expected, truth.beta), atol=0.02)
