from types import SimpleNamespace

import numpy as np
import pytest

from traffic_recon.datagen import (
    NetworkSpec,
    TrafficSpec,
    generate_network,
    gmrf_truth_for_mean,
    mean_density_field,
    sample_snapshots,
)
from traffic_recon.errors import DomainError, UndefinedMetricError, ValidationError
from traffic_recon.evaluation import (
    MAX_REDRAWS,
    EvalPlan,
    baseline_constant_mean,
    draw_trial_mask,
    log_lambda_grid,
    loocv,
    mae,
    trial_seed,
)
from traffic_recon.fold_cache import FoldModelCache
from traffic_recon.gmrf import PartialSnapshot
from traffic_recon.reconstruct import SolverConfig


@pytest.fixture
def toy_history(toy_graph, rng):
    return rng.uniform(0.1, 0.6, (4, toy_graph.n))


def test_mae_example():
    result = SimpleNamespace(estimates=np.array([1.0, 3.0, 5.0, 4.0]))
    assert mae([1.0, 2.0, 3.0, 4.0], result, [1, 2]) == pytest.approx(1.5)


def test_mae_with_nothing_unobserved():
    result = SimpleNamespace(estimates=np.zeros(3))
    with pytest.raises(UndefinedMetricError):
        mae(np.zeros(3), result, [])


def test_baseline_constant_mean():
    train = [[0.0, 1.0, 2.0], [2.0, 3.0, -10.0]]
    s = PartialSnapshot.from_mask([0.7, 0.8, 0.9], [False, True, True])
    result = baseline_constant_mean(train, s)
    np.testing.assert_allclose(result.estimates, [0.7, 2.0, 0.0])
    np.testing.assert_allclose(result.raw_estimates, [2.0, -4.0])
    assert result.converged


def test_baseline_shape_checked():
    s = PartialSnapshot.from_mask([0.1, 0.2], [True, False])
    with pytest.raises(ValidationError):
        baseline_constant_mean(np.zeros((2, 3)), s)


def test_log_lambda_grid():
    np.testing.assert_allclose(log_lambda_grid(0.0, 2.0, 3), [1.0, np.e, np.e ** 2])
    assert log_lambda_grid(-1.0, -1.0, 1, include_zero=True) == pytest.approx([0.0, np.exp(-1.0)])
    with pytest.raises(ValidationError):
        log_lambda_grid(0.0, 1.0, 0)
    with pytest.raises(ValidationError):
        log_lambda_grid(1.0, 0.0, 2)


def test_trial_seeds_are_distinct():
    keys = set()
    for fold in range(3):
        for p in (0.5, 0.7):
            for trial in range(4):
                state = trial_seed(11, fold, p, trial).generate_state(2).tobytes()
                keys.add(state)
    assert len(keys) == 3 * 2 * 4
    same = trial_seed(11, 1, 0.7, 2).generate_state(2)
    np.testing.assert_array_equal(same, trial_seed(11, 1, 0.7, 2).generate_state(2))


def test_draw_trial_mask_redraws_until_hidden():
    truth = np.array([0.4])
    s, redraws = draw_trial_mask(truth, 0.5, 3, 0, 0)
    assert s.unobserved.tolist() == [0]
    for attempt in range(redraws):
        rng = np.random.default_rng(trial_seed(3, 0, 0.5, 0, attempt))
        assert rng.random(1)[0] >= 0.5


def test_draw_trial_mask_gives_up():
    with pytest.raises(UndefinedMetricError):
        draw_trial_mask(np.array([0.1, 0.2]), 1e-9, 0, 0, 0)
    assert MAX_REDRAWS == 1000


@pytest.mark.parametrize("kwargs", [
    {"p_values": ()},
    {"p_values": (0.0,)},
    {"p_values": (1.5,)},
    {"p_values": (0.5, 0.5)},
    {"lambda_values": (-1.0,)},
    {"lambda_values": ()},
    {"trials_per_snapshot": 0},
    {"epsilon": 0.0},
    {"threads": 0},
])
def test_plan_validation(kwargs):
    with pytest.raises(ValidationError):
        EvalPlan(**kwargs)


def test_loocv_input_checks(toy_graph, toy_history):
    plan = EvalPlan(p_values=(0.5,), trials_per_snapshot=1, threads=1)
    with pytest.raises(ValidationError):
        loocv(toy_history[:1], toy_graph, plan)
    with pytest.raises(ValidationError):
        loocv(toy_history[:, :5], toy_graph, plan)


def test_negative_snapshots_are_rejected(toy_graph, toy_history):
    negative = toy_history.copy()
    negative[0, 0] = -0.01
    plan = EvalPlan(p_values=(1.0,), lambda_values=(0.0,), trials_per_snapshot=1, epsilon=1.0, threads=1)
    with pytest.raises(DomainError):
        loocv(negative, toy_graph, plan)


def test_fully_hidden_lambda_zero_matches_baseline(toy_graph, toy_history):
    # with every road hidden a λ = 0 fit reconstructs the training mean
    plan = EvalPlan(p_values=(1.0,), lambda_values=(0.0,), trials_per_snapshot=2, epsilon=1.0, threads=1)
    report = loocv(toy_history, toy_graph, plan)
    cell = report.cell(1.0, 0.0)
    assert cell.mae == pytest.approx(cell.baseline_mae, abs=1e-6)
    np.testing.assert_allclose(cell.per_snapshot, cell.baseline_per_snapshot, atol=1e-6)
    assert cell.non_converged == 0
    assert cell.convergence_rate == 1.0


def test_two_identical_snapshots_give_equal_folds(toy_graph):
    snapshots = np.tile(np.linspace(0.1, 0.6, toy_graph.n), (2, 1))
    plan = EvalPlan(p_values=(0.5,), lambda_values=(0.0,), trials_per_snapshot=3, epsilon=1.0, threads=1,
                    solver=SolverConfig(tolerance=1e-12, max_iterations=10_000))
    cell = loocv(snapshots, toy_graph, plan).cell(0.5, 0.0)
    assert cell.per_snapshot[0] == pytest.approx(cell.per_snapshot[1], abs=1e-9)
    assert cell.mae == np.mean(cell.per_snapshot)
    assert cell.mae < 1e-9


def test_degenerate_folds_are_flagged_not_fatal(toy_graph):
    # one training snapshot per fold has no spread, so eta runs to its cap
    plan = EvalPlan(p_values=(0.5,), lambda_values=(0.0,), trials_per_snapshot=2, threads=1)
    cache = FoldModelCache()
    cell = loocv(np.zeros((2, toy_graph.n)), toy_graph, plan, cache=cache).cell(0.5, 0.0)
    assert cell.degenerate_folds == 2
    assert cell.flagged
    assert cell.non_converged == 0
    assert cell.per_snapshot == (0.0, 0.0)
    assert cell.to_dict()["degenerate_folds"] == 2
    assert len(cache) == 0


def test_aggregation_and_report_shape(toy_graph, toy_history):
    plan = EvalPlan(p_values=(0.5, 0.9), lambda_values=(0.0, 0.5), trials_per_snapshot=3,
                    epsilon=0.5, seed=4, threads=1)
    report = loocv(toy_history, toy_graph, plan)
    assert len(report.cells) == 4
    assert report.snapshots == 4
    assert report.roads == 6
    for cell in report.cells:
        assert len(cell.per_snapshot) == 4
        assert cell.mae == pytest.approx(np.mean(cell.per_snapshot), rel=1e-12)
        assert cell.baseline_mae == pytest.approx(np.mean(cell.baseline_per_snapshot), rel=1e-12)
        assert cell.trials == 12
        assert cell.mae >= 0
    # baseline does not depend on λ
    assert report.cell(0.5, 0.0).baseline_per_snapshot == report.cell(0.5, 0.5).baseline_per_snapshot
    as_dict = report.to_dict()
    assert [c["lambda"] for c in as_dict["cells"]] == [0.0, 0.5, 0.0, 0.5]
    assert "timings" not in as_dict
    assert report.timings["total_seconds"] >= 0
    with pytest.raises(KeyError):
        report.cell(0.3, 0.0)


def test_loocv_is_deterministic(toy_graph, toy_history):
    plan = EvalPlan(p_values=(0.5,), lambda_values=(0.0, 1.0), trials_per_snapshot=3, epsilon=0.5, seed=9, threads=1)
    first = loocv(toy_history, toy_graph, plan).to_dict()
    assert loocv(toy_history, toy_graph, plan).to_dict() == first
    parallel = EvalPlan(p_values=(0.5,), lambda_values=(0.0, 1.0), trials_per_snapshot=3, epsilon=0.5, seed=9,
                        threads=2)
    assert loocv(toy_history, toy_graph, parallel).to_dict()["cells"] == first["cells"]


def test_masks_do_not_depend_on_other_cells(toy_graph, toy_history):
    small = EvalPlan(p_values=(0.7,), lambda_values=(0.5,), trials_per_snapshot=3, epsilon=0.5, seed=2, threads=1)
    large = EvalPlan(p_values=(0.3, 0.7), lambda_values=(0.0, 0.5), trials_per_snapshot=3, epsilon=0.5, seed=2,
                     threads=1)
    a = loocv(toy_history, toy_graph, small).cell(0.7, 0.5)
    b = loocv(toy_history, toy_graph, large).cell(0.7, 0.5)
    assert a.per_snapshot == b.per_snapshot
    assert a.baseline_per_snapshot == b.baseline_per_snapshot


def test_fold_models_are_reused(toy_graph, toy_history):
    plan = EvalPlan(p_values=(0.5,), lambda_values=(0.0, 1.0), trials_per_snapshot=2, epsilon=0.5, threads=1)
    cache = FoldModelCache()
    first = loocv(toy_history, toy_graph, plan, cache=cache)
    assert len(cache) == 8
    assert first.timings["cached_fold_models"] == 0
    second = loocv(toy_history, toy_graph, plan, cache=cache)
    assert second.timings["cached_fold_models"] == 8
    assert second.to_dict() == first.to_dict()


@pytest.mark.slow
def test_protocol_on_gmrf_grid():
    g = generate_network(NetworkSpec(kind="grid", width=20, height=20))
    mean = mean_density_field(g, level=0.3, amplitude=0.15, roughness=0.1, seed=3)
    truth = gmrf_truth_for_mean(g, mean, eta=100.0, epsilon=0.1)
    snapshots = sample_snapshots(g, TrafficSpec(ground_truth=truth, snapshots=40, clamp_negative=True, seed=5))
    plan = EvalPlan(p_values=(0.5, 0.7, 0.9), lambda_values=(0.0, 1.0, 10.0), trials_per_snapshot=10, seed=1)
    report = loocv(snapshots, g, plan)

    for cell in report.cells:
        assert cell.mae == np.mean(cell.per_snapshot)
    for p in plan.p_values:
        assert report.cell(p, 0.0).mae <= report.cell(p, 10.0).mae
    free = [report.cell(p, 0.0) for p in plan.p_values]
    assert free[0].mae <= free[1].mae <= free[2].mae
    # at p = 0.7 the field beats predicting each road's training mean
    assert free[1].mae < free[1].baseline_mae
