"""
evaluation.py - Leave-one-out cross-validation of the reconstruction pipeline

For each held-out snapshot m the model is refit on the other K-1 snapshots
(once per λ), then `trials_per_snapshot` random masks are drawn at every p and
each masked snapshot is reconstructed. A trial's error is the mean absolute
error over its unobserved roads; [MAE]_m averages the trials of snapshot m and
the cell MAE averages [MAE]_m over all m.

Trial masks come from SeedSequence(plan.seed, spawn_key=(m, p key, trial, attempt))
so they never depend on λ, on scheduling or on which other cells are run.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from . import settings
from .datagen import mask_snapshot
from .errors import DataDegeneracyError, DomainError, UndefinedMetricError, ValidationError
from .fold_cache import FoldModelCache, data_fingerprint
from .gmrf import Model
from .learn import LearnConfig, fit_detailed
from .reconstruct import ReconstructionResult, SolverConfig, reconstruct_snapshot

logger = logging.getLogger(__name__)

MAX_REDRAWS = 1000
P_KEY_SCALE = 1_000_000


@dataclass(frozen=True)
class EvalPlan:
    """What to evaluate.

    Attributes:
        p_values: Masking probabilities, each in (0, 1]
        lambda_values: Ridge penalties, each >= 0
        trials_per_snapshot: Random masks per held-out snapshot and p
        seed: Root seed of every trial mask
        solver: SolverConfig for reconstructions
        learn: LearnConfig for fold fits; its lam is replaced by each λ
        epsilon: Regularizer of C
        threads: Worker processes for folds (None uses every core)
    """
    p_values: tuple = settings.DEFAULT_P_VALUES
    lambda_values: tuple = settings.DEFAULT_LAMBDA_VALUES
    trials_per_snapshot: int = settings.DEFAULT_TRIALS
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    learn: LearnConfig = field(default_factory=LearnConfig)
    epsilon: float = settings.EPSILON
    threads: int = None

    def __post_init__(self):
        object.__setattr__(self, "p_values", tuple(float(p) for p in self.p_values))
        object.__setattr__(self, "lambda_values", tuple(float(lam) for lam in self.lambda_values))
        if not self.p_values:
            raise ValidationError("At least one p value is required")
        if not self.lambda_values:
            raise ValidationError("At least one lambda value is required")
        for p in self.p_values:
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"p values must lie in [0, 1], got {p}")
            if p == 0.0:
                raise ValidationError("p = 0 leaves no unobserved road, so MAE is undefined")
        for lam in self.lambda_values:
            if not (np.isfinite(lam) and lam >= 0):
                raise ValidationError(f"lambda values must be nonnegative, got {lam}")
        if len(set(self.p_values)) != len(self.p_values) or len(set(self.lambda_values)) != len(self.lambda_values):
            raise ValidationError("p and lambda values must not repeat")
        if self.trials_per_snapshot < 1:
            raise ValidationError(f"trials_per_snapshot must be at least 1, got {self.trials_per_snapshot}")
        if self.seed < 0:
            raise ValidationError(f"seed must be nonnegative, got {self.seed}")
        if not (self.epsilon > 0):
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if self.threads is not None and self.threads < 1:
            raise ValidationError(f"threads must be at least 1, got {self.threads}")

    def describe(self):
        return {
            "p_values": list(self.p_values),
            "lambda_values": list(self.lambda_values),
            "trials_per_snapshot": self.trials_per_snapshot,
            "seed": self.seed,
            "epsilon": self.epsilon,
            "solver": {
                "tolerance": self.solver.tolerance,
                "max_iterations": self.solver.max_iterations,
                "scheme": self.solver.scheme,
                "warm_start": self.solver.warm_start,
            },
            "learn": {
                "step_size": self.learn.step_size,
                "max_steps": self.learn.max_steps,
                "grad_tolerance": self.learn.grad_tolerance,
            },
        }


@dataclass(frozen=True)
class CellReport:
    """Results for one (p, λ) cell."""
    p: float
    lam: float
    mae: float
    per_snapshot: tuple
    trial_std: float
    baseline_mae: float
    baseline_per_snapshot: tuple
    trials: int
    non_converged: int
    redraws: int
    degenerate_folds: int = 0

    @property
    def convergence_rate(self):
        return 1.0 - self.non_converged / self.trials

    @property
    def flagged(self):
        return self.non_converged > 0 or self.degenerate_folds > 0

    def to_dict(self):
        return {
            "p": self.p,
            "lambda": self.lam,
            "mae": self.mae,
            "per_snapshot_mae": list(self.per_snapshot),
            "trial_mae_std": self.trial_std,
            "baseline_mae": self.baseline_mae,
            "baseline_per_snapshot_mae": list(self.baseline_per_snapshot),
            "trials": self.trials,
            "non_converged_trials": self.non_converged,
            "convergence_rate": self.convergence_rate,
            "flagged": self.flagged,
            "redraws": self.redraws,
            "degenerate_folds": self.degenerate_folds,
        }


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Every cell of a cross-validation run plus its timings.

    `timings` is kept apart from the cells so that to_dict() is reproducible.
    """
    cells: tuple
    plan: EvalPlan
    snapshots: int
    roads: int
    timings: dict = field(default_factory=dict)

    def cell(self, p, lam):
        for c in self.cells:
            if c.p == float(p) and c.lam == float(lam):
                return c
        raise KeyError((p, lam))

    def to_dict(self):
        return {
            "roads": self.roads,
            "snapshots": self.snapshots,
            "plan": self.plan.describe(),
            "cells": [c.to_dict() for c in self.cells],
        }


def mae(truth, result, unobserved):
    """Mean absolute error of the estimates over the unobserved roads.

    Args:
        truth: Complete true density vector
        result: ReconstructionResult (or anything with `estimates`)
        unobserved: Indices of the roads that were hidden

    Returns:
        (1/N_l) Σ |x*_i − x_i| over the N_l unobserved roads
    """
    unobserved = np.asarray(unobserved, dtype=np.int64)
    if len(unobserved) == 0:
        raise UndefinedMetricError("MAE is undefined when no road is unobserved")
    truth = np.asarray(truth, dtype=float)
    estimates = np.asarray(result.estimates, dtype=float)
    return float(np.mean(np.abs(estimates[unobserved] - truth[unobserved])))


def baseline_constant_mean(snapshots_train, s):
    """Predict each unobserved road by its training mean, clamped at zero."""
    train = np.atleast_2d(np.asarray(snapshots_train, dtype=float))
    if train.shape[0] == 0:
        raise ValidationError("Baseline needs at least one training snapshot")
    if train.shape[1] != s.n:
        raise ValidationError(f"Training snapshots cover {train.shape[1]} roads but snapshot has {s.n}")
    mean = train.mean(axis=0)
    raw = mean[s.unobserved]
    estimates = s.observed_vector()
    estimates[s.unobserved] = np.maximum(raw, 0.0)
    return ReconstructionResult(
        estimates=estimates,
        raw_estimates=raw,
        unobserved=s.unobserved,
        iterations_used=0,
        final_residual=0.0,
        converged=True,
    )


def log_lambda_grid(low, high, count, include_zero=False):
    """λ values evenly spaced in ln λ from `low` to `high` inclusive."""
    if count < 1:
        raise ValidationError(f"count must be at least 1, got {count}")
    if high < low:
        raise ValidationError(f"ln lambda range is empty ({low} > {high})")
    grid = np.exp(np.linspace(low, high, count)).tolist()
    return ([0.0] if include_zero else []) + grid


def trial_seed(root_seed, fold, p, trial, attempt=0):
    """SeedSequence of one masking trial."""
    p_key = int(round(p * P_KEY_SCALE))
    return np.random.SeedSequence(entropy=root_seed, spawn_key=(fold, p_key, trial, attempt))


def draw_trial_mask(truth, p, root_seed, fold, trial):
    """Mask a snapshot, redrawing while no road is hidden.

    Returns:
        (PartialSnapshot, number of redraws)
    """
    for attempt in range(MAX_REDRAWS):
        s = mask_snapshot(truth, p, trial_seed(root_seed, fold, p, trial, attempt))
        if len(s.unobserved):
            return s, attempt
    raise UndefinedMetricError(
        f"No road was unobserved in {MAX_REDRAWS} draws at p={p} (fold {fold}, trial {trial})"
    )


@dataclass
class _FoldOutcome:
    fold: int
    trial_mae: dict
    baseline_mae: dict
    non_converged: dict
    redraws: dict
    models: dict
    degenerate: set
    fit_seconds: dict
    solve_seconds: dict


def _run_fold(fold, snapshots, g, plan, cached_models):
    """Fit the fold's models and run every trial of every cell for one held-out snapshot."""
    train = np.delete(snapshots, fold, axis=0)
    truth = snapshots[fold]

    models, fit_seconds, degenerate = {}, {}, set()
    for lam in plan.lambda_values:
        if cached_models.get(lam) is not None:
            models[lam] = cached_models[lam]
            fit_seconds[lam] = 0.0
            continue
        cfg = LearnConfig(lam=lam, step_size=plan.learn.step_size, max_steps=plan.learn.max_steps,
                          grad_tolerance=plan.learn.grad_tolerance, max_log_eta=plan.learn.max_log_eta)
        start = time.perf_counter()
        try:
            models[lam] = fit_detailed(train, g, plan.epsilon, cfg).model
        except DataDegeneracyError as e:
            # training snapshots without spread: keep the capped parameters and flag the fold
            logger.warning(f"Fold {fold}, lambda={lam}: {e}; using eta={e.eta:.6g}")
            models[lam] = Model(beta=e.beta, eta=e.eta, epsilon=plan.epsilon, lambda_used=lam,
                                graph_fingerprint=g.fingerprint(), road_ids=g.labels)
            degenerate.add(lam)
        fit_seconds[lam] = time.perf_counter() - start

    trial_mae = {(p, lam): [] for p in plan.p_values for lam in plan.lambda_values}
    non_converged = {(p, lam): 0 for p in plan.p_values for lam in plan.lambda_values}
    solve_seconds = {(p, lam): 0.0 for p in plan.p_values for lam in plan.lambda_values}
    baseline_mae = {p: [] for p in plan.p_values}
    redraws = {p: 0 for p in plan.p_values}

    for p in plan.p_values:
        for trial in range(plan.trials_per_snapshot):
            s, redrawn = draw_trial_mask(truth, p, plan.seed, fold, trial)
            redraws[p] += redrawn
            baseline_mae[p].append(mae(truth, baseline_constant_mean(train, s), s.unobserved))
            for lam in plan.lambda_values:
                start = time.perf_counter()
                result = reconstruct_snapshot(g, models[lam], s, plan.solver)
                solve_seconds[(p, lam)] += time.perf_counter() - start
                trial_mae[(p, lam)].append(mae(truth, result, s.unobserved))
                if not result.converged:
                    non_converged[(p, lam)] += 1

    return _FoldOutcome(fold=fold, trial_mae=trial_mae, baseline_mae=baseline_mae,
                        non_converged=non_converged, redraws=redraws, models=models, degenerate=degenerate,
                        fit_seconds=fit_seconds, solve_seconds=solve_seconds)


def _timing_summary(values):
    values = np.asarray(values, dtype=float)
    if len(values) == 0:
        return {"total": 0.0, "mean": 0.0, "max": 0.0}
    return {"total": float(values.sum()), "mean": float(values.mean()), "max": float(values.max())}


def loocv(snapshots, g, plan, cache=None):
    """Leave-one-out cross-validation over complete snapshots.

    Args:
        snapshots: (K, N) array of complete, nonnegative snapshots, K >= 2
        g: RoadGraph
        plan: EvalPlan
        cache: Optional FoldModelCache; an in-memory one is used when None

    Returns:
        EvalReport with one CellReport per (p, λ)
    """
    snapshots = np.asarray(snapshots, dtype=float)
    if snapshots.ndim != 2 or snapshots.shape[0] < 2:
        raise ValidationError("Cross-validation needs at least two snapshots")
    if snapshots.shape[1] != g.n:
        raise ValidationError(f"Snapshots have {snapshots.shape[1]} values but network has {g.n} roads")
    if not np.all(np.isfinite(snapshots)):
        raise ValidationError("Snapshots must contain finite values only")
    if np.any(snapshots < 0):
        # masked roads become observations, which must be nonnegative
        raise DomainError("Cross-validation needs nonnegative snapshots (generate them with clamping on)")

    k = snapshots.shape[0]
    cache = cache if cache is not None else FoldModelCache()
    start = time.perf_counter()

    cached = []
    fingerprints = []
    for fold in range(k):
        fingerprint = data_fingerprint(np.delete(snapshots, fold, axis=0), g, plan.epsilon, plan.learn)
        fingerprints.append(fingerprint)
        cached.append({lam: cache.get(fold, lam, fingerprint) for lam in plan.lambda_values})
    reused = sum(model is not None for fold_models in cached for model in fold_models.values())
    logger.info(f"Cross-validating {k} snapshots over {g.n} roads: "
                f"{len(plan.p_values)} p value(s), {len(plan.lambda_values)} lambda value(s), "
                f"{plan.trials_per_snapshot} trials each ({reused} cached fold models)")

    n_jobs = plan.threads if plan.threads is not None else -1
    if n_jobs == 1:
        outcomes = [_run_fold(fold, snapshots, g, plan, cached[fold]) for fold in range(k)]
    else:
        outcomes = Parallel(n_jobs=n_jobs)(
            delayed(_run_fold)(fold, snapshots, g, plan, cached[fold]) for fold in range(k)
        )

    for outcome in outcomes:
        for lam, model in outcome.models.items():
            if cached[outcome.fold].get(lam) is None and lam not in outcome.degenerate:
                cache.put(outcome.fold, lam, fingerprints[outcome.fold], model)

    cells = []
    for p in plan.p_values:
        baseline_per_snapshot = tuple(float(np.mean(o.baseline_mae[p])) for o in outcomes)
        redraws = int(sum(o.redraws[p] for o in outcomes))
        for lam in plan.lambda_values:
            per_snapshot = tuple(float(np.mean(o.trial_mae[(p, lam)])) for o in outcomes)
            all_trials = np.concatenate([o.trial_mae[(p, lam)] for o in outcomes])
            cell = CellReport(
                p=p,
                lam=lam,
                mae=float(np.mean(per_snapshot)),
                per_snapshot=per_snapshot,
                trial_std=float(np.std(all_trials)),
                baseline_mae=float(np.mean(baseline_per_snapshot)),
                baseline_per_snapshot=baseline_per_snapshot,
                trials=k * plan.trials_per_snapshot,
                non_converged=int(sum(o.non_converged[(p, lam)] for o in outcomes)),
                redraws=redraws,
                degenerate_folds=sum(lam in o.degenerate for o in outcomes),
            )
            if cell.non_converged:
                logger.warning(f"p={p}, lambda={lam}: {cell.non_converged} of {cell.trials} reconstructions did not converge")
            logger.info(f"p={p}, lambda={lam}: MAE {cell.mae:.6g} (baseline {cell.baseline_mae:.6g})")
            cells.append(cell)

    timings = {
        "total_seconds": time.perf_counter() - start,
        "fit_seconds": _timing_summary([s for o in outcomes for s in o.fit_seconds.values()]),
        "solve_seconds": {
            f"p={p},lambda={lam}": _timing_summary([o.solve_seconds[(p, lam)] for o in outcomes])
            for p in plan.p_values for lam in plan.lambda_values
        },
        "cached_fold_models": reused,
    }
    return EvalReport(cells=tuple(cells), plan=plan, snapshots=k, roads=g.n, timings=timings)
