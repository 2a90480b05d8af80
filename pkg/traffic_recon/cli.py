#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
cli.py - Command-line entry point for traffic_recon

Subcommands:
1. generate-network    synthetic grid or random planar road network
2. generate-snapshots  complete historical snapshots on a network
3. mask                hide roads of one snapshot to make a partial snapshot
4. learn               fit beta and eta on complete snapshots
5. reconstruct         fill in the unobserved roads of a partial snapshot
6. evaluate            leave-one-out cross-validation with random masks
7. export-colors       bin densities into map colors

Exit codes: 0 success, 1 runtime or convergence failure, 2 usage or
validation error.
"""

import argparse
import logging
import os
import sys
from datetime import datetime

import numpy as np

from . import settings
from .color_export import ColorBinning, export_colors, position_colors
from .datagen import (
    HotspotTruth,
    NetworkSpec,
    TrafficSpec,
    generate_network,
    gmrf_truth_for_mean,
    mask_snapshot,
    mean_density_field,
    sample_snapshots,
)
from .errors import ReconError, ValidationError
from .evaluation import EvalPlan, log_lambda_grid, loocv, mae
from .file_formats import (
    read_model,
    read_network,
    read_partial,
    read_reconstruction,
    read_sidecar,
    read_snapshots,
    write_model,
    write_network,
    write_partial,
    write_reconstruction,
    write_sidecar,
    write_snapshots,
)
from .fold_cache import FoldModelCache
from .learn import LearnConfig, compute_stats, fit_from_stats, stationarity_gap
from .reconstruct import SCHEMES, SolverConfig, reconstruct_snapshot
from .report_writer import write_evaluation, write_training_report

logger = logging.getLogger("traffic_recon")

VERIFY_TOLERANCE = 1e-6


def configure_logging(log_file=None):
    """Stream handler on stderr, plus a file handler under OUTPUT_DIR when requested."""
    handlers = [logging.StreamHandler()]
    log_file = log_file or settings.LOG_FILE_NAME
    if log_file:
        if not os.path.isabs(log_file):
            os.makedirs(settings.OUTPUT_DIR, exist_ok=True)
            log_file = os.path.join(settings.OUTPUT_DIR, log_file)
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=settings.log_level_from_env(),
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def _solver_config(args):
    return SolverConfig(
        tolerance=args.tol if args.tol is not None else settings.SOLVER_TOLERANCE,
        max_iterations=args.max_iters,
        scheme=args.scheme or settings.SOLVER_SCHEME,
        warm_start=getattr(args, "warm_start", False),
    )


def _learn_config(args, lam):
    return LearnConfig(
        lam=lam,
        step_size=args.step_size if args.step_size is not None else settings.LEARN_STEP_SIZE,
        max_steps=args.max_steps if args.max_steps is not None else settings.LEARN_MAX_STEPS,
        grad_tolerance=args.grad_tol if args.grad_tol is not None else settings.LEARN_GRAD_TOLERANCE,
        max_log_eta=settings.MAX_LOG_ETA,
    )


def _epsilon(args):
    epsilon = args.epsilon if args.epsilon is not None else settings.EPSILON
    if not (np.isfinite(epsilon) and epsilon > 0):
        raise ValidationError(f"--epsilon must be positive, got {epsilon}")
    return epsilon


# ============================================================================
# SUBCOMMANDS
# ============================================================================

def cmd_generate_network(args):
    if args.kind == "grid" and (args.width is None or args.height is None):
        raise ValidationError("--kind grid needs --width and --height")
    if args.kind == "random_planar" and args.n is None:
        raise ValidationError("--kind random_planar needs --n")
    spec = NetworkSpec(
        kind=args.kind,
        width=args.width if args.width is not None else 1,
        height=args.height if args.height is not None else 1,
        n=args.n if args.n is not None else 1,
        density=args.density if args.density is not None else 1.0,
        seed=args.seed,
    )
    graph = generate_network(spec)
    write_network(graph, args.out)
    print(f"Network: {graph.n} roads, {graph.num_edges} edges -> {args.out}")
    return 0


def cmd_generate_snapshots(args):
    graph = read_network(args.network)
    if args.mode == "gmrf":
        mean = mean_density_field(graph, level=args.mean_level, amplitude=args.mean_amplitude,
                                  roughness=args.mean_roughness, seed=args.seed)
        truth = gmrf_truth_for_mean(graph, mean, eta=args.eta, epsilon=args.truth_epsilon)
    else:
        if not args.centers:
            raise ValidationError("--mode hotspot needs at least one --center")
        truth = HotspotTruth(centers=tuple(args.centers), peak=args.peak, decay=args.decay,
                             noise=args.noise, base=args.base)
    spec = TrafficSpec(ground_truth=truth, snapshots=args.count, clamp_negative=args.clamp_negative, seed=args.seed)
    values = sample_snapshots(graph, spec)
    write_snapshots(values, graph, args.out)
    metadata = spec.metadata()
    metadata["network"] = os.path.basename(args.network)
    metadata["graph_fingerprint"] = graph.fingerprint()
    write_sidecar(args.out, metadata)
    print(f"Snapshots: {values.shape[0]} x {values.shape[1]} -> {args.out}")
    return 0


def cmd_mask(args):
    graph = read_network(args.network)
    values = read_snapshots(args.snapshots, graph)
    if not 0 <= args.row < len(values):
        raise ValidationError(f"--row {args.row} is outside 0..{len(values) - 1}")
    partial = mask_snapshot(values[args.row], args.p, args.seed)
    write_partial(partial, graph, args.out)
    print(f"Partial snapshot: {len(partial.observed_index)} observed, {len(partial.unobserved)} unobserved -> {args.out}")
    return 0


def cmd_learn(args):
    graph = read_network(args.network)
    epsilon = _epsilon(args)
    lam = args.lam if args.lam is not None else settings.LEARN_LAMBDA
    cfg = _learn_config(args, lam)
    values = read_snapshots(args.snapshots, graph)
    sidecar = read_sidecar(args.snapshots)
    if sidecar and sidecar.get("clamp_negative"):
        logger.warning("Training snapshots were clamped at zero; their moments are biased")

    stats = compute_stats(values, graph)
    outcome = fit_from_stats(stats, graph, epsilon, cfg)
    write_model(outcome.model, args.out)
    write_training_report(outcome, args.out)
    print(f"Final objective: {outcome.objective:.10g}")
    print(f"Gradient norm:   {outcome.grad_norm:.3e}")
    print(f"eta:             {outcome.model.eta:.6g}")

    if args.verify:
        if lam == 0:
            gap = stationarity_gap(stats, graph, outcome.model)
            print(f"Closed-form gap: {gap:.3e}")
            passed = gap < VERIFY_TOLERANCE and outcome.grad_norm < max(VERIFY_TOLERANCE, cfg.grad_tolerance)
        else:
            passed = outcome.grad_norm < cfg.grad_tolerance
        if not passed:
            logger.error("Verification failed: the fitted model is not stationary")
            return 1
        print("Verification passed")
    return 0


def cmd_reconstruct(args):
    graph = read_network(args.network)
    model = read_model(args.model).aligned_to(graph)
    partial = read_partial(args.partial, graph)
    result = reconstruct_snapshot(graph, model, partial, _solver_config(args))
    write_reconstruction(result, graph, args.out)
    print(f"Reconstructed {len(result.unobserved)} roads in {result.iterations_used} sweeps "
          f"(residual {result.final_residual:.3e}) -> {args.out}")

    if args.truth:
        values = read_snapshots(args.truth, graph)
        if not 0 <= args.row < len(values):
            raise ValidationError(f"--row {args.row} is outside 0..{len(values) - 1}")
        if len(result.unobserved):
            print(f"MAE: {mae(values[args.row], result, result.unobserved):.6g}")
        else:
            logger.warning("Every road is observed; MAE is undefined")

    if not result.converged:
        logger.error(f"Reconstruction did not converge within {result.iterations_used} sweeps")
        return 1
    return 0


def cmd_evaluate(args):
    graph = read_network(args.network)
    values = read_snapshots(args.snapshots, graph)
    epsilon = _epsilon(args)

    lambdas = list(args.lam or [])
    if args.ln_lambda_range:
        try:
            low, high, count = float(args.ln_lambda_range[0]), float(args.ln_lambda_range[1]), int(args.ln_lambda_range[2])
        except ValueError:
            raise ValidationError(f"--ln-lambda-range expects LOW HIGH COUNT numbers, got {args.ln_lambda_range}") from None
        lambdas += log_lambda_grid(low, high, count)
    if not lambdas:
        lambdas = list(settings.DEFAULT_LAMBDA_VALUES)
    lambdas = sorted(set(float(lam) for lam in lambdas))

    plan = EvalPlan(
        p_values=tuple(args.p or settings.DEFAULT_P_VALUES),
        lambda_values=tuple(lambdas),
        trials_per_snapshot=args.trials if args.trials is not None else settings.DEFAULT_TRIALS,
        seed=args.seed,
        solver=_solver_config(args),
        learn=_learn_config(args, 0.0),
        epsilon=epsilon,
        threads=args.threads,
    )
    with FoldModelCache(args.cache_db) as cache:
        report = loocv(values, graph, plan, cache=cache)
    paths = write_evaluation(report, args.out_dir, excel=args.excel)

    print(f"{'p':>8} {'lambda':>12} {'MAE':>12} {'baseline':>12}")
    for cell in report.cells:
        print(f"{cell.p:>8g} {cell.lam:>12g} {cell.mae:>12.6g} {cell.baseline_mae:>12.6g}")
    print(f"Report: {paths['json']}")
    if any(cell.flagged for cell in report.cells):
        logger.warning("Some cells had non-converged reconstructions or degenerate fold fits; see report.txt")
    return 0


def cmd_export_colors(args):
    reconstruction = read_reconstruction(args.reconstruction)
    coordinates = None
    if args.network:
        coordinates = read_network(args.network).metadata.get("coordinates")
    if args.positions:
        df = position_colors(reconstruction, coordinates)
    else:
        binning = ColorBinning(bin_width=args.bin_width if args.bin_width is not None else settings.BIN_WIDTH,
                               palette=settings.PALETTE)
        df = export_colors(reconstruction, binning, coordinates)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    df.to_csv(args.out, index=False, float_format="%.6g")
    print(f"Colors for {len(df)} roads -> {args.out}")
    return 0


# ============================================================================
# ARGUMENT PARSING
# ============================================================================

def _add_solver_flags(parser):
    parser.add_argument('--tol', type=float, default=None,
                        help='Convergence tolerance on the max update change (default: 1e-8)')
    parser.add_argument('--max-iters', type=int, default=None,
                        help='Sweep cap (default: 10 per road in the network)')
    parser.add_argument('--scheme', choices=SCHEMES, default=None,
                        help='Iteration scheme (default: gauss_seidel)')


def _add_learn_flags(parser):
    parser.add_argument('--epsilon', type=float, default=None, help='Regularizer of C (default: 1e-4)')
    parser.add_argument('--step-size', type=float, default=None, help='Initial ascent step (default: 1.0)')
    parser.add_argument('--max-steps', type=int, default=None, help='Ascent step cap (default: 500)')
    parser.add_argument('--grad-tol', type=float, default=None, help='Gradient tolerance (default: 1e-6)')


def build_parser():
    parser = argparse.ArgumentParser(
        prog='traffic_recon',
        description='Reconstruct unobserved road traffic densities with a Gaussian Markov random field',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python -m traffic_recon generate-network --kind grid --width 20 --height 20 --out net.json
  python -m traffic_recon generate-snapshots --network net.json --count 40 --clamp-negative --out hdb.csv
  python -m traffic_recon learn --network net.json --snapshots hdb.csv --out model.json --verify
  python -m traffic_recon evaluate --network net.json --snapshots hdb.csv --lambda 0 --lambda 10 --trials 20 --out-dir eval
        """
    )
    parser.add_argument('--threads', type=int, default=None,
                        help='Worker processes for evaluation (default: every core)')
    parser.add_argument('--settings', default=None, help='Python file overriding default settings')
    parser.add_argument('--log-file', default=None, help='Also write the log to this file (under OUTPUT_DIR if relative)')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('generate-network', help='Generate a synthetic road network')
    p.add_argument('--kind', choices=('grid', 'random_planar'), required=True)
    p.add_argument('--width', type=int, default=None)
    p.add_argument('--height', type=int, default=None)
    p.add_argument('--n', type=int, default=None, help='Road count for random_planar')
    p.add_argument('--density', type=float, default=None, help='Share of triangulation edges kept (0, 1]')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--out', required=True)
    p.set_defaults(handler=cmd_generate_network)

    p = sub.add_parser('generate-snapshots', help='Sample complete snapshots on a network')
    p.add_argument('--network', required=True)
    p.add_argument('--mode', choices=('gmrf', 'hotspot'), default='gmrf')
    p.add_argument('--count', type=int, required=True, help='Number of snapshots K')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--clamp-negative', action='store_true', help='Replace negative densities by zero')
    p.add_argument('--eta', type=float, default=100.0, help='gmrf: coupling strength of the truth')
    p.add_argument('--truth-epsilon', type=float, default=0.1, help='gmrf: regularizer of the truth')
    p.add_argument('--mean-level', type=float, default=0.3, help='gmrf: average density')
    p.add_argument('--mean-amplitude', type=float, default=0.1, help='gmrf: spatial swing of the mean')
    p.add_argument('--mean-roughness', type=float, default=0.1, help='gmrf: per-road random offset of the mean')
    p.add_argument('--center', dest='centers', action='append', default=None, help='hotspot: center road id (repeatable)')
    p.add_argument('--peak', type=float, default=0.4)
    p.add_argument('--decay', type=float, default=0.5)
    p.add_argument('--noise', type=float, default=0.2)
    p.add_argument('--base', type=float, default=0.02)
    p.add_argument('--out', required=True)
    p.set_defaults(handler=cmd_generate_snapshots)

    p = sub.add_parser('mask', help='Hide roads of one snapshot with probability p')
    p.add_argument('--network', required=True)
    p.add_argument('--snapshots', required=True)
    p.add_argument('--row', type=int, default=0)
    p.add_argument('--p', type=float, required=True)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--out', required=True)
    p.set_defaults(handler=cmd_mask)

    p = sub.add_parser('learn', help='Fit beta and eta on complete snapshots')
    p.add_argument('--network', required=True)
    p.add_argument('--snapshots', required=True)
    p.add_argument('--lambda', dest='lam', type=float, default=None, help='Ridge penalty (default: 0)')
    _add_learn_flags(p)
    p.add_argument('--verify', action='store_true', help='Check stationarity of the fitted model')
    p.add_argument('--out', required=True)
    p.set_defaults(handler=cmd_learn)

    p = sub.add_parser('reconstruct', help='Reconstruct a partial snapshot')
    p.add_argument('--network', required=True)
    p.add_argument('--model', required=True)
    p.add_argument('--partial', required=True)
    _add_solver_flags(p)
    p.add_argument('--warm-start', action='store_true', help='Start from observed-neighbor averages')
    p.add_argument('--truth', default=None, help='Snapshot CSV with the true densities; prints the MAE')
    p.add_argument('--row', type=int, default=0, help='Row of --truth to compare against')
    p.add_argument('--out', required=True)
    p.set_defaults(handler=cmd_reconstruct)

    p = sub.add_parser('evaluate', help='Leave-one-out cross-validation')
    p.add_argument('--network', required=True)
    p.add_argument('--snapshots', required=True)
    p.add_argument('--p', type=float, action='append', default=None, help='Masking probability (repeatable)')
    p.add_argument('--lambda', dest='lam', type=float, action='append', default=None, help='Ridge penalty (repeatable)')
    p.add_argument('--ln-lambda-range', nargs=3, metavar=('LOW', 'HIGH', 'COUNT'), default=None,
                   help='Add COUNT penalties evenly spaced in ln lambda')
    p.add_argument('--trials', type=int, default=None, help='Trials per snapshot (default: 500)')
    p.add_argument('--seed', type=int, default=0)
    _add_learn_flags(p)
    _add_solver_flags(p)
    p.add_argument('--cache-db', default=None, help='SQLite file caching fold models across runs')
    p.add_argument('--excel', action='store_true', help='Also write report.xlsx')
    p.add_argument('--out-dir', required=True)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser('export-colors', help='Bin reconstructed densities into map colors')
    p.add_argument('--reconstruction', required=True)
    p.add_argument('--bin-width', type=float, default=None, help='Density per color band (default: 0.05)')
    p.add_argument('--positions', action='store_true', help='Color by observation status instead of density')
    p.add_argument('--network', default=None, help='Network JSON whose coordinates are copied as x, y')
    p.add_argument('--out', required=True)
    p.set_defaults(handler=cmd_export_colors)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    configure_logging(args.log_file)
    start_time = datetime.now()

    try:
        if args.settings:
            applied = settings.apply_overrides(args.settings)
            logger.info(f"Loaded settings from {args.settings}: {', '.join(applied) or 'nothing overridden'}")
            configure_logging(args.log_file)
        if args.threads is not None and args.threads < 1:
            raise ValidationError(f"--threads must be at least 1, got {args.threads}")

        logger.info("=" * 80)
        logger.info(f"  TRAFFIC RECONSTRUCTION: {args.command}")
        logger.info(f"  Started at: {start_time.strftime('%Y-%m-%d %H:%M:%S')}")
        logger.info("=" * 80)

        code = args.handler(args)

        end_time = datetime.now()
        logger.info("=" * 80)
        logger.info(f"  {args.command} {'COMPLETED' if code == 0 else 'FAILED'}")
        logger.info(f"  Finished at: {end_time.strftime('%Y-%m-%d %H:%M:%S')}")
        logger.info(f"  Duration: {end_time - start_time}")
        logger.info("=" * 80)
        return code

    except ValidationError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 2
    except ReconError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 1
    except Exception as e:
        logger.exception(f"An unexpected error occurred: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
