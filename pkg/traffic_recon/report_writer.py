"""
report_writer.py - Evaluation and training reports

An evaluation writes report.json, report.txt and lambda_sweep.csv (all
reproducible for a fixed plan), timings.json, and optionally report.xlsx.
"""

import logging
import os

import pandas as pd

from .file_formats import write_json

logger = logging.getLogger(__name__)

REPORT_JSON = "report.json"
REPORT_TEXT = "report.txt"
SWEEP_CSV = "lambda_sweep.csv"
TIMINGS_JSON = "timings.json"
REPORT_XLSX = "report.xlsx"


def summary_frame(report):
    rows = [
        {
            "p": c.p,
            "lambda": c.lam,
            "mae": c.mae,
            "baseline_mae": c.baseline_mae,
            "trial_mae_std": c.trial_std,
            "convergence_rate": c.convergence_rate,
            "redraws": c.redraws,
            "degenerate_folds": c.degenerate_folds,
            "flagged": "yes" if c.flagged else "",
        }
        for c in report.cells
    ]
    return pd.DataFrame(rows)


def per_snapshot_frame(report):
    """One row per held-out snapshot, one column per cell."""
    data = {"snapshot": list(range(report.snapshots))}
    for c in report.cells:
        data[f"p={c.p:g} lambda={c.lam:g}"] = list(c.per_snapshot)
    for c in report.cells:
        key = f"baseline p={c.p:g}"
        if key not in data:
            data[key] = list(c.baseline_per_snapshot)
    return pd.DataFrame(data)


def format_table(report):
    header = [
        f"Leave-one-out cross-validation: {report.snapshots} snapshots, {report.roads} roads, "
        f"{report.plan.trials_per_snapshot} trials per snapshot, seed {report.plan.seed}",
        "",
    ]
    table = summary_frame(report).to_string(index=False, float_format=lambda v: f"{v:.6g}")
    footer = []
    flagged = [c for c in report.cells if c.flagged]
    if flagged:
        footer = ["", "Cells with non-converged reconstructions or degenerate fold fits: "
                  + ", ".join(f"(p={c.p:g}, lambda={c.lam:g})" for c in flagged)]
    return "\n".join(header + [table] + footer) + "\n"


def write_evaluation(report, out_dir, excel=False):
    """Write every evaluation output into out_dir.

    Returns:
        Dict of output name to path
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "json": os.path.join(out_dir, REPORT_JSON),
        "text": os.path.join(out_dir, REPORT_TEXT),
        "sweep": os.path.join(out_dir, SWEEP_CSV),
        "timings": os.path.join(out_dir, TIMINGS_JSON),
    }

    write_json(paths["json"], report.to_dict())

    with open(paths["text"], "w", encoding="utf-8") as f:
        f.write(format_table(report))

    sweep = pd.DataFrame([{"lambda": c.lam, "p": c.p, "mae": c.mae} for c in report.cells])
    sweep = sweep.sort_values(["p", "lambda"], kind="mergesort")
    sweep.to_csv(paths["sweep"], index=False)

    write_json(paths["timings"], report.timings)

    if excel:
        paths["excel"] = os.path.join(out_dir, REPORT_XLSX)
        try:
            with pd.ExcelWriter(paths["excel"], engine="openpyxl") as writer:
                summary_frame(report).to_excel(writer, sheet_name="summary", index=False)
                per_snapshot_frame(report).to_excel(writer, sheet_name="per_snapshot", index=False)
            logger.info(f"Excel report exported to {paths['excel']}")
        except Exception as e:
            logger.error(f"Error exporting to Excel: {e}")
            paths.pop("excel")

    logger.info(f"Evaluation report written to {out_dir}")
    return paths


def training_report_path(model_path):
    root, _ = os.path.splitext(model_path)
    return f"{root}.report.json"


def write_training_report(outcome, model_path):
    path = training_report_path(model_path)
    write_json(path, outcome.report())
    logger.info(f"Training report written to {path}")
    return path
