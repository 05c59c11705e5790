"""Report emission: delimited metric files plus rendered figures.

Every writer is deterministic — equal inputs give byte-identical files —
so downstream reproducibility checks can compare outputs directly.
Figures are rendered with the Agg backend and saved next to the CSVs.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = [
    "format_value",
    "write_delimited",
    "write_summary_json",
    "write_derived_series",
    "write_cumulative_histogram",
    "write_perturbation_table",
    "write_sweep_table",
    "write_rmse_table",
    "plot_derived_series",
    "plot_cumulative_histogram",
    "plot_perturbation_table",
    "plot_training_curves",
]

DERIVED_METRICS = ("max_excess_temp", "hotspot_count", "max_hotspot_distance")


def format_value(v) -> str:
    """Stable text form: dates as ISO, floats with repr round-trip precision."""
    if isinstance(v, float):
        return repr(v)
    if hasattr(v, "isoformat"):
        return v.isoformat()
    return str(v)


def write_delimited(path, header: list[str], rows: list[list]):
    lines = [",".join(header)]
    lines += [",".join(format_value(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def write_summary_json(path, payload: dict):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_derived_series(out_dir, volcano_id: str, points, suffix: str = ""):
    """One (date, value) CSV per derived metric; returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for metric in DERIVED_METRICS:
        path = out_dir / f"{volcano_id}_{metric}{suffix}.csv"
        write_delimited(path, ["date", metric],
                        [[p.date, getattr(p, metric)] for p in points])
        paths.append(path)
    return paths


def write_cumulative_histogram(path, table: dict):
    rows = [[float(edge), int(count)]
            for edge, count in zip(table["bin_edges"], table["cumulative_counts"])]
    write_delimited(path, ["bin_edge", "cumulative_count"], rows)


def write_perturbation_table(path, results):
    write_delimited(path, ["adjustment", "mean_diff_degc", "rmse_vs_original_degc"],
                    [[r.label, r.mean_diff, r.rmse_vs_original] for r in results])


def write_sweep_table(path, table: list[dict]):
    write_delimited(
        path,
        ["weight_decay", "diverged", "final_train_loss", "validation_rmse"],
        [[row["weight_decay"], row["diverged"], row["final_train_loss"],
          row["validation_rmse"]] for row in table])


def write_rmse_table(path, rows: list[dict], volcano_ids: list[str]):
    """Per-volcano RMSE grid: one row per training filter, one column per volcano."""
    header = ["training_filter"] + [f"rmse_{vid}" for vid in volcano_ids]
    body = [[row["training_filter"]] + [row["per_volcano"][vid] for vid in volcano_ids]
            for row in rows]
    write_delimited(path, header, body)


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_derived_series(path, volcano_id: str, points):
    fig, axes = plt.subplots(3, 1, figsize=(8, 9), sharex=True)
    dates = [p.date for p in points]
    for ax, metric, ylabel in zip(
            axes, DERIVED_METRICS,
            ["max excess temp (degC)", "hotspot pixels", "max distance (m)"]):
        ax.plot(dates, [getattr(p, metric) for p in points], marker=".")
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
    axes[0].set_title(f"{volcano_id}: derived monitoring series")
    _finish(fig, path)


def plot_cumulative_histogram(path, tables: dict[str, dict]):
    """Overlay cumulative pixel-count curves keyed by population label."""
    fig, ax = plt.subplots(figsize=(7, 5))
    for label, table in tables.items():
        ax.plot(table["bin_edges"], table["cumulative_counts"], label=label)
    ax.set_xlabel("excess temperature (degC)")
    ax.set_ylabel("cumulative pixel count")
    ax.legend()
    ax.grid(True, alpha=0.3)
    _finish(fig, path)


def plot_perturbation_table(path, results):
    fig, ax = plt.subplots(figsize=(7, 5))
    labels = [r.label for r in results]
    ax.bar(range(len(results)), [r.rmse_vs_original for r in results])
    ax.set_xticks(range(len(results)))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylabel("RMSE vs original forecast (degC)")
    _finish(fig, path)


def plot_training_curves(path, curves: dict[str, list[float]]):
    """Per-epoch training loss, one line per sweep strength."""
    fig, ax = plt.subplots(figsize=(7, 5))
    for label, losses in curves.items():
        ax.plot(range(1, len(losses) + 1), losses, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.set_yscale("log")
    ax.legend()
    _finish(fig, path)
