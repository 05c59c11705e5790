"""Scoring and science-facing post-processing.

All temperature arguments are unscaled degrees C above background unless
noted.  The summit pixel is fixed at (H//2, W//2): scenes are centered on
the summit coordinates, and the half-pixel bias of an even grid is
accepted.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .cells import uses_time

__all__ = [
    "DerivedPoint",
    "PerturbationResult",
    "rmse",
    "derive_point",
    "derive_series",
    "histogram_match",
    "cumulative_histogram",
    "perturb_sequence",
    "perturb_time_experiment",
    "PERTURBATION_LABELS",
]

HOT_THRESHOLD_C = 10.0
PIXEL_SIZE_M = 90.0


@dataclass
class DerivedPoint:
    """Per-scene volcanic-monitoring metrics."""

    date: object
    max_excess_temp: float      # degC above background
    hotspot_count: int          # pixels above threshold
    max_hotspot_distance: float  # meters from the summit pixel


@dataclass
class PerturbationResult:
    label: str
    mean_diff: float       # mean(adjusted - original), degC
    rmse_vs_original: float


def rmse(preds, targets) -> float:
    """Root mean squared error pooled over all pixels of all scenes."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.size == 0:
        raise ValueError("empty input")
    if preds.shape != targets.shape:
        raise ValueError(f"shape mismatch: {preds.shape} vs {targets.shape}")
    return float(np.sqrt(np.mean((preds - targets) ** 2)))


def derive_point(grid: np.ndarray, date=None, threshold: float = HOT_THRESHOLD_C,
                 pixel_size: float = PIXEL_SIZE_M,
                 connected_components: bool = False) -> DerivedPoint:
    """Derived metrics for one excess-temperature scene.

    hotspot_count is a pixel count; the connected-component variant exists
    for exploration only.
    """
    grid = np.asarray(grid, dtype=np.float64)
    H, W = grid.shape
    hot = grid > threshold
    if connected_components:
        count = _count_components(hot)
    else:
        count = int(hot.sum())
    max_temp = float(grid.max())
    if not hot.any():
        return DerivedPoint(date, max_temp, count, 0.0)
    rr, cc = np.nonzero(hot)
    d = np.sqrt((rr - H // 2) ** 2.0 + (cc - W // 2) ** 2.0)
    return DerivedPoint(date, max_temp, count, float(d.max() * pixel_size))


def _count_components(mask: np.ndarray) -> int:
    """4-connected component count by flood fill."""
    seen = np.zeros_like(mask, dtype=bool)
    count = 0
    H, W = mask.shape
    for r0, c0 in zip(*np.nonzero(mask)):
        if seen[r0, c0]:
            continue
        count += 1
        stack = [(r0, c0)]
        seen[r0, c0] = True
        while stack:
            r, c = stack.pop()
            for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                if 0 <= rr < H and 0 <= cc < W and mask[rr, cc] and not seen[rr, cc]:
                    seen[rr, cc] = True
                    stack.append((rr, cc))
    return count


def derive_series(grids, dates=None, threshold: float = HOT_THRESHOLD_C,
                  pixel_size: float = PIXEL_SIZE_M) -> list[DerivedPoint]:
    dates = dates if dates is not None else [None] * len(grids)
    return [derive_point(g, d, threshold, pixel_size) for g, d in zip(grids, dates)]


def histogram_match(pred: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Rank-preserving quantile mapping of pred onto the reference population.

    Each pixel is replaced by the reference value at its empirical quantile,
    with linear interpolation between reference order statistics; tied pixels
    share the mean rank.
    """
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.sort(np.asarray(reference, dtype=np.float64).ravel())
    if ref.size == 0:
        raise ValueError("empty reference population")
    flat = pred.ravel()
    order = flat.argsort(kind="stable")
    ranks = np.empty(flat.size)
    ranks[order] = np.arange(flat.size, dtype=np.float64)
    # average ranks over ties
    sorted_vals = flat[order]
    uniq, inverse, counts = np.unique(sorted_vals, return_inverse=True,
                                      return_counts=True)
    cum = np.concatenate([[0], np.cumsum(counts)])
    mean_rank_by_uniq = (cum[:-1] + cum[1:] - 1) / 2.0
    mean_ranks = np.empty(flat.size)
    mean_ranks[order] = mean_rank_by_uniq[inverse]
    q = mean_ranks / max(flat.size - 1, 1)
    matched = np.interp(q, np.linspace(0.0, 1.0, ref.size), ref)
    return matched.reshape(pred.shape)


def cumulative_histogram(population, n_bins: int = 50) -> dict:
    """Cumulative pixel-count table; final bin equals the population size."""
    x = np.asarray(population, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("empty population")
    counts, edges = np.histogram(x, bins=n_bins)
    return {
        "bin_edges": edges[1:],
        "cumulative_counts": np.cumsum(counts),
        "maximum": float(x.max()),
    }


PERTURBATION_LABELS = [
    ("first", 0.1, "First dT * 0.1"),
    ("last", 0.1, "Last dT * 0.1"),
    ("all", 0.1, "All dT * 0.1"),
    ("first", 10.0, "First dT * 10"),
    ("last", 10.0, "Last dT * 10"),
    ("all", 10.0, "All dT * 10"),
]


def perturb_sequence(sequence, position: str, factor: float):
    """Copy a sequence with its elapsed-time structure scaled at ``position``."""
    n = sequence.dt_following.shape[0]
    if position == "all":
        idx = np.arange(n)
    elif position == "first":
        idx = np.array([0])
    elif position == "last":
        idx = np.array([n - 1])
    else:
        raise ValueError(f"unknown position {position!r}")
    mask = np.zeros(n)
    mask[idx] = 1.0
    scale = np.where(mask > 0, factor, 1.0)
    return replace(
        sequence,
        dt_preceding=sequence.dt_preceding * scale,
        dt_following=sequence.dt_following * scale,
        dt_maps_preceding=sequence.dt_maps_preceding * scale[:, None, None],
        dt_maps_following=sequence.dt_maps_following * scale[:, None, None],
    )


def perturb_time_experiment(model, sequences, scaler=None,
                            adjustments=None) -> list[PerturbationResult]:
    """Re-forecast with adjusted elapsed times; report change vs the original.

    Both metrics are in unscaled degC when a scaler is given.  Rejects
    models whose cell kind ignores elapsed time.
    """
    if not uses_time(model.spec.cell_kind):
        raise ValueError(
            f"cell kind {model.spec.cell_kind!r} ignores elapsed time; "
            "the perturbation experiment is meaningless for it")
    adjustments = adjustments or PERTURBATION_LABELS
    originals = [model.forecast(s) for s in sequences]
    if scaler is not None:
        originals = [scaler.inverse(f) for f in originals]
    results = []
    for position, factor, label in adjustments:
        diffs = []
        for seq, orig in zip(sequences, originals):
            adj = model.forecast(perturb_sequence(seq, position, factor))
            if scaler is not None:
                adj = scaler.inverse(adj)
            diffs.append(adj - orig)
        diffs = np.stack(diffs)
        results.append(PerturbationResult(
            label=label,
            mean_diff=float(diffs.mean()),
            rmse_vs_original=float(np.sqrt(np.mean(diffs ** 2))),
        ))
    return results
