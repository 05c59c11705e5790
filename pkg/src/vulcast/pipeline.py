"""Raw raster to model-ready scene pipeline.

Stages, in order: recovery-pixel fill, background estimation and
subtraction, carry-forward fill with per-pixel staleness tracking, and
min-max scaling fit on the training split.  Missing values are NaN
throughout; pipeline output contains none.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RawScene",
    "Scene",
    "ScalerParams",
    "UnusableSceneError",
    "fill_recovery_pixels",
    "nearest_neighbor_fill",
    "estimate_background",
    "subtract_background",
    "carry_forward_fill",
    "preprocess_volcano",
]

CORNER_SIZE = 10
CORNER_MISSING_LIMIT = 0.10


class UnusableSceneError(ValueError):
    """Raised when no valid background region exists anywhere in a scene."""


@dataclass
class RawScene:
    """One pre-cropped temperature raster with NaN marking missing pixels."""

    grid: np.ndarray
    date: dt.date
    volcano_id: str = ""
    label: str = "viable"


@dataclass
class Scene:
    """Excess-temperature scene after pipeline completion."""

    grid: np.ndarray          # degC above background, fully observed
    date: dt.date
    fill_age: np.ndarray      # days since each pixel was truly observed
    background: float
    volcano_id: str = ""


@dataclass
class ScalerParams:
    """Training-split min/max for the 0-1 scaling."""

    x_min: float
    x_max: float

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise ValueError(f"degenerate scaler: min={self.x_min}, max={self.x_max}")

    @classmethod
    def fit(cls, scenes) -> "ScalerParams":
        lo = min(float(np.min(s.grid)) for s in scenes)
        hi = max(float(np.max(s.grid)) for s in scenes)
        return cls(lo, hi)

    def scale(self, x):
        return (np.asarray(x, dtype=np.float64) - self.x_min) / (self.x_max - self.x_min)

    def inverse(self, x):
        return np.asarray(x, dtype=np.float64) * (self.x_max - self.x_min) + self.x_min


def _direction_rank(dr: int, dc: int) -> int:
    """Tie-break priority for equidistant fills: N, E, S, W, then everything else."""
    if dc == 0 and dr < 0:
        return 0
    if dr == 0 and dc > 0:
        return 1
    if dc == 0 and dr > 0:
        return 2
    if dr == 0 and dc < 0:
        return 3
    return 4


def _nearest_valid(grid: np.ndarray, r: int, c: int,
                   valid_rc: np.ndarray) -> float:
    d2 = (valid_rc[:, 0] - r) ** 2 + (valid_rc[:, 1] - c) ** 2
    cand = valid_rc[d2 == d2.min()]

    def key(rc):
        dr, dc = int(rc[0]) - r, int(rc[1]) - c
        return (_direction_rank(dr, dc), dr, dc)

    vr, vc = min(cand, key=key)
    return grid[vr, vc]


def _cardinal_coverage(missing: np.ndarray, r: int, c: int) -> int:
    """Count cardinal directions along which a valid pixel exists."""
    count = 0
    count += bool(np.any(~missing[:r, c]))          # N
    count += bool(np.any(~missing[r, c + 1:]))      # E
    count += bool(np.any(~missing[r + 1:, c]))      # S
    count += bool(np.any(~missing[r, :c]))          # W
    return count


def fill_recovery_pixels(grid: np.ndarray) -> np.ndarray:
    """Fill missing pixels that have valid values in >= 3 cardinal directions.

    Each qualifying pixel takes the value of the nearest valid pixel in
    Euclidean distance (ties broken N, E, S, W, then row/column order).
    Fills are applied simultaneously per pass and passes repeat until a
    fixpoint, so newly filled pixels can enable further fills.
    """
    out = np.array(grid, dtype=np.float64)
    while True:
        missing = np.isnan(out)
        if not missing.any() or missing.all():
            return out
        valid_rc = np.argwhere(~missing)
        fills = []
        for r, c in np.argwhere(missing):
            if _cardinal_coverage(missing, r, c) >= 3:
                fills.append((r, c, _nearest_valid(out, r, c, valid_rc)))
        if not fills:
            return out
        for r, c, v in fills:
            out[r, c] = v


def nearest_neighbor_fill(grid: np.ndarray) -> np.ndarray:
    """Fill every missing pixel from its nearest valid pixel (same tie rule)."""
    out = np.array(grid, dtype=np.float64)
    missing = np.isnan(out)
    if not missing.any():
        return out
    if missing.all():
        raise ValueError("cannot interpolate a fully missing scene")
    valid_rc = np.argwhere(~missing)
    for r, c in np.argwhere(missing):
        out[r, c] = _nearest_valid(out, r, c, valid_rc)
    return out


def _window_positions(H: int, W: int, size: int, stride: int):
    """Clockwise perimeter window origins starting at the top-left corner."""
    seen = set()
    pos = []

    def push(r, c):
        if (r, c) not in seen:
            seen.add((r, c))
            pos.append((r, c))

    for c in range(0, W - size + 1, stride):      # top, left to right
        push(0, c)
    for r in range(0, H - size + 1, stride):      # right, top to bottom
        push(r, W - size)
    for c in range(W - size, -1, -stride):        # bottom, right to left
        push(H - size, c)
    for r in range(H - size, -1, -stride):        # left, bottom to top
        push(r, 0)
    return pos


def estimate_background(grid: np.ndarray) -> tuple[float, str]:
    """Average environmental background temperature of a scene.

    Primary path: mean of means of the 10x10 corner subsets with less than
    10% missing pixels.  Fallback: slide 10x10 windows clockwise around the
    perimeter (stride 10) and use the first four that qualify.  Returns
    (background, "corners" | "perimeter").
    """
    grid = np.asarray(grid, dtype=np.float64)
    H, W = grid.shape
    s = CORNER_SIZE
    if H < s or W < s:
        raise ValueError(f"grid {H}x{W} smaller than {s}x{s} background window")

    def qualifies(win):
        return np.isnan(win).mean() < CORNER_MISSING_LIMIT

    corners = [grid[:s, :s], grid[:s, W - s:], grid[H - s:, :s], grid[H - s:, W - s:]]
    kept = [np.nanmean(c) for c in corners if qualifies(c)]
    if kept:
        return float(np.mean(kept)), "corners"
    fallback = []
    for r, c in _window_positions(H, W, s, s):
        win = grid[r:r + s, c:c + s]
        if qualifies(win):
            fallback.append(np.nanmean(win))
            if len(fallback) == 4:
                break
    if not fallback:
        raise UnusableSceneError("no valid background region on the perimeter")
    return float(np.mean(fallback)), "perimeter"


def subtract_background(grid: np.ndarray, bg: float) -> np.ndarray:
    """Elementwise grid - bg; missing pixels stay missing."""
    if not np.isfinite(bg):
        raise ValueError(f"background must be finite, got {bg}")
    return np.asarray(grid, dtype=np.float64) - bg


def carry_forward_fill(grids, dates, volcano_id: str = "",
                       backgrounds=None) -> tuple[list[Scene], dict]:
    """Fill out-of-view pixels from the most recent observation per pixel.

    ``grids`` are chronological background-subtracted rasters with NaN
    missing.  The first scene's missing pixels are interpolated within that
    scene (fill age 0).  Returns the Scene list and a fill report.
    """
    if len(grids) != len(dates):
        raise ValueError("grids and dates differ in length")
    scenes: list[Scene] = []
    report = {"never_observed": 0, "carried": [], "interpolated_first": 0}
    last_value = None
    last_date = None  # per-pixel date of the last true observation, as ordinal
    for k, (grid, date) in enumerate(zip(grids, dates)):
        grid = np.asarray(grid, dtype=np.float64)
        missing = np.isnan(grid)
        ordinal = date.toordinal()
        if k == 0:
            if missing.all():
                report["never_observed"] += int(missing.sum())
                filled = np.zeros_like(grid)
            elif missing.any():
                report["interpolated_first"] = int(missing.sum())
                filled = nearest_neighbor_fill(grid)
            else:
                filled = grid.copy()
            last_value = filled.copy()
            last_date = np.full(grid.shape, ordinal, dtype=np.int64)
            age = np.zeros(grid.shape)
        else:
            filled = np.where(missing, last_value, grid)
            last_date = np.where(missing, last_date, ordinal)
            age = (ordinal - last_date).astype(np.float64)
            last_value = filled.copy()
            report["carried"].append(int(missing.sum()))
        bg = backgrounds[k] if backgrounds is not None else float("nan")
        scenes.append(Scene(filled, date, age, bg, volcano_id))
    return scenes, report


def preprocess_volcano(raw_scenes: list[RawScene]) -> tuple[list[Scene], dict]:
    """Run the full per-volcano pipeline on chronological raw scenes.

    Scenes without any valid background region are excluded and noted in
    the report.
    """
    raw_scenes = sorted(raw_scenes, key=lambda s: s.date)
    grids, dates, backgrounds = [], [], []
    report = {"scenes": [], "excluded": []}
    for s in raw_scenes:
        recovered = fill_recovery_pixels(s.grid)
        try:
            bg, path = estimate_background(recovered)
        except UnusableSceneError:
            report["excluded"].append(str(s.date))
            continue
        grids.append(subtract_background(recovered, bg))
        dates.append(s.date)
        backgrounds.append(bg)
        report["scenes"].append({
            "date": str(s.date),
            "background": bg,
            "background_path": path,
            "recovery_filled": int(np.isnan(s.grid).sum() - np.isnan(recovered).sum()),
        })
    volcano_id = raw_scenes[0].volcano_id if raw_scenes else ""
    scenes, fill_report = carry_forward_fill(grids, dates, volcano_id, backgrounds)
    report["fill"] = fill_report
    return scenes, report
