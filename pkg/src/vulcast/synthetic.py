"""Seeded synthetic corpus generator.

Stands in for the real thermal archive at desk scale: each synthetic
volcano is a noisy background temperature field plus up to three Gaussian
hotspot blobs whose amplitude and position evolve by a random walk.  Scene
gaps are drawn from a long-tailed lognormal with mean near 37 days, and
random wedges along scene edges simulate field-of-view cutoffs.  The
wedges never reach more than 40% of the frame, so at least one 10x10
corner always qualifies for background estimation.
"""

from __future__ import annotations

import datetime as dt
import math
from pathlib import Path

import numpy as np

from .pipeline import RawScene
from . import sceneio

__all__ = ["synthesize_volcano", "synthesize_corpus", "write_corpus", "draw_gaps"]

# lognormal tuned so mean ~= 37 days with a heavy tail (sd ~ 2x mean)
_GAP_SIGMA = 1.27
_GAP_MU = math.log(37.0) - _GAP_SIGMA ** 2 / 2.0


def draw_gaps(rng: np.random.Generator, count: int) -> np.ndarray:
    """Integer day gaps (>= 1) from the long-tailed scene-interval model."""
    gaps = rng.lognormal(_GAP_MU, _GAP_SIGMA, size=count)
    return np.maximum(np.round(gaps), 1.0)


def _gaussian_blob(H, W, row, col, amplitude, radius):
    rr, cc = np.mgrid[0:H, 0:W]
    return amplitude * np.exp(-(((rr - row) ** 2 + (cc - col) ** 2)
                                / (2.0 * radius ** 2)))


def _missing_wedge(rng, H, W):
    """Half-plane cut near one edge covering at most ~40% of the frame."""
    side = rng.integers(4)
    depth = int(rng.integers(2, max(3, int(0.3 * H))))
    slope = rng.uniform(-0.2, 0.2)
    rr, cc = np.mgrid[0:H, 0:W]
    if side == 0:
        return rr < depth + slope * cc
    if side == 1:
        return rr > H - 1 - depth + slope * cc
    if side == 2:
        return cc < depth + slope * rr
    return cc > W - 1 - depth + slope * rr


def synthesize_volcano(rng: np.random.Generator, volcano_id: str,
                       n_scenes: int, size: int = 96,
                       start: dt.date = dt.date(2000, 1, 1),
                       missing_prob: float = 0.3,
                       recovery_prob: float = 0.15) -> list[RawScene]:
    """Generate one volcano's chronological raw scene list."""
    H = W = size
    base_temp = rng.uniform(270.0, 295.0)
    n_blobs = int(rng.integers(0, 4))
    blobs = [{
        "row": rng.uniform(0.3 * H, 0.7 * H),
        "col": rng.uniform(0.3 * W, 0.7 * W),
        "amp": rng.uniform(15.0, 60.0),
        "radius": rng.uniform(1.5, 4.0),
    } for _ in range(n_blobs)]
    gaps = draw_gaps(rng, n_scenes - 1)
    dates = [start]
    for g in gaps:
        dates.append(dates[-1] + dt.timedelta(days=int(g)))
    scenes = []
    for date in dates:
        grid = base_temp + rng.normal(0.0, 1.5, size=(H, W))
        grid += 3.0 * np.sin(2 * np.pi * date.timetuple().tm_yday / 365.25)
        for b in blobs:
            grid += _gaussian_blob(H, W, b["row"], b["col"], b["amp"], b["radius"])
            b["row"] = np.clip(b["row"] + rng.normal(0, 0.8), 5, H - 6)
            b["col"] = np.clip(b["col"] + rng.normal(0, 0.8), 5, W - 6)
            b["amp"] = max(0.0, b["amp"] + rng.normal(0, 4.0))
        if blobs and rng.random() < recovery_prob:
            # a few recovery holes inside the hottest blob
            b = max(blobs, key=lambda b: b["amp"])
            r0, c0 = int(b["row"]), int(b["col"])
            for _ in range(int(rng.integers(1, 4))):
                rr = int(np.clip(r0 + rng.integers(-1, 2), 1, H - 2))
                cc = int(np.clip(c0 + rng.integers(-1, 2), 1, W - 2))
                grid[rr, cc] = np.nan
        if rng.random() < missing_prob:
            grid[_missing_wedge(rng, H, W)] = np.nan
        scenes.append(RawScene(grid, date, volcano_id))
    return scenes


def synthesize_corpus(seed: int, n_volcanoes: int, n_scenes: int,
                      size: int = 96) -> dict[str, list[RawScene]]:
    """Deterministic multi-volcano corpus keyed by volcano id."""
    rng = np.random.default_rng(seed)
    corpus = {}
    for v in range(n_volcanoes):
        vid = f"synth{v:02d}"
        corpus[vid] = synthesize_volcano(rng, vid, n_scenes, size=size)
    return corpus


def write_corpus(out_dir, corpus: dict[str, list[RawScene]]):
    """Write rasters plus one manifest per volcano; returns manifest paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for vid, scenes in corpus.items():
        entries = []
        for s in scenes:
            fname = f"{vid}_{s.date.isoformat()}.f32"
            sceneio.write_raster(out_dir / fname, s.grid)
            entries.append({"file": fname, "date": s.date.isoformat(),
                            "label": s.label})
        H, W = scenes[0].grid.shape
        mpath = out_dir / f"{vid}.manifest.json"
        sceneio.write_manifest(mpath, vid, W, H, entries)
        paths.append(mpath)
    return paths
