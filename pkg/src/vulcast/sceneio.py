"""Raster and manifest file formats.

Scene rasters are raw little-endian IEEE-754 32-bit floats, row-major,
with NaN marking missing pixels.  Each volcano has a JSON manifest listing
its scenes in chronological order.
"""

from __future__ import annotations

import datetime as dt
import json
from pathlib import Path

import numpy as np

from .pipeline import RawScene

__all__ = [
    "write_raster",
    "read_raster",
    "write_manifest",
    "read_manifest",
    "load_volcano",
]


def write_raster(path, grid: np.ndarray):
    np.asarray(grid, dtype="<f4").tofile(path)


def read_raster(path, height: int, width: int) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    if data.size != height * width:
        raise ValueError(f"{path}: expected {height * width} values, got {data.size}")
    return data.reshape(height, width).astype(np.float64)


def write_manifest(path, volcano_id: str, width: int, height: int, scenes: list[dict]):
    manifest = {
        "volcano_id": volcano_id,
        "width": width,
        "height": height,
        "scenes": scenes,
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def read_manifest(path) -> dict:
    manifest = json.loads(Path(path).read_text())
    for key in ("volcano_id", "width", "height", "scenes"):
        if key not in manifest:
            raise ValueError(f"{path}: manifest missing {key!r}")
    return manifest


def load_volcano(manifest_path) -> list[RawScene]:
    """Load all scenes named by a volcano manifest, chronologically ordered."""
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    scenes = []
    for entry in manifest["scenes"]:
        grid = read_raster(manifest_path.parent / entry["file"],
                           manifest["height"], manifest["width"])
        scenes.append(RawScene(
            grid=grid,
            date=dt.date.fromisoformat(entry["date"]),
            volcano_id=manifest["volcano_id"],
            label=entry.get("label", "viable"),
        ))
    return sorted(scenes, key=lambda s: s.date)
