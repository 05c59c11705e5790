"""Training-window construction: autocorrelation-driven window length,
chronological splits, sliding-window sequences with elapsed-time fields,
and single-volcano training filters.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .pipeline import Scene

__all__ = [
    "SceneSequence",
    "SplitSpec",
    "acf",
    "select_window_length",
    "chronological_split",
    "build_sequences",
    "filter_volcano",
    "save_sequences",
    "load_sequences",
]


@dataclass
class SceneSequence:
    """n input scenes, their elapsed-time structure, and one target scene.

    dt_preceding[i] is t_i - t_{i-1} (first entry 0); dt_following[i] is
    t_{i+1} - t_i with the last entry being the gap to the target.  The
    per-pixel maps add each pixel's staleness (fill age) in the scene the
    gap is measured from.
    """

    volcano_id: str
    dates: list                    # n+1 dates, inputs then target
    inputs: np.ndarray             # (n, H, W), scaled units
    target: np.ndarray             # (H, W)
    dt_preceding: np.ndarray       # (n,)
    dt_following: np.ndarray       # (n,)
    dt_maps_preceding: np.ndarray  # (n, H, W)
    dt_maps_following: np.ndarray  # (n, H, W)

    def __post_init__(self):
        if np.any(self.dt_preceding < 0) or np.any(self.dt_following < 0):
            raise ValueError("negative inter-scene gap")


@dataclass
class SplitSpec:
    """Per-volcano chronological split fractions."""

    train: float = 0.70
    validation: float = 0.15
    test: float = 0.15

    def __post_init__(self):
        if abs(self.train + self.validation + self.test - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")

    @classmethod
    def merged_train(cls) -> "SplitSpec":
        """Train on the chronologically first 85% of scenes, no validation."""
        return cls(0.85, 0.0, 0.15)


def acf(series, max_lag: int) -> np.ndarray:
    """Sample autocorrelations r_1..r_max_lag.

    r_k = sum (x_t - xbar)(x_{t+k} - xbar) / sum (x_t - xbar)^2.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.size <= max_lag:
        raise ValueError(f"series of length {x.size} too short for max_lag {max_lag}")
    d = x - x.mean()
    denom = float(d @ d)
    if denom == 0.0:
        raise ValueError("constant series has no autocorrelation structure")
    return np.array([float(d[:-k] @ d[k:]) / denom for k in range(1, max_lag + 1)])


def select_window_length(series, mode: str = "per_volcano",
                         min_n: int = 3, max_n: int = 10,
                         max_lag: int = 12) -> int:
    """Window length from the largest significant autocorrelation lag.

    per_volcano: the largest lag k with |r_k| > 1.96/sqrt(N), clamped to
    [min_n, max_n]; no significant lag gives the floor.  pooled mode takes
    a list of per-volcano series and rounds the mean of their lags.
    """
    if mode == "pooled":
        lags = [select_window_length(s, "per_volcano", min_n, max_n, max_lag)
                for s in series]
        return int(round(float(np.mean(lags))))
    if mode != "per_volcano":
        raise ValueError(f"unknown mode {mode!r}")
    x = np.asarray(series, dtype=np.float64)
    if x.size < 12:
        raise ValueError(f"series of {x.size} points too short (need >= 12)")
    r = acf(x, min(max_lag, x.size - 1))
    bound = 1.96 / np.sqrt(x.size)
    significant = np.nonzero(np.abs(r) > bound)[0]
    if significant.size == 0:
        return min_n
    return int(np.clip(significant[-1] + 1, min_n, max_n))


def chronological_split(scenes: list[Scene], spec: SplitSpec | None = None
                        ) -> dict[str, list[Scene]]:
    """Per-volcano chronological split with floor boundaries, remainder to test."""
    spec = spec or SplitSpec()
    out = {"train": [], "validation": [], "test": []}
    by_volcano: dict[str, list[Scene]] = {}
    for s in scenes:
        by_volcano.setdefault(s.volcano_id, []).append(s)
    for vid, group in by_volcano.items():
        group = sorted(group, key=lambda s: s.date)
        m = len(group)
        n_train = int(np.floor(spec.train * m))
        n_val = int(np.floor(spec.validation * m))
        out["train"].extend(group[:n_train])
        out["validation"].extend(group[n_train:n_train + n_val])
        out["test"].extend(group[n_train + n_val:])
    return out


def _dt_maps(window: list[Scene], gaps_pre, gaps_fol):
    n = len(window) - 1
    H, W = window[0].grid.shape
    pre = np.zeros((n, H, W))
    fol = np.zeros((n, H, W))
    for i in range(n):
        if i > 0:
            pre[i] = gaps_pre[i] + window[i - 1].fill_age
        fol[i] = gaps_fol[i] + window[i].fill_age
    return pre, fol


def build_sequences(scenes: list[Scene], n: int, scaler=None) -> list[SceneSequence]:
    """Stride-1 sliding windows of n inputs plus one target per volcano.

    ``scenes`` must come from a single split so no sequence straddles a
    split boundary.  When a scaler is given, grids are scaled; elapsed-time
    fields always stay in raw days.
    """
    by_volcano: dict[str, list[Scene]] = {}
    for s in scenes:
        by_volcano.setdefault(s.volcano_id, []).append(s)
    sequences = []
    for vid, group in sorted(by_volcano.items()):
        group = sorted(group, key=lambda s: s.date)
        if len(group) < n + 1:
            warnings.warn(f"volcano {vid}: {len(group)} scenes < window {n}+1, skipped")
            continue
        for start in range(len(group) - n):
            window = group[start:start + n + 1]
            dates = [s.date for s in window]
            gaps = np.array([(dates[i + 1] - dates[i]).days for i in range(n)],
                            dtype=np.float64)
            gaps_pre = np.concatenate([[0.0], gaps[:-1]])
            gaps_fol = gaps
            maps_pre, maps_fol = _dt_maps(window, gaps_pre, gaps_fol)
            grids = np.stack([s.grid for s in window])
            if scaler is not None:
                grids = scaler.scale(grids)
            sequences.append(SceneSequence(
                volcano_id=vid,
                dates=dates,
                inputs=grids[:n],
                target=grids[n],
                dt_preceding=gaps_pre,
                dt_following=gaps_fol,
                dt_maps_preceding=maps_pre,
                dt_maps_following=maps_fol,
            ))
    return sequences


def filter_volcano(sequences: list[SceneSequence], volcano_id: str
                   ) -> list[SceneSequence]:
    """Restrict a sequence list to one volcano; idempotent."""
    known = {s.volcano_id for s in sequences}
    if volcano_id not in known:
        raise ValueError(f"unknown volcano {volcano_id!r}; have {sorted(known)}")
    return [s for s in sequences if s.volcano_id == volcano_id]


def save_sequences(path, sequences: list[SceneSequence]):
    """Serialize sequences to a single .npz archive (exact round trip)."""
    payload = {"count": np.array(len(sequences))}
    for i, s in enumerate(sequences):
        payload[f"{i}_inputs"] = s.inputs
        payload[f"{i}_target"] = s.target
        payload[f"{i}_dt_pre"] = s.dt_preceding
        payload[f"{i}_dt_fol"] = s.dt_following
        payload[f"{i}_map_pre"] = s.dt_maps_preceding
        payload[f"{i}_map_fol"] = s.dt_maps_following
        payload[f"{i}_meta"] = np.array(
            [s.volcano_id] + [d.isoformat() for d in s.dates])
    np.savez_compressed(path, **payload)


def load_sequences(path) -> list[SceneSequence]:
    import datetime as dt

    with np.load(path, allow_pickle=False) as z:
        count = int(z["count"])
        out = []
        for i in range(count):
            meta = [str(v) for v in z[f"{i}_meta"]]
            out.append(SceneSequence(
                volcano_id=meta[0],
                dates=[dt.date.fromisoformat(v) for v in meta[1:]],
                inputs=z[f"{i}_inputs"],
                target=z[f"{i}_target"],
                dt_preceding=z[f"{i}_dt_pre"],
                dt_following=z[f"{i}_dt_fol"],
                dt_maps_preceding=z[f"{i}_map_pre"],
                dt_maps_following=z[f"{i}_map_fol"],
            ))
    return out
