"""Naive forecasts and the pooled autoregressive baseline.

The AR model shares one coefficient vector across all pixels and volcanoes
and has no intercept: the forecast is a per-pixel linear combination of the
last ``p`` scenes, most recent first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, matmul, mse_loss
from .optim import Adam

__all__ = [
    "ARModel",
    "last_scene_forecast",
    "all_zeros_forecast",
    "ar_windows",
    "ar_fit",
    "ar_forecast",
]


@dataclass
class ARModel:
    order: int
    coefficients: np.ndarray  # phi_1..phi_p, phi_1 weighting the most recent scene

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if self.coefficients.shape != (self.order,):
            raise ValueError(
                f"expected {self.order} coefficients, got {self.coefficients.shape}")


def last_scene_forecast(scenes: np.ndarray) -> np.ndarray:
    """Forecast no change: return the final input scene."""
    scenes = np.asarray(scenes, dtype=np.float64)
    if scenes.shape[0] == 0:
        raise ValueError("empty scene sequence")
    return scenes[-1].copy()


def all_zeros_forecast(shape) -> np.ndarray:
    """Forecast a homogeneous scene at the background temperature."""
    return np.zeros(shape, dtype=np.float64)


def ar_windows(scenes: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Flatten sliding windows into a pooled regression design.

    Returns (X, y) with X of shape (rows, p): column i holds the value i+1
    steps before the target, one row per (window, pixel).
    """
    scenes = np.asarray(scenes, dtype=np.float64)
    m = scenes.shape[0]
    if m < p + 1:
        raise ValueError(f"need at least {p + 1} scenes for AR({p}), got {m}")
    rows_X, rows_y = [], []
    for t in range(p, m):
        lagged = np.stack([scenes[t - i].ravel() for i in range(1, p + 1)], axis=1)
        rows_X.append(lagged)
        rows_y.append(scenes[t].ravel())
    return np.concatenate(rows_X), np.concatenate(rows_y)


def ar_fit(X: np.ndarray, y: np.ndarray, p: int, method: str = "closed_form",
           epochs: int = 100, batch_size: int = 8, learning_rate: float = 1e-3,
           seed: int = 0) -> ARModel:
    """Fit pooled AR coefficients from a (rows, p) design.

    closed_form solves the least-squares problem directly (minimum-norm
    solution when the design is rank deficient, e.g. constant series);
    gradient mirrors the network training protocol (Adam on MSE over
    shuffled mini-batches of windows).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != p:
        raise ValueError(f"design must be (rows, {p}), got {X.shape}")
    if X.shape[0] < p + 1:
        raise ValueError(f"need more than {p} rows, got {X.shape[0]}")
    if method == "closed_form":
        phi, _, rank, sv = np.linalg.lstsq(X, y, rcond=None)
        if not np.all(np.isfinite(phi)):
            cond = sv[0] / sv[-1] if sv[-1] else np.inf
            raise ValueError(f"normal equations ill-conditioned (cond={cond:.3e})")
        return ARModel(p, phi)
    if method != "gradient":
        raise ValueError(f"unknown fit method {method!r}")
    rng = np.random.default_rng(seed)
    phi = Tensor(np.zeros((p, 1)), requires_grad=True)
    opt = Adam([phi], learning_rate=learning_rate)
    n = X.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            pred = matmul(Tensor(X[idx]), phi)
            loss = mse_loss(pred, Tensor(y[idx, None]))
            opt.zero_grad()
            loss.backward()
            opt.step()
    return ARModel(p, phi.data.ravel())


def ar_forecast(model: ARModel, scenes: np.ndarray) -> np.ndarray:
    """Per-pixel linear combination of the last p scenes (no intercept)."""
    scenes = np.asarray(scenes, dtype=np.float64)
    p = model.order
    if scenes.shape[0] < p:
        raise ValueError(f"sequence of {scenes.shape[0]} scenes shorter than AR order {p}")
    out = model.coefficients[0] * scenes[-1]
    for i in range(2, p + 1):
        out += model.coefficients[i - 1] * scenes[-i]
    return out
