"""Training driver: split-guarded sequence store, the Adam training loop
with L2 regularization and constraint projection, and the regularization
sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, mse_loss
from .evaluation import rmse
from .model import ForecastModel, ModelSpec
from .optim import Adam, project_nonpositive

__all__ = [
    "SplitViolation",
    "SequenceStore",
    "TrainResult",
    "train_model",
    "validation_rmse",
    "regularization_sweep",
    "DEFAULT_WEIGHT_DECAY_SWEEP",
]

DEFAULT_WEIGHT_DECAY_SWEEP = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)


class SplitViolation(RuntimeError):
    """A training-mode read touched validation or test data."""


class SequenceStore:
    """Split-tagged access to sequences, instrumented for leak auditing.

    In training mode, any read of a non-train split raises and is counted;
    ``read_counts`` records every (mode, split) access so a test can prove
    zero validation/test reads during gradient computation.
    """

    def __init__(self, splits: dict[str, list]):
        self._splits = dict(splits)
        self.mode = "idle"
        self.read_counts: dict[tuple[str, str], int] = {}

    def set_mode(self, mode: str):
        self.mode = mode

    def get(self, split: str) -> list:
        if split not in self._splits:
            raise KeyError(f"unknown split {split!r}")
        self.read_counts[(self.mode, split)] = \
            self.read_counts.get((self.mode, split), 0) + 1
        if self.mode == "train" and split != "train":
            raise SplitViolation(
                f"attempted {split!r} read during training gradient computation")
        return self._splits[split]

    def counts_for(self, mode: str, split: str) -> int:
        return self.read_counts.get((mode, split), 0)


@dataclass
class TrainResult:
    model: ForecastModel
    epoch_losses: list[float] = field(default_factory=list)
    diverged: bool = False
    skipped_steps: int = 0


def train_model(spec: ModelSpec, store: SequenceStore, epochs: int = 100,
                batch_size: int = 8, learning_rate: float = 1e-3,
                seed: int = 0) -> TrainResult:
    """Train one model on the store's train split.

    Gradients are accumulated per mini-batch of sequences; the weight-decay
    penalty is added to gradients inside Adam; constrained time-gate
    weights are projected non-positive after every step.
    """
    rng = np.random.default_rng(seed)
    model = ForecastModel(spec, rng)
    opt = Adam(model.parameters(), learning_rate=learning_rate,
               weight_decay=spec.weight_decay)
    for w in model.constrained_parameters():
        project_nonpositive(w)
    store.set_mode("train")
    try:
        sequences = store.get("train")
        result = TrainResult(model)
        n = len(sequences)
        if n == 0:
            raise ValueError("empty training split")
        for _ in range(epochs):
            order = rng.permutation(n)
            epoch_loss = 0.0
            for start in range(0, n, batch_size):
                batch = order[start:start + batch_size]
                opt.zero_grad()
                batch_loss = 0.0
                for i in batch:
                    seq = sequences[i]
                    loss = mse_loss(model.forward(seq), Tensor(seq.target))
                    # mean over the batch: scale each sample's contribution
                    (loss * (1.0 / batch.size)).backward()
                    batch_loss += loss.item()
                if not opt.step():
                    result.skipped_steps += 1
                for w in model.constrained_parameters():
                    project_nonpositive(w)
                epoch_loss += batch_loss
            epoch_loss /= n
            if not np.isfinite(epoch_loss):
                result.diverged = True
                result.epoch_losses.append(float("nan"))
                break
            result.epoch_losses.append(epoch_loss)
    finally:
        store.set_mode("idle")
    return result


def _forecast_rmse(model: ForecastModel, sequences, scaler) -> float:
    preds = [model.forecast(s) for s in sequences]
    targets = [s.target for s in sequences]
    if scaler is not None:
        preds = [scaler.inverse(p) for p in preds]
        targets = [scaler.inverse(t) for t in targets]
    return rmse(np.stack(preds), np.stack(targets))


def validation_rmse(model: ForecastModel, store: SequenceStore, scaler=None,
                    split: str = "validation") -> float:
    """Pooled RMSE in unscaled degC on the given split."""
    store.set_mode("evaluate")
    try:
        sequences = store.get(split)
    finally:
        store.set_mode("idle")
    if not sequences:
        raise ValueError(f"split {split!r} is empty")
    return _forecast_rmse(model, sequences, scaler)


def regularization_sweep(spec: ModelSpec, store: SequenceStore, scaler=None,
                         strengths=DEFAULT_WEIGHT_DECAY_SWEEP,
                         epochs: int = 100, batch_size: int = 8,
                         learning_rate: float = 1e-3, seed: int = 0):
    """Train at every regularization strength; pick the best by validation RMSE.

    Returns (best_result, table) where table rows are dicts with the
    strength, final training loss, validation RMSE, and divergence flag.
    """
    if not strengths:
        raise ValueError("sweep list must be non-empty")
    table = []
    best = None
    best_rmse = np.inf
    for wd in strengths:
        row_spec = ModelSpec.from_dict({**spec.to_dict(), "weight_decay": wd})
        result = train_model(row_spec, store, epochs=epochs, batch_size=batch_size,
                             learning_rate=learning_rate, seed=seed)
        row = {"weight_decay": wd, "diverged": result.diverged,
               "final_train_loss": result.epoch_losses[-1] if result.epoch_losses
               else float("nan")}
        if result.diverged:
            row["validation_rmse"] = float("nan")
        else:
            row["validation_rmse"] = validation_rmse(result.model, store, scaler)
            if row["validation_rmse"] < best_rmse:
                best_rmse = row["validation_rmse"]
                best = result
        table.append(row)
    if best is None:
        raise RuntimeError("every sweep run diverged")
    return best, table
