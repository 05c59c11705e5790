"""Adam optimizer and the non-positivity projection for time-gate weights."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor

__all__ = ["AdamState", "Adam", "project_nonpositive"]


@dataclass
class AdamState:
    """Per-parameter Adam accumulators plus the optimizer hyperparameters.

    ``weight_decay`` is an L2 penalty added to the raw gradient before the
    moment updates (coupled with the adaptive step).
    """

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    first_moment: dict[int, np.ndarray] = field(default_factory=dict)
    second_moment: dict[int, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adam with bias correction over a fixed list of parameter tensors."""

    def __init__(self, params: list[Tensor], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8, weight_decay: float = 0.0):
        if weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        self.params = list(params)
        self.state = AdamState(learning_rate, beta1, beta2, epsilon, weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self) -> bool:
        """Apply one update.  Returns False (no-op) on non-finite gradients."""
        grads = []
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                return False
            grads.append(g)
        s = self.state
        s.step_count += 1
        bc1 = 1.0 - s.beta1 ** s.step_count
        bc2 = 1.0 - s.beta2 ** s.step_count
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if s.weight_decay:
                g = g + s.weight_decay * p.data
            m = s.first_moment.get(i)
            v = s.second_moment.get(i)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            m = s.beta1 * m + (1.0 - s.beta1) * g
            v = s.beta2 * v + (1.0 - s.beta2) * g * g
            s.first_moment[i] = m
            s.second_moment[i] = v
            p.data -= s.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + s.epsilon)
        return True


def project_nonpositive(W: Tensor) -> Tensor:
    """Clamp every element to (-inf, 0] in place; idempotent."""
    np.minimum(W.data, 0.0, out=W.data)
    return W
