"""Shared test utilities: finite-difference gradient checking."""

import numpy as np

from vulcast.autodiff import Tensor


def numeric_gradient(f, tensor: Tensor, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar-valued f() w.r.t. tensor.data."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def gradcheck(build, params, h: float = 1e-6, tol: float = 1e-4) -> float:
    """Compare analytic and numeric gradients for every tensor in params.

    ``build()`` constructs and returns a fresh scalar loss Tensor.  Returns
    the worst relative error observed; asserts it is below tol.
    """
    for p in params:
        p.zero_grad()
    loss = build()
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numeric_gradient(lambda: build().item(), p, h=h)
        denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1.0)
        err = float(np.max(np.abs(analytic - numeric) / denom))
        worst = max(worst, err)
    assert worst < tol, f"gradient check failed: rel error {worst:.3e} >= {tol}"
    return worst
