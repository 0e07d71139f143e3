"""Central finite-difference check of analytic gradients."""

from typing import Callable

import numpy as np

from .tensor import Tensor, backward, no_grad


def numeric_gradient(f: Callable[[Tensor], Tensor], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f(Tensor(x)).item()
            flat[i] = orig - step
            lo = f(Tensor(x)).item()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def analytic_gradient(f: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    xt = Tensor(x, requires_grad=True)
    y = f(xt)
    if not y.requires_grad:
        return np.zeros_like(xt.data)
    backward(y)
    return np.zeros_like(xt.data) if xt.grad is None else xt.grad


def gradient_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-5) -> float:
    """Max over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-12)."""
    x = np.array(x, dtype=np.float64)
    a = analytic_gradient(f, x)
    n = numeric_gradient(f, x, step)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-12)
    return float(np.max(np.abs(a - n) / denom))
