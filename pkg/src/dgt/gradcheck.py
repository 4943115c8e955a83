"""Central finite-difference gradient checking."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor


def numerical_grad(fn, inputs: list[Tensor], step: float = 1e-5) -> list[np.ndarray]:
    """d fn() / d input for each input; ``fn`` returns a scalar Tensor."""
    grads = []
    for t in inputs:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(fn().data)
            flat[i] = orig - step
            down = float(fn().data)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < floor:
        return float(diff)
    return float(diff / scale)


def check_gradients(fn, inputs: list[Tensor], step: float = 1e-5) -> list[float]:
    """Relative error between backprop and finite differences, per input."""
    for t in inputs:
        t.grad = None
    out = fn()
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    numeric = numerical_grad(fn, inputs, step)
    return [relative_error(a, n) for a, n in zip(analytic, numeric)]
