"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(f: Callable[[], Tensor], t: Tensor, eps: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        plus = f().item()
        flat[i] = orig - eps
        minus = f().item()
        flat[i] = orig
        out[i] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)


def gradcheck(f: Callable[[], Tensor], tensors: Sequence[Tensor], eps: float = 1e-5, atol: float = 1e-7) -> float:
    """Worst relative error between backprop and finite differences over ``tensors``.

    Tensors whose analytic and numeric gradients are both below ``atol`` in
    norm count as agreeing; their true gradient is zero and the ratio of two
    round-off residues carries no information.
    """
    for t in tensors:
        t.grad = None
    loss = f()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    worst = 0.0
    for t, a in zip(tensors, analytic):
        num = numerical_grad(f, t, eps)
        if max(np.linalg.norm(a), np.linalg.norm(num)) < atol:
            continue
        worst = max(worst, relative_error(a, num))
    return worst
