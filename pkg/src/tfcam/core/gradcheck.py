"""Central finite-difference oracle for analytic gradients."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import Tape, Tensor, backward


def numerical_gradient(loss_fn: Callable[[], float], tensor: Tensor,
                       step: float = 1e-5) -> np.ndarray:
    """Perturb ``tensor.data`` in place, one entry at a time."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = loss_fn()
        flat[i] = orig - step
        down = loss_fn()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(diff / scale)


def check_gradients(build_loss: Callable[[], Tensor], tensors: Iterable[Tensor],
                    step: float = 1e-5) -> dict:
    """Compare taped gradients of ``build_loss()`` with finite differences.

    ``build_loss`` must rebuild the loss from the current tensor values on
    every call.  Returns ``{name: relative error}`` per tensor.
    """
    tensors = list(tensors)
    for t in tensors:
        t.grad = np.zeros_like(t.data)
    with Tape() as tape:
        loss = build_loss()
    backward(tape, loss)

    def scalar() -> float:
        return float(build_loss().data)

    errors = {}
    for k, t in enumerate(tensors):
        numeric = numerical_gradient(scalar, t, step)
        errors[t.name or f"tensor{k}"] = relative_error(t.grad, numeric)
    return errors
