"""Central finite-difference checks for the autodiff engine."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), element-wise."""
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_grad(f: Callable[[], Tensor], p: Tensor, h: float = 1e-5) -> np.ndarray:
    """d f / d p by central differences, perturbing ``p.data`` in place."""
    g = np.zeros(p.shape, dtype=float)
    flat = p.data.reshape(-1)
    gf = g.reshape(-1)
    with T.no_grad():
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            fp = float(f().data)
            flat[k] = old - h
            fm = float(f().data)
            flat[k] = old
            gf[k] = (fp - fm) / (2 * h)
    return g


def check_gradients(f: Callable[[], Tensor], params: list[Tensor], h: float = 1e-5,
                    floor: float = 1e-8) -> dict[str, float]:
    """Max relative error between analytic and numeric gradients, per parameter."""
    for p in params:
        p.grad = None
    T.backward(f())
    report = {}
    for i, p in enumerate(params):
        analytic = np.zeros(p.shape) if p.grad is None else p.grad
        numeric = numeric_grad(f, p, h)
        report[p.name or f"param{i}"] = float(relative_error(analytic, numeric, floor).max(initial=0.0))
    return report
