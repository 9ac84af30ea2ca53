"""Adam with per-iteration exponential learning-rate decay, and global-norm clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    base_lr: float = 3e-4
    decay: float = 0.999
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    @property
    def lr(self) -> float:
        """Learning rate the next step will use: base_lr * decay**step."""
        return self.base_lr * self.decay ** self.step


@dataclass
class Adam:
    params: list[Tensor]
    lr: float = 3e-4
    decay: float = 0.999
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.params = list(self.params)
        self.state = AdamState(
            m=[np.zeros_like(p.data) for p in self.params],
            v=[np.zeros_like(p.data) for p in self.params],
            base_lr=self.lr, decay=self.decay, betas=self.betas, eps=self.eps,
        )

    @property
    def current_lr(self) -> float:
        return self.state.lr

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, self.state)


def adam_step(params: list[Tensor], state: AdamState) -> None:
    missing = [p.name or f"#{i}" for i, p in enumerate(params) if p.grad is None]
    if missing:
        raise ValueError(f"adam_step: no gradient for parameter(s) {missing[:5]}")
    b1, b2 = state.betas
    lr = state.lr
    state.step += 1
    t = state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= (lr / c1) * m / (np.sqrt(v / c2) + state.eps)


def global_grad_norm(params: list[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    return float(np.sqrt(total))


def clip_gradients(params: list[Tensor], threshold: float = 1.0) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``threshold``.

    Returns the norm before clipping.
    """
    if threshold <= 0:
        raise ValueError("clip threshold must be positive")
    norm = global_grad_norm(params)
    if norm > threshold:
        scale = threshold / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * np.asarray(scale, dtype=p.grad.dtype)
    return norm
