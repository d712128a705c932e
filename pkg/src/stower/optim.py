"""Adam with bias correction and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, clip_grad_norm


@dataclass
class AdamState:
    lr: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    @classmethod
    def zeros_like(cls, params, **kwargs) -> "AdamState":
        state = cls(**kwargs)
        state.first_moment = [np.zeros_like(p.data if isinstance(p, Tensor) else p) for p in params]
        state.second_moment = [np.zeros_like(m) for m in state.first_moment]
        return state


def adam_step(params: list[np.ndarray], grads: list, state: AdamState) -> None:
    """One in-place Adam update of ``params`` (numpy arrays).

    ``grads`` entries may be None, meaning the parameter received no gradient
    this step; its moments decay as if the gradient were zero.
    """
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ValueError("params, grads and optimizer state differ in length")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p -= update.astype(p.dtype)


class Adam:
    """Optimizer over a fixed list of parameter tensors."""

    def __init__(self, params, lr: float = 0.0005, clip_norm: float | None = 1.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.clip_norm = clip_norm
        self.state = AdamState.zeros_like(self.params, lr=lr, beta1=betas[0],
                                          beta2=betas[1], eps=eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self) -> float:
        """Clip, update, and return the pre-clipping gradient norm."""
        norm = clip_grad_norm(self.params, self.clip_norm) if self.clip_norm else float("nan")
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state)
        return norm


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss or gradients)."""


def check_finite(value: float, where: str, **diagnostics):
    if not np.isfinite(value):
        detail = ", ".join(f"{k}={v}" for k, v in diagnostics.items())
        raise TrainingError(f"non-finite loss {value} in {where}" + (f" ({detail})" if detail else ""))
