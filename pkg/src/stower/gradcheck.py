"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, default_dtype


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    def __str__(self):
        lines = [f"{name:40s} rel_err={err:.2e} ({self.checked[name]} entries)"
                 for name, err in self.errors.items()]
        lines.append(f"max relative error: {self.max_error:.2e}")
        return "\n".join(lines)


def finite_diff_check(loss_fn: Callable[[], Tensor], params: Sequence[tuple[str, Tensor]] | Sequence[Tensor],
                      eps: float = 1e-4, max_entries: int = 24, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn()`` against central differences.

    The analytic pass runs at the parameters' own precision (float32 by
    default). The finite-difference oracle re-evaluates ``loss_fn`` in
    float64 so that its own truncation noise does not swamp the comparison.
    For parameters larger than ``max_entries`` a seeded random subset of
    entries is perturbed.

    The error per parameter is the norm-wise relative error
    ``|g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|)`` over the
    checked entries.
    """
    named = [(f"p{i}", p) if isinstance(p, Tensor) else p for i, p in enumerate(params)]
    rng = np.random.default_rng(seed)
    for _, p in named:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in named}

    originals = {name: p.data for name, p in named}
    report = GradCheckReport()
    try:
        with default_dtype(np.float64):
            for _, p in named:
                p.data = p.data.astype(np.float64)
            for name, p in named:
                flat = p.data.reshape(-1)
                n = flat.size
                idx = np.arange(n) if n <= max_entries else rng.choice(n, max_entries, replace=False)
                numeric = np.empty(len(idx))
                for j, i in enumerate(idx):
                    saved = flat[i]
                    flat[i] = saved + eps
                    up = float(loss_fn().data)
                    flat[i] = saved - eps
                    down = float(loss_fn().data)
                    flat[i] = saved
                    numeric[j] = (up - down) / (2 * eps)
                got = analytic[name].reshape(-1)[idx].astype(np.float64)
                scale = max(np.linalg.norm(got), np.linalg.norm(numeric))
                diff = np.linalg.norm(got - numeric)
                report.errors[name] = 0.0 if scale < 1e-12 else float(diff / scale)
                report.checked[name] = len(idx)
    finally:
        for name, p in named:
            p.data = originals[name]
            p.grad = None
    return report
