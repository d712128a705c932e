"""Check the autodiff engine against finite differences on one transformer block.

    python demos/01_gradients.py
"""

import numpy as np

from stower import tensor as T
from stower.gradcheck import finite_diff_check
from stower.nn import TransformerBlock, attention_bias

rng = np.random.default_rng(0)
block = TransformerBlock(d_model=8, n_heads=2, d_ff=16, rng=rng)
x = T.parameter(rng.normal(size=(2, 5, 8)))
pad = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]])
target = T.Tensor(rng.normal(size=(2, 5, 8)))


def loss():
    out = block(x, attention_bias(pad, 5))
    return T.mean((out - target) ** 2)


report = finite_diff_check(loss, [("x", x)] + list(block.named_parameters()))
print(report)
print("analytic gradients agree" if report.max_error < 1e-3 else "MISMATCH")
