"""
The tape in three steps
=======================

Record a small convolutional computation, run the backward pass, and compare
the result with central finite differences.
"""

import numpy as np

from msdnet.autodiff import Tape, Tensor, backward, gradient_check, ops

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(2, 6, 6)), requires_grad=True)
w = Tensor(rng.normal(size=(3, 2, 3, 3)) * 0.3, requires_grad=True)

# Operations executed inside the block are logged in order, so the backward
# pass can simply walk the log in reverse.
with Tape() as tape:
    h = ops.relu(ops.conv2d(x, w))
    pooled = ops.pool2d(h, "max2x2")
    loss = ops.mean(ops.square(pooled))
backward(tape, loss)
print(f"{len(tape)} recorded ops, loss {loss.item():.4f}")
print("dL/dw has shape", w.grad.shape)

# The same function, checked numerically. Values near 1e-8 mean the
# hand-written backward rules agree with finite differences.
def f(x_, w_):
    return ops.mean(ops.square(ops.pool2d(ops.relu(ops.conv2d(x_, w_)), "max2x2")))

print("max relative error:", gradient_check(f, [x, w]))

# Outside a tape nothing is recorded; that is how inference runs.
y = ops.conv2d(x, w)
print("node recorded without tape:", y.node is not None)
