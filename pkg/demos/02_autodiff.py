"""
A small reverse-mode autodiff core
==================================

All learning runs on a tape-based engine over numpy arrays. Operations
record a backward closure on the active tape; ``backward`` replays them in
reverse. Gradients are verified against central differences in 64-bit
mode.
"""

import numpy as np

from polysnake import diffcore as dc
from polysnake.diffcore import DiffArray, GradTape, grad_check

rng = np.random.default_rng(0)

# %%
# Circular convolution treats the vertex axis as a ring: the output at
# vertex i sees neighbours i-1, i, i+1 with wrap-around.

x = DiffArray(np.array([[1.0], [2.0], [3.0], [4.0]]))
k = DiffArray(np.ones((1, 1, 3)))
print("ring [1,2,3,4] with a 3-tap box kernel:", dc.circular_conv1d(x, k).value.ravel())

# %%
# Bilinear sampling differentiates with respect to the features and to the
# sampling coordinates. The coordinate gradient is what lets a contour
# "feel" the feature map around it.

F = DiffArray(rng.normal(size=(6, 6, 2)), requires_grad=True)
pts = DiffArray(np.array([[1.3, 2.6], [4.2, 0.7]]), requires_grad=True)
with GradTape() as tape:
    loss = dc.sum(dc.bilinear_sample_points(F, pts))
tape.backward(loss)
print("d loss / d points:\n", pts.grad.round(4))

# %%
# ``grad_check`` compares the tape against central differences and returns
# the worst relative error.

err = grad_check(lambda p: dc.sum(dc.tanh(dc.bilinear_sample_points(DiffArray(F.value), p))),
                 np.array([[1.3, 2.6], [4.2, 0.7]]))
print(f"bilinear coordinate gradient, max relative error {err:.2e}")

kern = rng.normal(size=(3, 2, 5))
ring = DiffArray(rng.normal(size=(9, 2)))
err = grad_check(lambda w: dc.sum(dc.sigmoid(dc.circular_conv1d(ring, w))), kern)
print(f"circular conv kernel gradient, max relative error {err:.2e}")

# %%
# Inside ``no_grad`` nothing is recorded, which is how inference runs.

with dc.no_grad():
    y = dc.mul(F, F)
print("recorded under no_grad:", y.requires_grad)
