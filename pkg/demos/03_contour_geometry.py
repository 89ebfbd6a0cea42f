"""
Contour geometry
================

Rasterisation, IoU and the shape representation used by the shape loss.
"""

import numpy as np

from polysnake import geometry, losses
from polysnake import diffcore as dc

# %%
# A square resampled to 8 equally spaced vertices keeps its corners and
# picks up the edge midpoints.

square = np.array([[10, 10], [30, 10], [30, 30], [10, 30]], dtype=float)
print(geometry.resample_uniform(square, 8))

# %%
# The scanline rasteriser samples pixel centres with the even-odd rule, so a
# 20x20 axis-aligned square covers exactly 400 pixels.

mask = geometry.rasterize(square, 40, 40)
print("pixels:", mask.sum(), " shoelace area:", abs(geometry.signed_area(square)))

shifted = geometry.rasterize(square + [5, 0], 40, 40)
print("IoU after a 5 px shift:", round(geometry.mask_iou(mask, shifted), 4), "(expected 15/25 = 0.6)")

# %%
# The shape representation is the ring of offsets between consecutive
# vertices. It sums to zero and ignores where the contour sits, so the
# shape loss of a translated copy of the ground truth is zero.

t = np.linspace(0, 2 * np.pi, 16, endpoint=False)
gt = np.stack([20 + 8 * np.cos(t), 20 + 5 * np.sin(t)], axis=1)
print("sum of offsets:", geometry.shape_rep(gt).sum(axis=0).round(12))
with dc.precision(np.float64):
    print("shape loss, translated copy:", float(losses.shape_loss(gt + [3.0, -2.0], gt).value))
    print("regression loss, translated copy:", float(losses.contour_regression_loss(gt + [3.0, -2.0], gt).value))
    bumpy = gt + np.random.default_rng(0).normal(scale=0.5, size=gt.shape)
    print("shape loss, jittered copy:", round(float(losses.shape_loss(bumpy, gt).value), 3))
