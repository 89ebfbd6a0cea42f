"""Multi-scale contour refinement at full image resolution."""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .config import Config
from .diffcore import DiffArray
from .icd import circle_aggregate, normalized_coords
from .model.params import ModelParams


def _lin(x, p, name):
    return dc.linear(x, p[f"{name}.w"], p[f"{name}.b"])


def fuse_pyramid(F: DiffArray, F1: DiffArray, F0: DiffArray, params: ModelParams) -> DiffArray:
    """Top-down fusion of the 1/4, 1/2 and full-scale maps into ``F0' [B, H, W, d2]``."""
    for name, a, b in (("F1", F1, F), ("F0", F0, F1)):
        if a.shape[1] != 2 * b.shape[1] or a.shape[2] != 2 * b.shape[2]:
            raise ValueError(f"{name} must be twice the resolution of the next coarser map, "
                             f"got {a.shape[1:3]} vs {b.shape[1:3]}")
    p2 = _lin(F, params, "mcr.top")
    p1 = dc.add(dc.upsample2x(p2), _lin(F1, params, "mcr.lat1"))
    p0 = dc.add(dc.upsample2x(p1), _lin(F0, params, "mcr.lat0"))
    w = params["mcr.smooth.w"]
    return dc.conv2d(p0, w, params["mcr.smooth.b"], stride=1, padding=w.shape[0] // 2)


def refine(F0p: DiffArray, contour, params: ModelParams, cfg: Config, batch_index=None) -> DiffArray:
    """Single non-recurrent deformation of ``C_K`` (image pixels) on ``F0'``."""
    contour = dc.as_array(contour)
    squeeze = contour.ndim == 2
    if squeeze:
        contour = dc.reshape(contour, (1,) + contour.shape)
    if F0p.ndim == 3:
        F0p = dc.reshape(F0p, (1,) + F0p.shape)
    if batch_index is None:
        batch_index = np.zeros(contour.shape[0], dtype=np.intp)
    f = dc.bilinear_sample_points(F0p, contour, np.asarray(batch_index))
    x = dc.relu(_lin(f, params, "mcr.inp"))
    x = circle_aggregate(x, params, "mcr", cfg.mcr_layers)
    x = dc.relu(_lin(x, params, "mcr.fuse"))
    x = dc.layer_norm(x, params["mcr.fuse_norm.w"], params["mcr.fuse_norm.b"], n_axes=2)
    x = dc.concat([x, normalized_coords(contour, F0p.shape[1:3])], axis=-1)
    out = dc.add(contour, _lin(x, params, "mcr.fc"))
    return dc.reshape(out, out.shape[1:]) if squeeze else out
