"""Iterative contour deformation with a shared recurrent update operator.

All functions operate on a batch of ``M`` contours at once: contours are
``[M, N_v, 2]`` in feature-map coordinates and ``batch_index[m]`` names the
image of ``F [B, h, w, D]`` that contour ``m`` samples from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .config import Config
from .diffcore import DiffArray
from .model.params import ModelParams


@dataclass
class ContourState:
    contour: DiffArray   # [M, N_v, 2], feature-map units
    hidden: DiffArray    # [M, N_v, D_v]
    k: int


def _circ(x, p, name):
    return dc.circular_conv1d(x, p[f"{name}.w"], p[f"{name}.b"])


def _lin(x, p, name):
    return dc.linear(x, p[f"{name}.w"], p[f"{name}.b"])


def normalized_coords(contour: DiffArray, extent: tuple[int, int]) -> DiffArray:
    """Divide x by the map width and y by the map height."""
    h, w = extent
    inv = np.array([1.0 / w, 1.0 / h], dtype=contour.value.dtype)
    return dc.mul(contour, dc.DiffArray(inv))


def circle_aggregate(f: DiffArray, params: ModelParams, prefix: str, n_layers: int) -> DiffArray:
    """Residual circle-conv stack; returns the concatenation of every layer's output.

    Each block is conv, ReLU, then a layer norm over the whole contour (all
    vertices and channels of one instance), so repeated residual additions
    cannot blow the activations up while per-vertex contrasts survive.
    """
    outs = []
    x = f
    for i in range(n_layers):
        y = dc.relu(_circ(x, params, f"{prefix}.circ{i}"))
        y = dc.layer_norm(y, params[f"{prefix}.norm{i}.w"], params[f"{prefix}.norm{i}.b"], n_axes=2)
        x = dc.add(y, x) if y.shape == x.shape else y
        outs.append(x)
    return dc.concat(outs, axis=-1)


def aggregate_contour_features(F: DiffArray, contour: DiffArray, params: ModelParams,
                               cfg: Config, batch_index=None) -> DiffArray:
    """Contour representation ``g``: aggregated vertex features plus normalised xy."""
    contour = dc.as_array(contour)
    squeeze = contour.ndim == 2
    if squeeze:
        contour = dc.reshape(contour, (1,) + contour.shape)
        batch_index = [0] if batch_index is None else batch_index
    if F.ndim == 3:
        F = dc.reshape(F, (1,) + F.shape)
    if batch_index is None:
        batch_index = np.zeros(contour.shape[0], dtype=np.intp)
    f = dc.bilinear_sample_points(F, contour, np.asarray(batch_index)[:, None])
    x = circle_aggregate(f, params, "icd", cfg.icd_layers)
    for j in range(len(cfg.icd_fusion)):
        x = dc.relu(_lin(x, params, f"icd.fuse{j}"))
    x = dc.layer_norm(x, params["icd.fuse_norm.w"], params["icd.fuse_norm.b"], n_axes=2)
    g = dc.concat([x, normalized_coords(contour, F.shape[1:3])], axis=-1)
    return dc.reshape(g, g.shape[1:]) if squeeze else g


def gru_update(g: DiffArray, h: DiffArray, params: ModelParams) -> DiffArray:
    """Convolutional GRU step over the vertex ring."""
    hg = dc.concat([h, g], axis=-1)
    z = dc.sigmoid(_circ(hg, params, "icd.gru_z"))
    r = dc.sigmoid(_circ(hg, params, "icd.gru_r"))
    cand = dc.tanh(_circ(dc.concat([dc.mul(r, h), g], axis=-1), params, "icd.gru_h"))
    return dc.add(dc.mul(dc.one_minus(z), h), dc.mul(z, cand))


def predict_offsets(h: DiffArray, params: ModelParams) -> DiffArray:
    """Two 1x1 convolutions with a ReLU between; ``[..., N_v, 2]`` displacement."""
    return _lin(dc.relu(_lin(h, params, "icd.off0")), params, "icd.off1")


def step(F: DiffArray, state: ContourState, params: ModelParams, cfg: Config,
         batch_index=None, g: DiffArray | None = None) -> tuple[ContourState, DiffArray]:
    """One deformation: ``C_k = C_{k-1} + offsets(GRU(g_{k-1}, h_{k-1}))``.

    Returns the new state and the representation ``g`` of the new contour
    (which the following step consumes).
    """
    if g is None:
        g = aggregate_contour_features(F, state.contour, params, cfg, batch_index)
    h = gru_update(g, state.hidden, params)
    c = dc.add(state.contour, predict_offsets(h, params))
    return ContourState(c, h, state.k + 1), g


def initial_state(F: DiffArray, c0: DiffArray, params: ModelParams, cfg: Config,
                  batch_index=None) -> tuple[ContourState, DiffArray]:
    g0 = aggregate_contour_features(F, c0, params, cfg, batch_index)
    return ContourState(dc.as_array(c0), dc.tanh(g0), 0), g0


def deform(F: DiffArray, c0, K: int, params: ModelParams, cfg: Config,
           batch_index=None) -> tuple[list[DiffArray], ContourState]:
    """Run ``K`` shared-weight iterations from ``c0``; returns ``[C_1..C_K]`` and the last state."""
    c0 = dc.as_array(c0)
    state, g = initial_state(F, c0, params, cfg, batch_index)
    contours = []
    for k in range(K):
        if k > 0:
            g = aggregate_contour_features(F, state.contour, params, cfg, batch_index)
        state, _ = step(F, state, params, cfg, batch_index, g=g)
        contours.append(state.contour)
    return contours, state
