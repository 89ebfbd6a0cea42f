"""Encoder-decoder backbone and the three contour-initialisation heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import diffcore as dc
from ..config import Config
from ..diffcore import DiffArray
from .params import ModelParams


@dataclass
class BackboneOutput:
    F: DiffArray    # [B, H/R, W/R, D]
    F0: DiffArray   # [B, H, W, d0]
    F1: DiffArray   # [B, H/2, W/2, d1]
    Y: DiffArray    # [B, H/R, W/R, C] in (0, 1)
    S: DiffArray    # [B, H/R, W/R, 2 N_v]
    B: DiffArray    # [B, H/R, W/R] in (0, 1)


def _conv(x, p: ModelParams, name: str, stride: int = 1, act: bool = True):
    w = p[f"{name}.w"]
    pad = w.shape[0] // 2
    y = dc.conv2d(x, w, p[f"{name}.b"], stride=stride, padding=pad)
    return dc.relu(y) if act else y


def _lin(x, p: ModelParams, name: str):
    return dc.linear(x, p[f"{name}.w"], p[f"{name}.b"])


def _up_to(x: DiffArray, ref: DiffArray) -> DiffArray:
    return dc.resize_bilinear(x, ref.shape[1], ref.shape[2])


def forward(image, params: ModelParams, cfg: Config) -> BackboneOutput:
    """Run the backbone on ``[H, W, 3]`` or ``[B, H, W, 3]`` images in [0, 1]."""
    x = dc.as_array(image)
    if x.ndim == 3:
        x = dc.DiffArray(x.value[None])
    if x.ndim != 4 or x.shape[-1] != 3:
        raise ValueError(f"image must be [B, H, W, 3], got {x.shape}")
    H, W = x.shape[1:3]
    if H % 8 or W % 8:
        raise ValueError(f"image height and width must be divisible by 8, got {H}x{W}")
    if cfg.stride != 4:
        raise ValueError("the backbone produces stride-4 features only")

    p = params
    f0 = _conv(x, p, "backbone.stem")                    # 1
    e1 = _conv(f0, p, "backbone.enc1", stride=2)         # 1/2
    e2 = _conv(e1, p, "backbone.enc2", stride=2)         # 1/4
    e3 = _conv(e2, p, "backbone.enc3", stride=2)         # 1/8
    e4 = _conv(e3, p, "backbone.enc4", stride=2)         # 1/16
    d3 = _conv(dc.concat([_up_to(e4, e3), e3]), p, "backbone.dec3")
    F = _conv(dc.concat([_up_to(d3, e2), e2]), p, "backbone.dec2")
    f1 = _lin(e1, p, "backbone.f1")

    Y = dc.sigmoid(_lin(_conv(F, p, "head.y0"), p, "head.y1"))
    S = _lin(_conv(F, p, "head.s0"), p, "head.s1")
    Bm = dc.sigmoid(_lin(_conv(F, p, "head.b0"), p, "head.b1"))
    Bm = dc.reshape(Bm, Bm.shape[:3])
    return BackboneOutput(F=F, F0=f0, F1=f1, Y=Y, S=S, B=Bm)
