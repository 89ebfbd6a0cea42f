"""Training objectives.

Contour terms sum smooth-L1 over vertices and coordinates for one instance and
average over the instances of a batch. Contours are passed in whatever unit
the caller trains in (the training loop uses feature-map cells).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import DiffArray

CLAMP_EPS = 1e-4


@dataclass
class LossReport:
    total: DiffArray
    terms: dict[str, float] = field(default_factory=dict)
    weights: dict[str, float] = field(default_factory=dict)


def smooth_l1(pred, target) -> DiffArray:
    """Sum of elementwise smooth-L1 (beta = 1) between ``pred`` and ``target``."""
    pred, target = dc.as_array(pred), dc.as_array(target)
    if pred.shape != target.shape:
        raise ValueError(f"smooth_l1 shape mismatch: {pred.shape} vs {target.shape}")
    d = pred.value - target.value
    ad = np.abs(d)
    small = ad < 1.0
    val = np.where(small, 0.5 * d * d, ad - 0.5).sum()
    dd = np.where(small, d, np.sign(d))
    return dc.make_op(np.asarray(val), (pred, target), lambda g: (g * dd, -g * dd))


def _n_instances(c: DiffArray) -> int:
    return 1 if c.ndim == 2 else int(np.prod(c.shape[:-2]))


def contour_regression_loss(C, C_gt) -> DiffArray:
    """Smooth-L1 between matched vertices; per-instance sum, mean over instances."""
    C, C_gt = dc.as_array(C), dc.as_array(C_gt)
    if C.shape != C_gt.shape:
        raise ValueError(f"contour length mismatch: {C.shape} vs {C_gt.shape}")
    return dc.scale(smooth_l1(C, C_gt), 1.0 / _n_instances(C))


def shape_representation(C: DiffArray) -> DiffArray:
    """Differentiable cyclic first differences along the vertex axis."""
    return dc.sub(dc.roll(C, -1, axis=-2), C)


def shape_loss(C, C_gt) -> DiffArray:
    C, C_gt = dc.as_array(C), dc.as_array(C_gt)
    if C.shape != C_gt.shape:
        raise ValueError(f"contour length mismatch: {C.shape} vs {C_gt.shape}")
    return dc.scale(smooth_l1(shape_representation(C), shape_representation(C_gt)),
                    1.0 / _n_instances(C))


def icd_loss(contours, C_gt, lam: float = 0.8, alpha: float = 1.0,
             terms: dict | None = None) -> DiffArray:
    """``sum_k lam**(K-k) * (L_R(k) + alpha * L_P(k))`` over ``k = 1..K``."""
    K = len(contours)
    if K < 1:
        raise ValueError("icd_loss needs at least one iteration")
    total = None
    for k, C in enumerate(contours, start=1):
        lr = contour_regression_loss(C, C_gt)
        lp = shape_loss(C, C_gt)
        if terms is not None:
            terms[f"L_R/{k}"] = float(lr.value)
            terms[f"L_P/{k}"] = float(lp.value)
        term = dc.scale(dc.add(lr, dc.scale(lp, alpha)), lam ** (K - k))
        total = term if total is None else dc.add(total, term)
    return total


def center_loss(Y, Y_gt) -> DiffArray:
    """Penalty-reduced focal loss (exponents 2 and 4), normalised by #centres."""
    Y = dc.as_array(Y)
    gt = np.asarray(Y_gt.value if isinstance(Y_gt, DiffArray) else Y_gt, dtype=Y.value.dtype)
    if Y.shape != gt.shape:
        raise ValueError(f"heatmap shape mismatch: {Y.shape} vs {gt.shape}")
    y = np.clip(Y.value, CLAMP_EPS, 1 - CLAMP_EPS)
    live = (Y.value >= CLAMP_EPS) & (Y.value <= 1 - CLAMP_EPS)
    pos = gt == 1
    npos = max(int(pos.sum()), 1)
    wneg = (1 - gt) ** 4
    ly, l1y = np.log(y), np.log(1 - y)
    pos_l = -((1 - y) ** 2) * ly
    neg_l = -wneg * y * y * l1y
    val = np.where(pos, pos_l, neg_l).sum() / npos
    dpos = 2 * (1 - y) * ly - (1 - y) ** 2 / y
    dneg = -wneg * (2 * y * l1y - y * y / (1 - y))
    d = np.where(pos, dpos, dneg) * live / npos
    return dc.make_op(np.asarray(val), (Y,), lambda g: (g * d,))


def boundary_loss(B, B_gt) -> DiffArray:
    """Binary cross-entropy averaged over all pixels of the boundary map."""
    B = dc.as_array(B)
    t = np.asarray(B_gt.value if isinstance(B_gt, DiffArray) else B_gt, dtype=B.value.dtype)
    if B.shape != t.shape:
        raise ValueError(f"boundary map shape mismatch: {B.shape} vs {t.shape}")
    y = np.clip(B.value, CLAMP_EPS, 1 - CLAMP_EPS)
    live = (B.value >= CLAMP_EPS) & (B.value <= 1 - CLAMP_EPS)
    n = t.size
    val = -(t * np.log(y) + (1 - t) * np.log(1 - y)).sum() / n
    d = -(t / y - (1 - t) / (1 - y)) * live / n
    return dc.make_op(np.asarray(val), (B,), lambda g: (g * d,))


def gather_center_offsets(S: DiffArray, batch_index, cx, cy, n_vertices: int) -> DiffArray:
    """Read the ``2 N_v`` offsets at each centre cell; ``[M, N_v, 2]``."""
    rows = dc.getitem(S, (np.asarray(batch_index), np.asarray(cy), np.asarray(cx)))
    return dc.reshape(rows, (len(cx), n_vertices, 2))


def offset_loss(S: DiffArray, batch_index, cx, cy, C_gt) -> DiffArray:
    """Smooth-L1 between the contour decoded at each GT centre and the GT contour.

    ``C_gt`` is ``[M, N_v, 2]`` in feature-map cells; the decoded contour is
    ``(cx, cy) + S[b, cy, cx]`` in the same unit.
    """
    C_gt = dc.as_array(C_gt)
    M = len(cx)
    if M == 0:
        return dc.make_op(np.asarray(0.0, dtype=S.value.dtype), (S,), lambda g: (None,))
    off = gather_center_offsets(S, batch_index, cx, cy, C_gt.shape[-2])
    centers = np.stack([np.asarray(cx), np.asarray(cy)], axis=-1)[:, None, :].astype(S.value.dtype)
    return contour_regression_loss(dc.add(off, dc.DiffArray(centers)), C_gt)


def total_loss(stage: str, terms: dict[str, DiffArray]) -> DiffArray:
    """stage1: ``L_Y + L_S + L_B + L_ICD``; stage2: ``L_MCR`` alone."""
    if stage == "stage1":
        names = ("L_Y", "L_S", "L_B", "L_ICD")
    elif stage == "stage2":
        names = ("L_MCR",)
    else:
        raise ValueError(f"unknown stage {stage!r}")
    total = terms[names[0]]
    for n in names[1:]:
        total = dc.add(total, terms[n])
    return total
