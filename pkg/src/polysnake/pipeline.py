"""End-to-end composition: batch targets, stage losses, and inference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from . import icd, icg, losses, mcr
from .config import Config
from .datagen import GroundTruthPack, InstanceSample, build_ground_truth
from .losses import LossReport
from .model import ModelParams, forward


@dataclass
class Batch:
    images: np.ndarray       # [B, H, W, 3]
    heatmap: np.ndarray      # [B, h, w, C]
    boundary: np.ndarray     # [B, h, w]
    batch_index: np.ndarray  # [M]
    cx: np.ndarray           # [M]
    cy: np.ndarray           # [M]
    contours: np.ndarray     # [M, N_v, 2] image pixels


def make_batch(samples: list[InstanceSample], packs: list[GroundTruthPack]) -> Batch:
    bi, cx, cy, cs = [], [], [], []
    for b, pk in enumerate(packs):
        bi += [b] * len(pk.classes)
        cx += list(pk.centers[:, 0])
        cy += list(pk.centers[:, 1])
        cs.append(pk.contours)
    nv = packs[0].contours.shape[1] if packs else 0
    return Batch(
        images=np.stack([s.image for s in samples]),
        heatmap=np.stack([p.heatmap for p in packs]),
        boundary=np.stack([p.boundary for p in packs]),
        batch_index=np.asarray(bi, dtype=np.intp),
        cx=np.asarray(cx, dtype=np.intp),
        cy=np.asarray(cy, dtype=np.intp),
        contours=np.concatenate(cs).reshape(-1, nv, 2) if cs else np.zeros((0, nv, 2)),
    )


def ground_truth(samples: list[InstanceSample], cfg: Config) -> list[GroundTruthPack]:
    return [build_ground_truth(s, cfg.n_vertices, cfg.stride, cfg.num_classes) for s in samples]


def initial_contours(S, batch: Batch, n_vertices: int) -> np.ndarray:
    """Contours decoded at the GT centre cells, feature-map units, no gradient."""
    off = S.value[batch.batch_index, batch.cy, batch.cx].reshape(-1, n_vertices, 2)
    return off + np.stack([batch.cx, batch.cy], axis=-1)[:, None, :]


def stage1_loss(params: ModelParams, cfg: Config, batch: Batch) -> tuple[LossReport, list]:
    """ICG + ICD objective; must run inside a GradTape to be trainable."""
    R = cfg.stride
    out = forward(batch.images, params, cfg)
    gt = dc.DiffArray(batch.contours / R)
    t = {
        "L_Y": losses.center_loss(out.Y, batch.heatmap),
        "L_B": losses.boundary_loss(out.B, batch.boundary),
        "L_S": losses.offset_loss(out.S, batch.batch_index, batch.cx, batch.cy, gt),
    }
    report_terms: dict[str, float] = {}
    contours = []
    if len(batch.cx):
        if cfg.detach_initial:
            c0 = dc.DiffArray(initial_contours(out.S, batch, cfg.n_vertices))
        else:
            off = losses.gather_center_offsets(out.S, batch.batch_index, batch.cx, batch.cy, cfg.n_vertices)
            c0 = dc.add(off, dc.DiffArray(np.stack([batch.cx, batch.cy], axis=-1)[:, None, :]))
        contours, _ = icd.deform(out.F, c0, cfg.iterations, params, cfg, batch.batch_index)
        t["L_ICD"] = losses.icd_loss(contours, gt, cfg.lam, cfg.alpha, report_terms)
    else:
        t["L_ICD"] = dc.DiffArray(0.0)
    total = losses.total_loss("stage1", t)
    report_terms.update({k: float(v.value) for k, v in t.items()})
    report_terms["total"] = float(total.value)
    return LossReport(total, report_terms, {"lam": cfg.lam, "alpha": cfg.alpha}), contours


def stage2_loss(params: ModelParams, cfg: Config, batch: Batch) -> LossReport:
    """MCR objective on top of frozen ICG/ICD outputs."""
    R = cfg.stride
    with dc.no_grad():
        out = forward(batch.images, params, cfg)
        c0 = dc.DiffArray(initial_contours(out.S, batch, cfg.n_vertices))
        contours, _ = icd.deform(out.F, c0, cfg.iterations, params, cfg, batch.batch_index)
        cK = contours[-1].value if contours else c0.value
        F, F1, F0 = out.F.detach(), out.F1.detach(), out.F0.detach()
    f0p = mcr.fuse_pyramid(F, F1, F0, params)
    cM = mcr.refine(f0p, dc.DiffArray(cK * R), params, cfg, batch.batch_index)
    gt = dc.DiffArray(batch.contours / R)
    l_mcr = losses.contour_regression_loss(dc.scale(cM, 1.0 / R), gt)
    total = losses.total_loss("stage2", {"L_MCR": l_mcr})
    return LossReport(total, {"L_MCR": float(l_mcr.value), "total": float(total.value)}, {})


def predict(params: ModelParams, cfg: Config, images, iterations: int | None = None,
            refine: bool = True, chunk: int = 64) -> list[list[icg.Detection]]:
    """Detect and deform every instance; each Detection carries its contour trace."""
    K = cfg.iterations if iterations is None else iterations
    R = cfg.stride
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[None]
    with dc.no_grad():
        out = forward(images, params, cfg)
        dets = []
        for b in range(images.shape[0]):
            dets += icg.detect(out.Y.value[b], out.S.value[b], cfg.peak_threshold, cfg.top_k, R, b)
        f0p = mcr.fuse_pyramid(out.F, out.F1, out.F0, params) if refine and dets else None
        for s in range(0, len(dets), chunk):
            part = dets[s:s + chunk]
            bidx = np.array([d.image_index for d in part], dtype=np.intp)
            c0 = dc.DiffArray(np.stack([d.contour for d in part]) / R)
            contours, _ = icd.deform(out.F, c0, K, params, cfg, bidx)
            for c in contours:
                for d, v in zip(part, c.value):
                    d.trace.append(v.astype(np.float64) * R)
            if f0p is not None:
                cK = contours[-1].value * R if contours else c0.value * R
                cM = mcr.refine(f0p, dc.DiffArray(cK), params, cfg, bidx).value
                for d, v in zip(part, cM):
                    d.trace.append(v.astype(np.float64))
            for d in part:
                d.contour = d.trace[-1]
    per_image: list[list[icg.Detection]] = [[] for _ in range(images.shape[0])]
    for d in dets:
        per_image[d.image_index].append(d)
    return per_image
