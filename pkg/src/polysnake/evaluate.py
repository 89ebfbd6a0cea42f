"""Mask-IoU evaluation: VOC-style AP, AP_vol, and per-iteration IoU traces."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry
from .annotations import PolygonRecord
from .datagen import center_cell
from .icg import Detection

log = logging.getLogger(__name__)

THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(1, 10))


@dataclass
class _ClassTable:
    scores: np.ndarray          # [n_det], score-descending
    best_iou: np.ndarray        # [n_det] IoU with the best same-image GT (0 if none)
    best_gt: np.ndarray         # [n_det] global GT id of that GT (-1 if none)
    npos: int


def _mask_cache(records: list[PolygonRecord], height: int, width: int) -> list[np.ndarray]:
    return [geometry.rasterize(r.polygon, height, width) for r in records]


def _det_key(r: PolygonRecord):
    # sort key independent of input order: score first, then content
    return (-float(r.score if r.score is not None else 0.0), r.image, r.class_id,
            np.asarray(r.polygon, dtype=np.float64).tobytes())


def _tables(dets: list[PolygonRecord], gts: list[PolygonRecord], height: int, width: int
            ) -> dict[int, _ClassTable]:
    gts = sorted(gts, key=lambda r: (r.image, r.class_id, np.asarray(r.polygon, np.float64).tobytes()))
    dets = sorted(dets, key=_det_key)
    gmasks = _mask_cache(gts, height, width)
    dmasks = _mask_cache(dets, height, width)
    by_key: dict[tuple[str, int], list[int]] = {}
    for i, g in enumerate(gts):
        by_key.setdefault((g.image, g.class_id), []).append(i)
    classes = sorted({g.class_id for g in gts} | {d.class_id for d in dets})
    out = {}
    for c in classes:
        idx = [i for i, d in enumerate(dets) if d.class_id == c]
        best_iou = np.zeros(len(idx))
        best_gt = np.full(len(idx), -1)
        for j, i in enumerate(idx):
            cands = by_key.get((dets[i].image, c), [])
            for g in cands:
                iou = geometry.mask_iou(dmasks[i], gmasks[g])
                if iou > best_iou[j]:
                    best_iou[j], best_gt[j] = iou, g
        scores = np.array([dets[i].score or 0.0 for i in idx], dtype=np.float64)
        npos = sum(1 for g in gts if g.class_id == c)
        out[c] = _ClassTable(scores, best_iou, best_gt, npos)
    return out


def _voc_ap(tp: np.ndarray, npos: int) -> float:
    """All-points interpolated area under the precision-recall curve, in [0, 1]."""
    if npos == 0 or len(tp) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1 - tp)
    rec = ctp / npos
    prec = ctp / np.maximum(ctp + cfp, np.finfo(np.float64).eps)
    mrec = np.concatenate([[0.0], rec, [1.0]])
    mpre = np.concatenate([[0.0], prec, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    i = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[i + 1] - mrec[i]) * mpre[i + 1]))


def _class_ap(t: _ClassTable, thr: float) -> float:
    # greedy in score order; a detection whose best GT is already taken is a false positive
    taken: set[int] = set()
    tp = np.zeros(len(t.scores))
    for j in range(len(t.scores)):
        g = int(t.best_gt[j])
        if g >= 0 and t.best_iou[j] >= thr and g not in taken:
            taken.add(g)
            tp[j] = 1
    return _voc_ap(tp, t.npos)


def _mean_ap(tables: dict[int, _ClassTable], thr: float) -> float:
    aps = [_class_ap(t, thr) for t in tables.values() if t.npos > 0]
    if not aps:
        if any(len(t.scores) for t in tables.values()):
            log.warning("no ground truth instances; AP is 0 by convention")
        return 0.0
    for c, t in tables.items():
        if t.npos == 0 and len(t.scores):
            log.warning("class %d has detections but no ground truth; left out of the mean", c)
    return 100.0 * float(np.mean(aps))


def average_precision(dets: list[PolygonRecord], gts: list[PolygonRecord], iou_threshold: float,
                      height: int, width: int) -> float:
    """Class-averaged VOC AP (x100) at one mask-IoU threshold."""
    return _mean_ap(_tables(dets, gts, height, width), iou_threshold)


def ap_vol(dets: list[PolygonRecord], gts: list[PolygonRecord], height: int, width: int) -> float:
    t = _tables(dets, gts, height, width)
    return float(np.mean([_mean_ap(t, thr) for thr in THRESHOLDS]))


@dataclass
class IterationTrace:
    """Mean IoU of ``C_0 .. C_K`` (and ``C_M``) over centre-matched instances."""
    labels: list[str]
    ious: np.ndarray                 # [n_matched, len(labels)]
    classes: np.ndarray              # [n_matched]
    chamfer: np.ndarray              # [n_matched] final contour vs GT polygon
    unmatched_gt: int = 0
    unmatched_det: int = 0

    @property
    def mean_iou(self) -> np.ndarray:
        if len(self.ious) == 0:
            return np.zeros(len(self.labels))
        return self.ious.mean(axis=0)

    def mean_iou_for(self, class_ids) -> np.ndarray:
        sel = np.isin(self.classes, list(class_ids))
        return self.ious[sel].mean(axis=0) if sel.any() else np.full(len(self.labels), np.nan)

    def to_dict(self) -> dict:
        return {"labels": self.labels, "mean_iou": [float(v) for v in self.mean_iou],
                "matched": int(len(self.ious)), "unmatched_gt": self.unmatched_gt,
                "unmatched_det": self.unmatched_det,
                "mean_chamfer": float(self.chamfer.mean()) if len(self.chamfer) else None}


def match_by_center(dets: list[Detection], gt_cells: np.ndarray,
                    max_dist: float = 2.0) -> list[tuple[int, int]]:
    """Greedy nearest-centre assignment (class-agnostic); returns (gt, det) pairs.

    Distances are in feature cells; pairs farther than ``max_dist`` stay unmatched.
    """
    if not dets or len(gt_cells) == 0:
        return []
    dc_ = np.array([d.center for d in dets], dtype=np.float64)
    gc = np.asarray(gt_cells, dtype=np.float64)
    d = np.linalg.norm(gc[:, None, :] - dc_[None, :, :], axis=-1)
    pairs = sorted((d[i, j], i, j) for i in range(len(gc)) for j in range(len(dets)) if d[i, j] <= max_dist)
    used_g, used_d, out = set(), set(), []
    for _, i, j in pairs:
        if i in used_g or j in used_d:
            continue
        used_g.add(i)
        used_d.add(j)
        out.append((i, j))
    return sorted(out)


def per_iteration_trace(detections: list[list[Detection]], samples, stride: int,
                        iterations: int, refined: bool = True) -> IterationTrace:
    """IoU of every traced contour against its centre-matched GT mask."""
    rows, classes, chamfer = [], [], []
    labels = [f"C{k}" for k in range(iterations + 1)] + (["CM"] if refined else [])
    unmatched_gt = unmatched_det = 0
    for dets, s in zip(detections, samples):
        H, W = s.image.shape[:2]
        cells = np.array([center_cell(inst.center, stride, H // stride, W // stride)
                          for inst in s.instances]).reshape(-1, 2)
        pairs = match_by_center(dets, cells)
        unmatched_gt += len(s.instances) - len(pairs)
        unmatched_det += len(dets) - len(pairs)
        for gi, di in pairs:
            inst, det = s.instances[gi], dets[di]
            if len(det.trace) != len(labels):
                raise ValueError(f"detection trace has {len(det.trace)} contours, expected {len(labels)}")
            rows.append([geometry.mask_iou(geometry.rasterize(c, H, W), inst.mask) for c in det.trace])
            classes.append(inst.class_id)
            chamfer.append(geometry.chamfer_distance(det.trace[-1], inst.polygon))
    return IterationTrace(labels, np.asarray(rows, dtype=np.float64).reshape(-1, len(labels)),
                          np.asarray(classes, dtype=np.int64), np.asarray(chamfer),
                          unmatched_gt, unmatched_det)


@dataclass
class EvalReport:
    ap: dict[float, float]
    ap_vol: float
    ap50: float
    ap70: float
    per_class: dict[int, dict[str, float]] = field(default_factory=dict)
    trace: IterationTrace | None = None

    def to_dict(self) -> dict:
        d = {"ap": {f"{k:.1f}": v for k, v in self.ap.items()}, "ap_vol": self.ap_vol,
             "ap50": self.ap50, "ap70": self.ap70,
             "per_class": {str(k): v for k, v in self.per_class.items()}}
        if self.trace is not None:
            d["per_iteration"] = self.trace.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        lines = ["metric      value"]
        for thr, v in self.ap.items():
            lines.append(f"AP@{thr:.1f}    {v:7.2f}")
        lines += [f"AP_vol      {self.ap_vol:7.2f}", f"AP50        {self.ap50:7.2f}",
                  f"AP70        {self.ap70:7.2f}"]
        for c, v in sorted(self.per_class.items()):
            lines.append(f"class {c}     AP_vol {v['ap_vol']:7.2f}  AP50 {v['ap50']:7.2f}  AP70 {v['ap70']:7.2f}")
        if self.trace is not None:
            lines.append("iteration   mean IoU")
            for lab, v in zip(self.trace.labels, self.trace.mean_iou):
                lines.append(f"{lab:<11} {v:.4f}")
            lines.append(f"(matched {len(self.trace.ious)}, unmatched gt {self.trace.unmatched_gt}, "
                         f"unmatched det {self.trace.unmatched_det})")
        return "\n".join(lines)


def evaluate_records(dets: list[PolygonRecord], gts: list[PolygonRecord], height: int, width: int
                     ) -> EvalReport:
    tables = _tables(dets, gts, height, width)
    ap = {thr: _mean_ap(tables, thr) for thr in THRESHOLDS}
    per_class = {}
    for c, t in tables.items():
        if t.npos == 0:
            continue
        aps = [100.0 * _class_ap(t, thr) for thr in THRESHOLDS]
        per_class[c] = {"ap_vol": float(np.mean(aps)), "ap50": 100.0 * _class_ap(t, 0.5),
                        "ap70": 100.0 * _class_ap(t, 0.7)}
    return EvalReport(ap, float(np.mean(list(ap.values()))), _mean_ap(tables, 0.5),
                      _mean_ap(tables, 0.7), per_class)


def detections_to_records(detections: list[list[Detection]], names: list[str]) -> list[PolygonRecord]:
    return [PolygonRecord(name, d.class_id, d.contour, d.score)
            for dets, name in zip(detections, names) for d in dets]


def samples_to_records(samples) -> list[PolygonRecord]:
    return [PolygonRecord(s.name, inst.class_id, inst.polygon) for s in samples for inst in s.instances]


def evaluate_model(params, cfg, samples, iterations: int | None = None, refine: bool = True,
                   per_iteration: bool = True, batch: int = 16) -> EvalReport:
    """Run inference on ``samples`` and score it against their annotations."""
    from .pipeline import predict

    if not samples:
        raise ValueError("cannot evaluate an empty split")
    dets: list[list[Detection]] = []
    for i in range(0, len(samples), batch):
        dets += predict(params, cfg, np.stack([s.image for s in samples[i:i + batch]]),
                        iterations=iterations, refine=refine)
    H, W = samples[0].image.shape[:2]
    report = evaluate_records(detections_to_records(dets, [s.name for s in samples]),
                              samples_to_records(samples), H, W)
    if per_iteration:
        report.trace = per_iteration_trace(dets, samples, cfg.stride,
                                           cfg.iterations if iterations is None else iterations, refine)
    return report


def plot_trace(trace: IterationTrace, path: str | Path, class_groups: dict[str, list[int]] | None = None) -> None:
    """Line plot of mean IoU against iteration index, saved as SVG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.2))
    x = np.arange(len(trace.labels))
    ax.plot(x, trace.mean_iou, marker="o", label="all")
    for name, ids in (class_groups or {}).items():
        ax.plot(x, trace.mean_iou_for(ids), marker=".", linestyle="--", label=name)
    ax.set_xticks(x, trace.labels)
    ax.set_xlabel("contour")
    ax.set_ylabel("mean mask IoU")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
