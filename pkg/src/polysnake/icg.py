"""Initial contour generation: heatmap peaks and offset-map decoding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import diffcore as dc


@dataclass
class Detection:
    """One detected instance.

    ``center`` is ``(x, y)`` in feature-map cells, ``contour`` is ``[N_v, 2]``
    in image pixels. ``trace`` holds ``C_0 ... C_K`` (and ``C_M`` when refined),
    ``contour`` always the latest one.
    """
    class_id: int
    score: float
    center: tuple[int, int]
    contour: np.ndarray
    image_index: int = 0
    trace: list[np.ndarray] = field(default_factory=list)


_EIGHT = np.ones((3, 3), dtype=bool)


def extract_peaks(Y, threshold: float = 0.3, top_k: int = 32) -> list[tuple[int, float, tuple[int, int]]]:
    """Cells equal to their 3x3 max and at least ``threshold``.

    ``Y`` is ``[h, w, C]`` (or ``[h, w]`` for one class). A plateau of equal
    maxima yields only its smallest ``(row, col)`` cell. Results are
    ``(class, score, (x, y))`` sorted by descending score, then class, row, col.
    """
    y = np.asarray(Y.value if isinstance(Y, dc.DiffArray) else Y, dtype=np.float64)
    if y.ndim == 2:
        y = y[..., None]
    with dc.no_grad(), dc.precision(np.float64):
        pooled = dc.max_pool2d(dc.DiffArray(y[None]), 3, 1, 1).value[0]
    cand = (y == pooled) & (y >= threshold)
    found = []
    for c in range(y.shape[2]):
        labels, n = ndimage.label(cand[:, :, c], structure=_EIGHT)
        if n == 0:
            continue
        rows, cols = np.nonzero(labels)
        lab = labels[rows, cols]
        # raster order: first occurrence of each label is its smallest (row, col)
        _, first = np.unique(lab, return_index=True)
        for i in first:
            r, q = int(rows[i]), int(cols[i])
            found.append((c, float(y[r, q, c]), (q, r)))
    found.sort(key=lambda t: (-t[1], t[0], t[2][1], t[2][0]))
    return found[:top_k]


def decode_initial_contour(S, center, stride: int = 4) -> np.ndarray:
    """Vertex k is ``(center + S[cy, cx, 2k:2k+2]) * stride`` in image pixels."""
    s = np.asarray(S.value if isinstance(S, dc.DiffArray) else S)
    h, w, ch = s.shape
    cx, cy = int(center[0]), int(center[1])
    if not (0 <= cx < w and 0 <= cy < h):
        raise ValueError(f"center {center} outside {w}x{h} offset map")
    off = s[cy, cx].reshape(ch // 2, 2).astype(np.float64)
    return (np.array([cx, cy], dtype=np.float64) + off) * stride


def detect(Y, S, threshold: float, top_k: int, stride: int, image_index: int = 0) -> list[Detection]:
    dets = []
    for cls, score, center in extract_peaks(Y, threshold, top_k):
        c0 = decode_initial_contour(S, center, stride)
        dets.append(Detection(cls, score, center, c0, image_index, [c0]))
    return dets
