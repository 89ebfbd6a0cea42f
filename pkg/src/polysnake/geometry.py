"""Polygon and contour utilities.

Contours are ``[N, 2]`` float arrays of ``(x, y)`` image coordinates, closed
implicitly (the last vertex connects back to the first). Pixel ``(row, col)``
covers ``[col, col+1) x [row, row+1)`` and is inside a polygon when its centre
``(col + 0.5, row + 0.5)`` is, under the even-odd rule.
"""

from __future__ import annotations

import numpy as np


class DegeneratePolygonError(ValueError):
    pass


def _as_polygon(polygon) -> np.ndarray:
    p = np.asarray(polygon, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2:
        raise ValueError(f"polygon must be [N, 2], got {p.shape}")
    if len(p) < 3:
        raise DegeneratePolygonError(f"polygon needs at least 3 vertices, got {len(p)}")
    if not np.all(np.isfinite(p)):
        raise ValueError("polygon has non-finite coordinates")
    return p


def signed_area(polygon) -> float:
    """Shoelace area; positive for counter-clockwise order in a y-up frame."""
    p = np.asarray(polygon, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def perimeter(polygon) -> float:
    p = np.asarray(polygon, dtype=np.float64)
    return float(np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1).sum())


def centroid(polygon) -> np.ndarray:
    p = np.asarray(polygon, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = cross.sum() / 2.0
    if abs(a) < 1e-12:
        return p.mean(axis=0)
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * a)


def canonicalize(polygon) -> np.ndarray:
    """Force positive signed area and start at the max-x vertex (ties: min y)."""
    p = _as_polygon(polygon)
    a = signed_area(p)
    if a == 0.0:
        raise DegeneratePolygonError("polygon has zero signed area")
    if a < 0:
        p = p[::-1]
    # lexsort keys: last is primary
    start = np.lexsort((p[:, 1], -p[:, 0]))[0]
    return np.roll(p, -start, axis=0).copy()


def resample_uniform(polygon, n_vertices: int) -> np.ndarray:
    """Canonicalize, then place ``n_vertices`` points at equal arclength steps."""
    p = canonicalize(polygon)
    closed = np.vstack([p, p[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    total = seg.sum()
    if total <= 0:
        raise DegeneratePolygonError("polygon has zero perimeter")
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.arange(n_vertices) * (total / n_vertices)
    x = np.interp(targets, cum, closed[:, 0])
    y = np.interp(targets, cum, closed[:, 1])
    return np.stack([x, y], axis=1)


def shape_rep(contour) -> np.ndarray:
    """Cyclic first differences ``p[n+1] - p[n]``, closing offset included."""
    c = np.asarray(contour)
    return np.roll(c, -1, axis=0) - c


def rasterize(contour, height: int, width: int) -> np.ndarray:
    """Even-odd scanline fill sampled at pixel centres; returns a bool mask."""
    c = np.asarray(contour, dtype=np.float64)
    mask = np.zeros((height, width), dtype=bool)
    if len(c) < 3 or height <= 0 or width <= 0:
        return mask
    x0, y0 = c[:, 0], c[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    ys = np.arange(height) + 0.5
    xs = np.arange(width) + 0.5
    lo = np.minimum(y0, y1)
    hi = np.maximum(y0, y1)
    # half-open span rule: an edge counts for lo <= y < hi, horizontal edges never
    active = (ys[:, None] >= lo[None, :]) & (ys[:, None] < hi[None, :])
    rows = np.nonzero(active.any(axis=1))[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = (x1 - x0) / (y1 - y0)
    for r in rows:
        e = active[r]
        xc = np.sort(x0[e] + (ys[r] - y0[e]) * slope[e])
        left = np.searchsorted(xc, xs, side="right")
        mask[r] = (left % 2) == 1
    return mask


def mask_iou(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def chamfer_distance(a, b, n_dense: int = 4) -> float:
    """Symmetric mean nearest-point distance between two closed contours.

    Each ring is densified to ``n_dense`` points per edge before matching.
    """
    def dense(c):
        c = np.asarray(c, dtype=np.float64)
        t = np.arange(n_dense)[None, :, None] / n_dense
        return (c[:, None, :] + t * (np.roll(c, -1, axis=0) - c)[:, None, :]).reshape(-1, 2)

    pa, pb = dense(a), dense(b)
    d = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=-1)
    return 0.5 * float(d.min(axis=1).mean() + d.min(axis=0).mean())
