"""Procedural shape scenes with exact polygon ground truth.

Every sample is a pure function of ``(seed, kind, height, width)``. Randomness
comes from numpy's Philox counter-based generator keyed by the seed, so the
same call yields the same bytes on every platform.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry
from .annotations import PolygonRecord, load_annotations, group_by_image, write_records

log = logging.getLogger(__name__)

KINDS = ("ellipse", "rounded-rect", "star", "blob")
MANIFEST_FORMAT = "polysnake-manifest/1"
AREA_TOL = 0.02


@dataclass
class Instance:
    class_id: int
    polygon: np.ndarray      # [n, 2] image pixels, positive signed area
    center: np.ndarray       # (x, y) polygon centroid
    mask: np.ndarray         # [H, W] bool


@dataclass
class InstanceSample:
    image: np.ndarray        # [H, W, 3] float32 in [0, 1], multiples of 1/255
    instances: list[Instance]
    seed: int
    kind: str
    spikes: list[int] = field(default_factory=list)

    @property
    def name(self) -> str:
        return f"{self.seed:06d}"


@dataclass
class GroundTruthPack:
    heatmap: np.ndarray      # [h, w, C]
    boundary: np.ndarray     # [h, w] in {0, 1}
    contours: np.ndarray     # [M, N_v, 2] image pixels, canonical order
    centers: np.ndarray      # [M, 2] integer (x, y) cells
    classes: np.ndarray      # [M]


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _ring(radius_fn, n: int, phase: float) -> np.ndarray:
    t = phase + np.linspace(0, 2 * np.pi, n, endpoint=False)
    r = radius_fn(t)
    return np.stack([r * np.cos(t), r * np.sin(t)], axis=1)


def _local_shape(kind: str, r: float, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Outline centred at the origin, before rotation; returns (polygon, spikes)."""
    if kind == "ellipse":
        b = r * rng.uniform(0.55, 1.0)
        t = np.linspace(0, 2 * np.pi, 64, endpoint=False)
        return np.stack([r * np.cos(t), b * np.sin(t)], axis=1), 0
    if kind == "rounded-rect":
        hw, hh = r, r * rng.uniform(0.55, 1.0)
        rho = rng.uniform(0.15, 0.45) * min(hw, hh)
        pts = []
        for cx, cy, a0 in ((hw - rho, hh - rho, 0.0), (-hw + rho, hh - rho, 0.5 * np.pi),
                           (-hw + rho, -hh + rho, np.pi), (hw - rho, -hh + rho, 1.5 * np.pi)):
            a = a0 + np.linspace(0, 0.5 * np.pi, 8)
            pts.append(np.stack([cx + rho * np.cos(a), cy + rho * np.sin(a)], axis=1))
        return np.concatenate(pts), 0
    if kind == "star":
        spikes = int(rng.integers(5, 8))
        inner = r * rng.uniform(0.45, 0.65)
        t = np.arange(2 * spikes) * np.pi / spikes
        rad = np.where(np.arange(2 * spikes) % 2 == 0, r, inner)
        return np.stack([rad * np.cos(t), rad * np.sin(t)], axis=1), spikes
    if kind == "blob":
        amps = rng.uniform(-0.12, 0.12, size=3)
        phases = rng.uniform(0, 2 * np.pi, size=3)

        def radius(t):
            return r * (1 + sum(a * np.cos(k * t + p) for k, a, p in zip((2, 3, 4), amps, phases)))

        return _ring(radius, 64, 0.0), 0
    raise ValueError(f"unknown shape kind {kind!r}; expected one of {KINDS}")


def _texture(rng, H, W, base, amp) -> np.ndarray:
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(0.15, 0.6)
    stripes = np.sin(freq * (xx * np.cos(theta) + yy * np.sin(theta)) + rng.uniform(0, 2 * np.pi))
    g = rng.uniform(-1, 1, size=2)
    grad = (g[0] * (xx / W - 0.5) + g[1] * (yy / H - 0.5))
    noise = rng.normal(0, 0.04, size=(H, W, 1))
    return base[None, None, :] + amp * (stripes[..., None] * 0.5 + grad[..., None] * 0.6) + noise


def generate_shape(seed: int, kind: str, height: int = 96, width: int = 96,
                   kinds: tuple[str, ...] = KINDS, max_overlap: float = 0.3) -> InstanceSample:
    """Scene with 1-4 instances of ``kind`` on a textured background.

    Instances are fully inside the canvas, their pixel area is within 2% of
    the polygon area, pairwise mask IoU stays at or below ``max_overlap``, and
    later instances are painted over earlier ones. The
    class id is the position of ``kind`` in ``kinds``.
    """
    if kind not in kinds:
        raise ValueError(f"kind {kind!r} not in category set {kinds}")
    if height < 64 or width < 64:
        raise ValueError("canvas must be at least 64x64")
    rng = _rng(seed)
    class_id = kinds.index(kind)
    n_target = int(rng.integers(1, 5))
    side = min(height, width)

    bg = rng.uniform(0.1, 0.9, size=3)
    image = _texture(rng, height, width, bg, rng.uniform(0.05, 0.15))

    instances: list[Instance] = []
    spikes: list[int] = []
    for _ in range(n_target):
        for _attempt in range(50):
            r = rng.uniform(0.12, 0.24) * side
            local, n_sp = _local_shape(kind, r, rng)
            th = rng.uniform(0, 2 * np.pi)
            rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
            local = local @ rot.T
            lo, hi = local.min(axis=0), local.max(axis=0)
            margin = 1.0
            cx = rng.uniform(margin - lo[0], width - margin - hi[0])
            cy = rng.uniform(margin - lo[1], height - margin - hi[1])
            poly = local + np.array([cx, cy])
            if geometry.signed_area(poly) < 0:
                poly = poly[::-1].copy()
            mask = geometry.rasterize(poly, height, width)
            # reject placements whose pixel area strays from the exact area
            area = geometry.signed_area(poly)
            if not mask.any() or abs(int(mask.sum()) - area) > AREA_TOL * area:
                continue
            if all(geometry.mask_iou(mask, o.mask) <= max_overlap for o in instances):
                instances.append(Instance(class_id, poly, geometry.centroid(poly), mask))
                spikes.append(n_sp)
                break
        if not instances:
            raise RuntimeError(f"seed {seed}: could not place the first instance")

    for inst in instances:
        while True:
            fg = rng.uniform(0.0, 1.0, size=3)
            if np.abs(fg - bg).max() > 0.3:
                break
        tex = _texture(rng, height, width, fg, rng.uniform(0.05, 0.2))
        image = np.where(inst.mask[..., None], tex, image)

    image = np.round(np.clip(image, 0, 1) * 255) / 255
    return InstanceSample(image.astype(np.float32), instances, seed, kind, spikes)


def kind_for_seed(seed: int, kinds: tuple[str, ...]) -> str:
    return kinds[seed % len(kinds)]


def generate_dataset(seeds, kinds: tuple[str, ...] = KINDS, height: int = 96, width: int = 96,
                     max_overlap: float = 0.3) -> list[InstanceSample]:
    return [generate_shape(s, kind_for_seed(s, kinds), height, width, kinds, max_overlap) for s in seeds]


def gaussian_radius(h: float, w: float, min_overlap: float = 0.7) -> float:
    """CenterNet's radius so that a shifted box keeps IoU >= ``min_overlap``."""
    a1, b1 = 1, h + w
    c1 = w * h * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 + np.sqrt(b1 ** 2 - 4 * a1 * c1)) / 2
    a2, b2 = 4, 2 * (h + w)
    c2 = (1 - min_overlap) * w * h
    r2 = (b2 + np.sqrt(b2 ** 2 - 4 * a2 * c2)) / 2
    a3, b3 = 4 * min_overlap, -2 * min_overlap * (h + w)
    c3 = (min_overlap - 1) * w * h
    r3 = (b3 + np.sqrt(b3 ** 2 - 4 * a3 * c3)) / 2
    return float(min(r1, r2, r3))


def splat_gaussian(heat: np.ndarray, cx: int, cy: int, radius: int) -> None:
    """Max-combine a Gaussian of peak 1 at ``(cx, cy)`` into ``heat [h, w]``."""
    sigma = (2 * radius + 1) / 6
    h, w = heat.shape
    ys, xs = np.ogrid[-radius:radius + 1, -radius:radius + 1]
    g = np.exp(-(xs * xs + ys * ys) / (2 * sigma * sigma))
    g[radius, radius] = 1.0
    top, bottom = min(cy, radius), min(h - cy, radius + 1)
    left, right = min(cx, radius), min(w - cx, radius + 1)
    region = heat[cy - top:cy + bottom, cx - left:cx + right]
    patch = g[radius - top:radius + bottom, radius - left:radius + right]
    np.maximum(region, patch, out=region)


def stroke_boundary(mask: np.ndarray, contour: np.ndarray, stride: int) -> None:
    """Mark every cell a contour edge passes through (1-cell stroke at 1/stride)."""
    c = np.asarray(contour, dtype=np.float64) / stride
    nxt = np.roll(c, -1, axis=0)
    h, w = mask.shape
    for a, b in zip(c, nxt):
        n = max(int(np.ceil(np.linalg.norm(b - a) * 4)), 1)
        t = np.arange(n + 1)[:, None] / n
        pts = np.round(a + t * (b - a)).astype(int)
        ok = (pts[:, 0] >= 0) & (pts[:, 0] < w) & (pts[:, 1] >= 0) & (pts[:, 1] < h)
        mask[pts[ok, 1], pts[ok, 0]] = 1


def center_cell(center, stride: int, h: int, w: int) -> tuple[int, int]:
    # the epsilon keeps centroids like 39.99999999 (exactly 40 on paper) in cell 10
    cx = int(np.clip(np.floor(center[0] / stride + 1e-9), 0, w - 1))
    cy = int(np.clip(np.floor(center[1] / stride + 1e-9), 0, h - 1))
    return cx, cy


def build_ground_truth(sample: InstanceSample, n_vertices: int, stride: int,
                       num_classes: int) -> GroundTruthPack:
    H, W = sample.image.shape[:2]
    h, w = H // stride, W // stride
    heat = np.zeros((h, w, num_classes), dtype=np.float32)
    boundary = np.zeros((h, w), dtype=np.float32)
    contours, centers, classes = [], [], []
    for i, inst in enumerate(sample.instances):
        try:
            c = geometry.resample_uniform(inst.polygon, n_vertices)
        except geometry.DegeneratePolygonError as exc:
            log.warning("sample %d instance %d skipped: %s", sample.seed, i, exc)
            continue
        cx, cy = center_cell(inst.center, stride, h, w)
        lo, hi = inst.polygon.min(axis=0) / stride, inst.polygon.max(axis=0) / stride
        radius = max(0, int(gaussian_radius(hi[1] - lo[1], hi[0] - lo[0])))
        splat_gaussian(heat[:, :, inst.class_id], cx, cy, radius)
        stroke_boundary(boundary, c, stride)
        contours.append(c)
        centers.append((cx, cy))
        classes.append(inst.class_id)
    return GroundTruthPack(
        heatmap=heat,
        boundary=boundary,
        contours=np.asarray(contours, dtype=np.float64).reshape(-1, n_vertices, 2),
        centers=np.asarray(centers, dtype=np.int64).reshape(-1, 2),
        classes=np.asarray(classes, dtype=np.int64),
    )


# --------------------------------------------------------------------------
# on-disk datasets


def parse_range(text: str) -> range:
    """``"a..b"`` is the half-open range ``[a, b)``."""
    try:
        a, b = text.split("..")
        r = range(int(a), int(b))
    except ValueError:
        raise ValueError(f"bad seed range {text!r}; expected A..B") from None
    if len(r) == 0:
        raise ValueError(f"empty seed range {text!r}")
    return r


def check_disjoint(splits: dict[str, range]) -> None:
    names = sorted(splits, key=lambda n: splits[n].start)
    for a, b in zip(names, names[1:]):
        if splits[a].stop > splits[b].start:
            raise ValueError(f"seed ranges of splits {a!r} and {b!r} overlap")


def write_dataset(root: str | Path, splits: dict[str, range], kinds: tuple[str, ...] = KINDS,
                  height: int = 96, width: int = 96, max_overlap: float = 0.3) -> dict:
    """Write PNG images, ``annotations.jsonl`` and ``manifest.json`` under ``root``."""
    from PIL import Image

    check_disjoint(splits)
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    samples, records = [], []
    for split in sorted(splits, key=lambda n: splits[n].start):
        for seed in splits[split]:
            kind = kind_for_seed(seed, kinds)
            s = generate_shape(seed, kind, height, width, kinds, max_overlap)
            rel = f"images/{s.name}.png"
            Image.fromarray(np.round(s.image * 255).astype(np.uint8)).save(root / rel)
            samples.append({"seed": seed, "kind": kind, "split": split, "image": rel,
                            "instances": len(s.instances)})
            records += [PolygonRecord(s.name, inst.class_id, inst.polygon) for inst in s.instances]
    manifest = {
        "format": MANIFEST_FORMAT,
        "canvas": [height, width],
        "kinds": list(kinds),
        "max_overlap": max_overlap,
        "splits": {k: [v.start, v.stop] for k, v in splits.items()},
        "samples": samples,
    }
    write_records(root / "annotations.jsonl", records)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest


def load_manifest(root: str | Path) -> dict:
    path = Path(root) / "manifest.json"
    m = json.loads(path.read_text())
    if m.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"{path}: unsupported manifest format {m.get('format')!r}")
    return m


def load_dataset(root: str | Path, split: str) -> list[InstanceSample]:
    """Read one split back into samples (images from PNG, polygons from records)."""
    from PIL import Image

    root = Path(root)
    m = load_manifest(root)
    H, W = m["canvas"]
    by_image = group_by_image(load_annotations(root / "annotations.jsonl"))
    out = []
    for ent in m["samples"]:
        if ent["split"] != split:
            continue
        img = np.asarray(Image.open(root / ent["image"]).convert("RGB"), dtype=np.float32) / 255
        name = Path(ent["image"]).stem
        insts = []
        for r in by_image.get(name, []):
            poly = r.polygon
            insts.append(Instance(r.class_id, poly, geometry.centroid(poly),
                                  geometry.rasterize(poly, H, W)))
        out.append(InstanceSample(img, insts, int(ent["seed"]), ent["kind"]))
    return out
