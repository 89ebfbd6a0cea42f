"""Line-delimited polygon records.

One JSON object per line, one line per instance::

    {"image": "000017", "class": 2, "polygon": [x0, y0, x1, y1, ...]}

Detections add ``"score"``. Blank lines are ignored. The same format carries
ground-truth annotations and exported predictions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np


class AnnotationParseError(ValueError):
    def __init__(self, path, errors: list[tuple[int, str]]):
        self.errors = errors
        lines = "; ".join(f"line {n}: {msg}" for n, msg in errors[:10])
        super().__init__(f"{path}: {len(errors)} malformed record(s): {lines}")


@dataclass
class PolygonRecord:
    image: str
    class_id: int
    polygon: np.ndarray           # [N, 2]
    score: float | None = None

    def to_json(self) -> str:
        d = {"image": self.image, "class": int(self.class_id),
             "polygon": [float(v) for v in np.asarray(self.polygon).ravel()]}
        if self.score is not None:
            d["score"] = float(self.score)
        return json.dumps(d)


def write_records(path: str | Path, records: Iterable[PolygonRecord]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def _parse(obj) -> PolygonRecord:
    if not isinstance(obj, dict):
        raise ValueError("record is not an object")
    for key in ("image", "class", "polygon"):
        if key not in obj:
            raise ValueError(f"missing field {key!r}")
    flat = obj["polygon"]
    if not isinstance(flat, list) or not all(isinstance(v, (int, float)) for v in flat):
        raise ValueError("polygon must be a list of numbers")
    if len(flat) % 2:
        raise ValueError(f"polygon has an odd number of coordinates ({len(flat)})")
    if len(flat) < 6:
        raise ValueError("polygon needs at least 3 vertices")
    score = obj.get("score")
    return PolygonRecord(str(obj["image"]), int(obj["class"]),
                         np.asarray(flat, dtype=np.float64).reshape(-1, 2),
                         None if score is None else float(score))


def load_annotations(path: str | Path) -> list[PolygonRecord]:
    """Parse a record file; every malformed line is reported with its number."""
    text = Path(path).read_text()
    records, errors = [], []
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(_parse(json.loads(line)))
        except (ValueError, TypeError) as exc:
            errors.append((n, str(exc)))
    if errors:
        raise AnnotationParseError(path, errors)
    return records


def group_by_image(records: Iterable[PolygonRecord]) -> dict[str, list[PolygonRecord]]:
    out: dict[str, list[PolygonRecord]] = {}
    for r in records:
        out.setdefault(r.image, []).append(r)
    return out
