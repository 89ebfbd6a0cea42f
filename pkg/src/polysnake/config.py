"""Run configuration: one flat dataclass, serialized as indented JSON."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path


@dataclass
class Config:
    # contour / feature geometry
    n_vertices: int = 128
    stride: int = 4
    feat_dim: int = 64
    num_classes: int = 4
    d0: int = 32
    d1: int = 16
    d2: int = 8
    encoder_channels: tuple[int, ...] = (32, 64, 128, 128)
    head_channels: int = 64

    # iterative deformation
    iterations: int = 6
    icd_layers: int = 8
    icd_kernel: int = 9
    icd_width: int = 64
    icd_fusion: tuple[int, ...] = (128, 64, 64)
    gru_kernel: int = 1
    offset_hidden: int = 64

    # refinement
    mcr_layers: int = 8
    mcr_kernel: int = 9
    mcr_width: int = 16

    # losses
    lam: float = 0.8
    alpha: float = 1.0
    detach_initial: bool = True     # stop L_ICD gradients from reaching S through C_0

    # decoding
    peak_threshold: float = 0.3
    top_k: int = 32

    # data
    image_size: int = 96
    kinds: tuple[str, ...] = ("ellipse", "rounded-rect", "star", "blob")
    max_overlap: float = 0.3

    # optimisation
    seed: int = 0
    batch_size: int = 4
    lr: float = 1e-4
    lr_milestones: tuple[float, ...] = (0.6, 0.85)
    lr_gamma: float = 0.5
    steps: int = 2000
    stage2_steps: int = 500
    grad_clip: float | None = None
    checkpoint_every: int = 500
    log_every: int = 10

    @property
    def contour_dim(self) -> int:
        """Channel count D_v of the contour representation (features + xy)."""
        return self.feat_dim + 2

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(d) - set(names)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            if isinstance(getattr(cls, k, None), tuple) or isinstance(names[k].default, tuple):
                v = tuple(v)
            kw[k] = v
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> "Config":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def overrides(cfg: Config) -> dict:
    """Fields that differ from the defaults (echoed into run logs)."""
    base = Config().to_dict()
    return {k: v for k, v in cfg.to_dict().items() if base.get(k) != v}
