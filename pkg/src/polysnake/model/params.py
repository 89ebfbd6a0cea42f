"""Learnable weights: layout, deterministic initialisation, persistence."""

from __future__ import annotations

from pathlib import Path
from typing import Iterator

import numpy as np

from ..config import Config
from ..diffcore import DiffArray
from ..weights import load_tensors, save_tensors

PARAMS_VERSION = "polysnake-params/2"
GROUPS = ("backbone", "head", "icd", "mcr")


class ModelParams:
    """Named weight collection; names are ``<group>.<layer>.<w|b>``."""

    def __init__(self, tensors: dict[str, DiffArray], seed: int, version: str = PARAMS_VERSION):
        self.tensors = tensors
        self.seed = seed
        self.version = version

    def __getitem__(self, name: str) -> DiffArray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def group(self, group: str) -> dict[str, DiffArray]:
        return {k: v for k, v in self.tensors.items() if k.split(".", 1)[0] == group}

    def count(self, groups=None) -> int:
        return int(sum(v.value.size for k, v in self.tensors.items()
                       if groups is None or k.split(".", 1)[0] in groups))

    def set_trainable(self, groups) -> None:
        for k, v in self.tensors.items():
            v.requires_grad = k.split(".", 1)[0] in groups
            v.zero_grad()

    def zero_grad(self) -> None:
        for v in self.tensors.values():
            v.zero_grad()

    def numpy(self) -> dict[str, np.ndarray]:
        return {k: v.value for k, v in self.tensors.items()}

    def copy(self) -> "ModelParams":
        return ModelParams({k: DiffArray(v.value.copy(), requires_grad=v.requires_grad, name=k)
                            for k, v in self.tensors.items()}, self.seed, self.version)

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        m = {"version": self.version, "seed": self.seed}
        m.update(meta or {})
        save_tensors(path, self.numpy(), m)

    @classmethod
    def load(cls, path: str | Path) -> "ModelParams":
        arrays, meta = load_tensors(path)
        version = meta.get("version")
        if version != PARAMS_VERSION:
            raise ValueError(f"{path}: incompatible parameter version {version!r}")
        tensors = {k: DiffArray(v, requires_grad=True, name=k) for k, v in arrays.items()
                   if not k.startswith("optim.")}
        return cls(tensors, int(meta.get("seed", 0)), version)


def _conv_shapes(cfg: Config) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, weight shape, init) for every layer; biases are added per layer."""
    c0 = cfg.d0
    e1, e2, e3, e4 = cfg.encoder_channels
    D, hc, nv = cfg.feat_dim, cfg.head_channels, cfg.n_vertices
    dv = cfg.contour_dim
    L = [
        ("backbone.stem", (3, 3, 3, c0), "he"),
        ("backbone.enc1", (3, 3, c0, e1), "he"),
        ("backbone.enc2", (3, 3, e1, e2), "he"),
        ("backbone.enc3", (3, 3, e2, e3), "he"),
        ("backbone.enc4", (3, 3, e3, e4), "he"),
        ("backbone.dec3", (3, 3, e4 + e3, e3), "he"),
        ("backbone.dec2", (3, 3, e3 + e2, D), "he"),
        ("backbone.f1", (e1, cfg.d1), "he"),
        ("head.y0", (3, 3, D, hc), "he"),
        ("head.y1", (hc, cfg.num_classes), "heatmap"),
        ("head.s0", (3, 3, D, hc), "he"),
        ("head.s1", (hc, 2 * nv), "small"),
        ("head.b0", (3, 3, D, hc), "he"),
        ("head.b1", (hc, 1), "small"),
    ]
    w = cfg.icd_width
    for i in range(cfg.icd_layers):
        L.append((f"icd.circ{i}", (w, D if i == 0 else w, cfg.icd_kernel), "he"))
        L.append((f"icd.norm{i}", (w,), "norm"))
    prev = w * cfg.icd_layers
    for j, f in enumerate(cfg.icd_fusion):
        L.append((f"icd.fuse{j}", (prev, f), "he"))
        prev = f
    L.append(("icd.fuse_norm", (prev,), "norm"))
    if prev + 2 != dv:
        raise ValueError(f"icd fusion must end at feat_dim={D} channels, got {prev}")
    for gate in ("z", "r", "h"):
        L.append((f"icd.gru_{gate}", (dv, 2 * dv, cfg.gru_kernel), "xavier"))
    L.append(("icd.off0", (dv, cfg.offset_hidden), "he"))
    L.append(("icd.off1", (cfg.offset_hidden, 2), "zero"))

    d2, mw = cfg.d2, cfg.mcr_width
    L += [
        ("mcr.top", (D, d2), "he"),
        ("mcr.lat1", (cfg.d1, d2), "he"),
        ("mcr.lat0", (cfg.d0, d2), "he"),
        ("mcr.smooth", (3, 3, d2, d2), "he"),
        ("mcr.inp", (d2, mw), "he"),
    ]
    for i in range(cfg.mcr_layers):
        L.append((f"mcr.circ{i}", (mw, mw, cfg.mcr_kernel), "he"))
        L.append((f"mcr.norm{i}", (mw,), "norm"))
    L.append(("mcr.fuse", (mw * cfg.mcr_layers, mw), "he"))
    L.append(("mcr.fuse_norm", (mw,), "norm"))
    L.append(("mcr.fc", (mw + 2, 2), "zero"))
    return L


def _fan_in(shape: tuple[int, ...], name: str) -> int:
    if len(shape) == 4:
        return shape[0] * shape[1] * shape[2]
    if len(shape) == 3:  # circular kernel [C_out, C_in, ks]
        return shape[1] * shape[2]
    return shape[0]


def _fan_out(shape: tuple[int, ...]) -> int:
    if len(shape) == 4:
        return shape[0] * shape[1] * shape[3]
    if len(shape) == 3:
        return shape[0] * shape[2]
    return shape[1]


def init_params(seed: int, cfg: Config) -> ModelParams:
    """Deterministic initialisation from a Philox stream keyed by ``seed``."""
    rng = np.random.Generator(np.random.Philox(seed))
    tensors: dict[str, DiffArray] = {}
    for name, shape, kind in _conv_shapes(cfg):
        fan_in = _fan_in(shape, name)
        if kind == "he":
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        elif kind == "xavier":
            w = rng.normal(0.0, np.sqrt(2.0 / (fan_in + _fan_out(shape))), size=shape)
        elif kind in ("small", "heatmap"):
            w = rng.normal(0.0, 1e-3, size=shape)
        elif kind == "norm":  # layer-norm gain; its bias below starts at zero
            w = np.ones(shape)
        else:
            w = np.zeros(shape)
        nout = shape[0] if len(shape) == 3 else shape[-1]
        b = np.full(nout, -2.19) if kind == "heatmap" else np.zeros(nout)
        tensors[f"{name}.w"] = DiffArray(w.astype(np.float32), requires_grad=True, name=f"{name}.w")
        tensors[f"{name}.b"] = DiffArray(b.astype(np.float32), requires_grad=True, name=f"{name}.b")
    return ModelParams(tensors, seed)
