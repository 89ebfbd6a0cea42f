"""Two-stage training loop with resumable checkpoints.

Stage 1 optimises backbone, heads and the deformation operator on
``L_Y + L_S + L_B + L_ICD``; stage 2 freezes them and optimises only the
refinement module on ``L_MCR``. Batch composition for step ``s`` is drawn from
a Philox stream keyed by ``(seed, stage, s)``, so a resumed run sees exactly
the batches an uninterrupted run would.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import diffcore as dc
from .config import Config, overrides
from .datagen import InstanceSample
from .model import PARAMS_VERSION, ModelParams, init_params
from .optim import Adam
from .pipeline import ground_truth, make_batch, stage1_loss, stage2_loss
from .weights import load_tensors, save_tensors

log = logging.getLogger(__name__)

STAGE_GROUPS = {1: ("backbone", "head", "icd"), 2: ("mcr",)}


@dataclass
class TrainResult:
    params: ModelParams
    optimizer: Adam
    step: int
    losses: list[float] = field(default_factory=list)


def weights_hash(params: ModelParams) -> str:
    h = hashlib.sha256()
    for name in sorted(params.tensors):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].value).tobytes())
    return h.hexdigest()


def batch_indices(seed: int, stage: int, step: int, n: int, batch_size: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stage, step])))
    return rng.choice(n, size=min(batch_size, n), replace=False)


def save_checkpoint(path: str | Path, params: ModelParams, opt: Adam, step: int, stage: int,
                    cfg: Config, losses: list[float]) -> None:
    tensors = dict(params.numpy())
    tensors.update(opt.state())
    tensors["trace.losses"] = np.asarray(losses, dtype=np.float64)
    meta = {"version": params.version, "seed": params.seed, "step": step, "stage": stage,
            "config": cfg.to_dict(), "config_hash": cfg.hash(), "weights_hash": weights_hash(params)}
    save_tensors(path, tensors, meta)


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict, dict[str, np.ndarray]]:
    """Returns params, metadata, and the raw arrays (optimizer state included)."""
    arrays, meta = load_tensors(path)
    if meta.get("version") != PARAMS_VERSION:
        raise ValueError(f"{path}: incompatible checkpoint version {meta.get('version')!r}")
    tensors = {k: dc.DiffArray(v, requires_grad=True, name=k) for k, v in arrays.items()
               if not (k.startswith("optim.") or k.startswith("trace."))}
    return ModelParams(tensors, int(meta["seed"])), meta, arrays


def train(cfg: Config, samples: list[InstanceSample], stage: int = 1,
          params: ModelParams | None = None, steps: int | None = None,
          out_dir: str | Path | None = None, resume: str | Path | None = None,
          metrics_log: str | Path | None = None,
          callback: Callable[[int, dict], None] | None = None) -> TrainResult:
    """Optimise one stage up to step ``steps`` (default: the configured horizon).

    The learning-rate schedule always spans the configured horizon, so a run
    stopped early and resumed follows the same schedule as an uninterrupted
    one. ``params`` seeds stage 2 (and optionally stage 1); ``resume``
    continues from a checkpoint written by this function.
    """
    if stage not in STAGE_GROUPS:
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    horizon = cfg.steps if stage == 1 else cfg.stage2_steps
    total = horizon if steps is None else steps
    start = 0
    losses: list[float] = []
    opt_state = None
    if resume is not None:
        params, meta, arrays = load_checkpoint(resume)
        if int(meta["stage"]) != stage:
            raise ValueError(f"checkpoint {resume} is from stage {meta['stage']}, not {stage}")
        start = int(meta["step"])
        losses = [float(v) for v in arrays["trace.losses"]]
        opt_state = arrays
    elif params is None:
        if stage == 2:
            raise ValueError("stage 2 needs stage-1 parameters")
        params = init_params(cfg.seed, cfg)
    params.set_trainable(STAGE_GROUPS[stage])

    milestones = [int(round(f * horizon)) for f in cfg.lr_milestones]
    opt = Adam(params.tensors, lr=cfg.lr, milestones=milestones, gamma=cfg.lr_gamma,
               grad_clip=cfg.grad_clip)
    if opt_state is not None:
        opt.load_state(opt_state)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.json")
        log.info("config overrides: %s", json.dumps(overrides(cfg), sort_keys=True))
    mlog = open(metrics_log, "a") if metrics_log is not None else None

    packs = ground_truth(samples, cfg)
    loss_fn = stage1_loss if stage == 1 else stage2_loss
    t0 = time.time()
    try:
        for step in range(start, total):
            idx = batch_indices(cfg.seed, stage, step, len(samples), cfg.batch_size)
            batch = make_batch([samples[i] for i in idx], [packs[i] for i in idx])
            params.zero_grad()
            with dc.GradTape() as tape:
                rep = loss_fn(params, cfg, batch)
                rep = rep[0] if isinstance(rep, tuple) else rep
            tape.backward(rep.total)
            gnorm = opt.step()
            losses.append(rep.terms["total"])
            if mlog is not None and (step % cfg.log_every == 0 or step == total - 1):
                for k, v in sorted(rep.terms.items()):
                    mlog.write(json.dumps({"step": step, "term": k, "value": v}) + "\n")
                mlog.write(json.dumps({"step": step, "term": "grad_norm", "value": gnorm}) + "\n")
                mlog.flush()
            if step % cfg.log_every == 0:
                log.info("stage %d step %d/%d loss %.4f (%.2fs/step)", stage, step, total,
                         rep.terms["total"], (time.time() - t0) / (step - start + 1))
            if callback is not None:
                callback(step, rep.terms)
            if out is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(out / f"stage{stage}_step{step + 1}.ckpt", params, opt, step + 1,
                                stage, cfg, losses)
    finally:
        if mlog is not None:
            mlog.close()
    if out is not None:
        save_checkpoint(out / f"stage{stage}.ckpt", params, opt, total, stage, cfg, losses)
    return TrainResult(params, opt, total, losses)
