"""Reference training runs used by the acceptance suite and the demos.

A run directory holds ``stage1.ckpt`` (and ``stage2.ckpt`` when refinement is
trained) plus ``run.json`` with the config and wall-clock timings. Runs are
cached: if a finished checkpoint with the same config hash exists it is
reused, and an interrupted stage resumes from its latest periodic checkpoint.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from pathlib import Path

from . import training
from .config import Config
from .datagen import InstanceSample, generate_dataset

log = logging.getLogger(__name__)

TRAIN_SEEDS = range(0, 2000)
HELDOUT_SEEDS = range(100_000, 100_200)


def default_root() -> Path:
    """Cache location: ``$POLYSNAKE_RUNS`` or ``runs/`` next to the package checkout."""
    env = os.environ.get("POLYSNAKE_RUNS")
    return Path(env) if env else Path(__file__).resolve().parents[2] / "runs"


def reference_config(**changes) -> Config:
    """Default architecture with the desk-scale optimisation schedule."""
    base = Config(lr=1e-3, steps=4000, stage2_steps=500, checkpoint_every=250, log_every=25)
    return base.replace(**changes)


def training_samples(cfg: Config) -> list[InstanceSample]:
    return generate_dataset(TRAIN_SEEDS, cfg.kinds, cfg.image_size, cfg.image_size, cfg.max_overlap)


def heldout_samples(cfg: Config, n: int | None = None) -> list[InstanceSample]:
    seeds = HELDOUT_SEEDS if n is None else range(HELDOUT_SEEDS.start, HELDOUT_SEEDS.start + n)
    return generate_dataset(seeds, cfg.kinds, cfg.image_size, cfg.image_size, cfg.max_overlap)


def _finished(path: Path, cfg: Config) -> bool:
    if not path.exists():
        return False
    try:
        _, meta, _ = training.load_checkpoint(path)
    except ValueError:  # written by an older parameter layout
        return False
    # compare field values, so checkpoints written before a defaulted field was added still match
    return Config.from_dict(meta["config"]) == cfg


def _latest_periodic(run: Path, stage: int, cfg: Config) -> Path | None:
    best, best_step = None, -1
    for p in run.glob(f"stage{stage}_step*.ckpt"):
        m = re.fullmatch(rf"stage{stage}_step(\d+)\.ckpt", p.name)
        if m and int(m.group(1)) > best_step and _finished(p, cfg):
            best, best_step = p, int(m.group(1))
    return best


def ensure_run(name: str, cfg: Config, refine: bool = True, root: str | Path | None = None,
               samples: list[InstanceSample] | None = None) -> Path:
    """Train (or reuse) stage 1 and optionally stage 2; returns the run directory."""
    run = Path(root or default_root()) / name
    run.mkdir(parents=True, exist_ok=True)
    info_path = run / "run.json"
    info = json.loads(info_path.read_text()) if info_path.exists() else {}
    if info.get("config_hash") != cfg.hash():
        info = {"config": cfg.to_dict(), "config_hash": cfg.hash(), "seconds": {}}

    stages = (1, 2) if refine else (1,)
    for stage in stages:
        final = run / f"stage{stage}.ckpt"
        if _finished(final, cfg):
            continue
        if samples is None:
            samples = training_samples(cfg)
        resume = _latest_periodic(run, stage, cfg)
        params = None
        if stage == 2 and resume is None:
            params, _, _ = training.load_checkpoint(run / "stage1.ckpt")
        log.info("%s: training stage %d%s", name, stage, f" from {resume.name}" if resume else "")
        t0 = time.time()
        training.train(cfg, samples, stage=stage, params=params, out_dir=run, resume=resume,
                       metrics_log=run / f"metrics_stage{stage}.jsonl")
        secs = info["seconds"]
        secs[f"stage{stage}"] = secs.get(f"stage{stage}", 0.0) + time.time() - t0
        info_path.write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    if not info_path.exists():
        info_path.write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return run
