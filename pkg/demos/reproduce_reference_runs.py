"""
Reproduce the reference runs
============================

Trains (or reuses) the two cached runs behind the convergence and
shape-loss results: the default architecture with alpha = 1 (both stages)
and the same run with alpha = 0 (stage 1 only). On one CPU core each stage-1
run takes about an hour. Set ``POLYSNAKE_RUNS`` to choose the cache
directory.
"""

import logging

import numpy as np

from polysnake import evaluate, experiments, training

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

cfg = experiments.reference_config()
runs = {
    "alpha1": (cfg, experiments.ensure_run("alpha1", cfg, refine=True)),
    "alpha0": (cfg.replace(alpha=0.0), experiments.ensure_run("alpha0", cfg.replace(alpha=0.0), refine=False)),
}

heldout = experiments.heldout_samples(cfg)
for name, (c, run) in runs.items():
    stage = 2 if (run / "stage2.ckpt").exists() else 1
    params, meta, _ = training.load_checkpoint(run / f"stage{stage}.ckpt")
    rep = evaluate.evaluate_model(params, c, heldout, refine=stage == 2)
    print(f"\n== {name} (stage {stage}, weights {meta['weights_hash'][:12]})")
    print(rep.table())
    print(f"mean chamfer of final contour: {np.mean(rep.trace.chamfer):.3f} px")
