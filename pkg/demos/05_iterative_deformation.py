"""
Watching the contour converge
=============================

Loads the reference run (trained by ``reproduce_reference_runs.py``),
detects objects on held-out images and draws every intermediate contour
C_0 ... C_6 plus the refined C_M. Most of the movement happens in the
first few iterations.
"""

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from polysnake import experiments, training
from polysnake.pipeline import predict

run = experiments.default_root() / "alpha1"
ckpt = run / "stage2.ckpt"
if not ckpt.exists():
    raise SystemExit(f"no reference run at {run}; run demos/reproduce_reference_runs.py first")
params, meta, _ = training.load_checkpoint(ckpt)
cfg = experiments.reference_config()
samples = experiments.heldout_samples(cfg, 8)
dets = predict(params, cfg, np.stack([s.image for s in samples]), refine=True)

out = Path(__file__).parent / "_out"
out.mkdir(exist_ok=True)
fig, axes = plt.subplots(2, 4, figsize=(14, 7))
cmap = matplotlib.colormaps["viridis"]
for ax, s, ds in zip(axes.ravel(), samples, dets):
    ax.imshow(s.image)
    for d in ds:
        for k, c in enumerate(d.trace):
            ring = np.vstack([c, c[:1]])
            ax.plot(ring[:, 0], ring[:, 1], color=cmap(k / (len(d.trace) - 1)),
                    lw=2 if k == len(d.trace) - 1 else 0.8)
    ax.set_title(f"{s.kind}: {len(ds)} det / {len(s.instances)} gt")
    ax.axis("off")
fig.tight_layout()
fig.savefig(out / "deformation.png", dpi=80)
print("wrote", out / "deformation.png")

# %%
# How far does each iteration move the vertices, on average?

moves = np.array([[np.linalg.norm(d.trace[k + 1] - d.trace[k], axis=1).mean()
                   for k in range(len(d.trace) - 1)] for ds in dets for d in ds])
if len(moves):
    labels = [f"C{k}->C{k + 1}" for k in range(cfg.iterations)] + [f"C{cfg.iterations}->CM"]
    for lab, m in zip(labels, moves.mean(axis=0)):
        print(f"{lab:<9} mean vertex displacement {m:6.3f} px")
