"""
Synthetic shapes and their training targets
===========================================

Every sample is drawn from its own seed, so a dataset is just a range of
integers. Here we generate one image per shape kind, then look at the
targets the network is trained on: the per-class centre heatmap, the
boundary map, and the canonical 128-vertex ground-truth contours.
"""

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from polysnake.config import Config
from polysnake.datagen import build_ground_truth, generate_dataset

out = Path(__file__).parent / "_out"
out.mkdir(exist_ok=True)
cfg = Config()

# seeds 0..3 cycle through the four kinds (ellipse, rounded-rect, star, blob)
samples = generate_dataset(range(4), cfg.kinds)
for s in samples:
    print(f"seed {s.seed}: {s.kind:<12} {len(s.instances)} instance(s)")

# %%
# The ground truth lives at stride 4: a 24x24 grid for a 96x96 image.
# Centres are Gaussian-splatted into the channel of their class.

fig, axes = plt.subplots(3, 4, figsize=(12, 9))
for col, s in enumerate(samples):
    gt = build_ground_truth(s, cfg.n_vertices, cfg.stride, cfg.num_classes)
    ax = axes[0, col]
    ax.imshow(s.image)
    for c in gt.contours:
        ring = np.vstack([c, c[:1]])
        ax.plot(ring[:, 0], ring[:, 1], "w-", lw=1)
        ax.plot(*c[0], "wo", ms=3)          # canonical start vertex
    ax.set_title(s.kind)
    axes[1, col].imshow(gt.heatmap.max(axis=-1), cmap="magma", vmin=0, vmax=1)
    axes[1, col].set_title("centre heatmap")
    axes[2, col].imshow(gt.boundary, cmap="gray")
    axes[2, col].set_title("boundary map")
for ax in axes.ravel():
    ax.axis("off")
fig.tight_layout()
fig.savefig(out / "synthetic_shapes.png", dpi=80)
print("wrote", out / "synthetic_shapes.png")

# %%
# Contours are oriented with positive signed area, resampled to equal
# arc-length spacing and rotated so vertex 0 is the right-most point. The same canonical form is used
# for every ground truth, which gives predicted and true contours a fixed
# vertex correspondence.

c = gt.contours[0]
gaps = np.linalg.norm(np.roll(c, -1, axis=0) - c, axis=1)
print(f"{len(c)} vertices, spacing {gaps.min():.3f}..{gaps.max():.3f} px, start {c[0].round(2)}")
