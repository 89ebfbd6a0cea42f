"""
Mask AP and the per-iteration trace
===================================

AP is computed per class from mask IoU (contours rasterised at pixel
centres) and averaged over classes; AP_vol averages nine IoU thresholds
0.1 ... 0.9. The per-iteration trace scores every intermediate contour of
each centre-matched detection.
"""

import numpy as np

from polysnake import evaluate, experiments, training
from polysnake.annotations import PolygonRecord


def square(x, y, s=20):
    return np.array([[x, y], [x + s, y], [x + s, y + s], [x, y + s]], dtype=float)


# %%
# A detection shifted by 6 px against a 20 px square has IoU 14/26 ~ 0.54:
# a hit at thresholds 0.1 ... 0.5 and a miss above, so AP_vol = 5/9 of 100.

gts = [PolygonRecord("a", 0, square(10, 10)), PolygonRecord("b", 0, square(30, 20))]
dets = [PolygonRecord(g.image, 0, g.polygon + [6, 0], 0.9) for g in gts]
print(evaluate.evaluate_records(dets, gts, 64, 64).table())

# %%
# A duplicate of an already matched object is a false positive; ranking it
# above the good detection costs precision at the first recall step.

dup = dets + [PolygonRecord("a", 0, square(11, 10), 0.95)]
print("AP50 with a higher-scored duplicate:", evaluate.average_precision(dup, gts, 0.5, 64, 64))

# %%
# With the reference run available, score the held-out split.

ckpt = experiments.default_root() / "alpha1" / "stage2.ckpt"
if ckpt.exists():
    params, _, _ = training.load_checkpoint(ckpt)
    cfg = experiments.reference_config()
    rep = evaluate.evaluate_model(params, cfg, experiments.heldout_samples(cfg, 50))
    print(rep.table())
else:
    print(f"(skipping model evaluation: {ckpt} not found)")
