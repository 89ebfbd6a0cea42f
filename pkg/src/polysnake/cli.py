"""Command-line entry points: ``gen-data``, ``train``, ``infer``, ``eval``.

Failures print a single JSON object ``{"error": ..., "message": ...}`` on
stderr and exit with status 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import datagen, evaluate, training
from .config import Config, overrides

log = logging.getLogger("polysnake")


class CLIError(Exception):
    pass


def _parse_set(cfg: Config, items: list[str]) -> Config:
    fields = {f.name: f for f in dataclasses.fields(Config)}
    changes = {}
    for item in items or []:
        if "=" not in item:
            raise CLIError(f"--set expects KEY=VALUE, got {item!r}")
        k, raw = item.split("=", 1)
        if k not in fields:
            raise CLIError(f"unknown config key {k!r}")
        try:
            v = json.loads(raw)
        except json.JSONDecodeError:
            v = raw
        if isinstance(fields[k].default, tuple):
            v = tuple(v.split(",")) if isinstance(v, str) else tuple(v)
        changes[k] = v
    return cfg.replace(**changes)


def _load_config(args) -> Config:
    cfg = Config.load(args.config) if getattr(args, "config", None) else Config()
    return _parse_set(cfg, getattr(args, "set", None))


def _echo(cfg: Config, out: Path | None = None, **extra) -> dict:
    run = {"config": cfg.to_dict(), "config_hash": cfg.hash(), "overrides": overrides(cfg), **extra}
    log.info("config hash %s overrides %s", cfg.hash(), json.dumps(run["overrides"], sort_keys=True))
    for k, v in extra.items():
        log.info("%s %s", k, v)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "run.json").write_text(json.dumps(run, indent=2, sort_keys=True) + "\n")
    return run


def cmd_gen_data(args) -> int:
    kinds = tuple(k.strip() for k in args.kinds.split(",")) if args.kinds else datagen.KINDS
    bad = [k for k in kinds if k not in datagen.KINDS]
    if bad:
        raise CLIError(f"unknown shape kinds {bad}; choose from {list(datagen.KINDS)}")
    splits: dict[str, range] = {}
    if args.seeds:
        splits["all"] = datagen.parse_range(args.seeds)
    for item in args.split or []:
        if "=" not in item:
            raise CLIError(f"--split expects NAME=A..B, got {item!r}")
        name, rng = item.split("=", 1)
        if name in splits:
            raise CLIError(f"split {name!r} given twice")
        splits[name] = datagen.parse_range(rng)
    if not splits:
        raise CLIError("give --seeds A..B or at least one --split NAME=A..B")
    out = Path(args.out)
    try:
        m = datagen.write_dataset(out, splits, kinds, args.size, args.size, args.max_overlap)
    except OSError as e:
        raise CLIError(f"cannot write dataset to {out}: {e.strerror or e}") from None
    counts = {k: sum(1 for s in m["samples"] if s["split"] == k) for k in splits}
    print(json.dumps({"out": str(out), "samples": len(m["samples"]), "splits": counts,
                      "instances": sum(s["instances"] for s in m["samples"])}))
    return 0


def _dataset_config(cfg: Config, root: str) -> Config:
    m = datagen.load_manifest(root)
    kinds = tuple(m["kinds"])
    H, W = m["canvas"]
    return cfg.replace(kinds=kinds, num_classes=len(kinds), image_size=int(H)) if (
        kinds != cfg.kinds or H != cfg.image_size) else cfg


def cmd_train(args) -> int:
    out = Path(args.out)
    init = None
    if args.resume:
        _, meta, _ = training.load_checkpoint(args.resume)
        cfg = _parse_set(Config.from_dict(meta["config"]), args.set)
    elif args.stage == 2:
        if not args.init:
            raise CLIError("stage 2 needs a stage-1 checkpoint (--init)")
        if not Path(args.init).exists():
            raise CLIError(f"stage-1 checkpoint not found: {args.init}")
        init, meta, _ = training.load_checkpoint(args.init)
        if int(meta["stage"]) != 1:
            raise CLIError(f"{args.init} is a stage-{meta['stage']} checkpoint, expected stage 1")
        cfg = _parse_set(Config.from_dict(meta["config"]), args.set)
    else:
        cfg = _dataset_config(_load_config(args), args.data)
        if args.init:
            init, _, _ = training.load_checkpoint(args.init)
    samples = datagen.load_dataset(args.data, args.split)
    if not samples:
        raise CLIError(f"split {args.split!r} of {args.data} is empty")
    _echo(cfg, out, stage=args.stage, data=str(args.data), split=args.split)
    res = training.train(cfg, samples, stage=args.stage, params=init, steps=args.steps, out_dir=out,
                         resume=args.resume, metrics_log=out / f"metrics_stage{args.stage}.jsonl")
    wh = training.weights_hash(res.params)
    print(json.dumps({"checkpoint": str(out / f"stage{args.stage}.ckpt"), "step": res.step,
                      "final_loss": res.losses[-1] if res.losses else None,
                      "config_hash": cfg.hash(), "weights_hash": wh}))
    return 0


def _read_image(path: str) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError:
        raise CLIError(f"image not found: {path}") from None
    except (UnidentifiedImageError, OSError) as e:
        raise CLIError(f"cannot decode image {path}: {e}") from None
    arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255
    if arr.shape[0] % 8 or arr.shape[1] % 8:
        raise CLIError(f"image {path} is {arr.shape[1]}x{arr.shape[0]}; both sides must be divisible by 8")
    return arr


def draw_overlay(image: np.ndarray, dets, path, trace: bool = False, scale: int = 4) -> None:
    from PIL import Image, ImageDraw
    import matplotlib

    base = Image.fromarray(np.round(image * 255).astype(np.uint8)).resize(
        (image.shape[1] * scale, image.shape[0] * scale), Image.NEAREST)
    draw = ImageDraw.Draw(base)
    cmap = matplotlib.colormaps["viridis"]
    for d in dets:
        contours = d.trace if trace else [d.contour]
        for i, c in enumerate(contours):
            t = i / max(len(contours) - 1, 1)
            col = tuple(int(255 * v) for v in cmap(t)[:3]) if trace else (255, 40, 40)
            pts = [tuple(p) for p in (np.asarray(c) * scale).tolist()]
            draw.line(pts + [pts[0]], fill=col, width=2 if i == len(contours) - 1 else 1)
    base.save(path)


def cmd_infer(args) -> int:
    params, meta, _ = training.load_checkpoint(args.checkpoint)
    cfg = _parse_set(Config.from_dict(meta["config"]), args.set)
    refine = int(meta["stage"]) == 2 and not args.no_refine
    image = _read_image(args.image)
    out = Path(args.out)
    _echo(cfg, out, checkpoint=str(args.checkpoint), weights_hash=meta.get("weights_hash"))
    from .pipeline import predict

    dets = predict(params, cfg, image[None], refine=refine)[0]
    name = Path(args.image).stem
    labels = [f"C{k}" for k in range(cfg.iterations + 1)] + (["CM"] if refine else [])
    with open(out / "detections.jsonl", "w") as fh:
        for d in dets:
            rec = {"image": name, "class": d.class_id, "score": float(d.score),
                   "polygon": [float(v) for v in d.contour.ravel()]}
            fh.write(json.dumps(rec) + "\n")
    if args.trace:
        with open(out / "trace.jsonl", "w") as fh:
            for i, d in enumerate(dets):
                for lab, c in zip(labels, d.trace):
                    fh.write(json.dumps({"image": name, "instance": i, "iteration": lab,
                                         "class": d.class_id, "score": float(d.score),
                                         "polygon": [float(v) for v in c.ravel()]}) + "\n")
    draw_overlay(image, dets, out / "overlay.png", trace=args.trace)
    print(json.dumps({"detections": len(dets), "out": str(out)}))
    return 0


def cmd_eval(args) -> int:
    if bool(args.checkpoint) == bool(args.predictions):
        raise CLIError("give exactly one of --checkpoint or --predictions")
    samples = datagen.load_dataset(args.data, args.split)
    if not samples:
        raise CLIError(f"split {args.split!r} of {args.data} is empty")
    out = Path(args.out) if args.out else None
    if args.predictions:
        from .annotations import load_annotations

        names = {s.name for s in samples}
        dets = [r for r in load_annotations(args.predictions) if r.image in names]
        if any(r.score is None for r in dets):
            dets = [r if r.score is not None else dataclasses.replace(r, score=1.0) for r in dets]
        H, W = samples[0].image.shape[:2]
        rep = evaluate.evaluate_records(dets, evaluate.samples_to_records(samples), H, W)
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
    else:
        params, meta, _ = training.load_checkpoint(args.checkpoint)
        cfg = _parse_set(Config.from_dict(meta["config"]), args.set)
        refine = int(meta["stage"]) == 2 and not args.no_refine
        _echo(cfg, out, checkpoint=str(args.checkpoint), weights_hash=meta.get("weights_hash"))
        rep = evaluate.evaluate_model(params, cfg, samples, refine=refine,
                                      per_iteration=args.per_iteration)
    print(rep.table())
    if out is not None:
        (out / "report.json").write_text(rep.to_json() + "\n")
        if rep.trace is not None:
            groups = {k: [i] for i, k in enumerate(cfg.kinds)}
            evaluate.plot_trace(rep.trace, out / "per_iteration.svg", groups)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polysnake", description="Recurrent contour instance segmentation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset (PNG + polygon records + manifest)")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seeds", help="seed range A..B (half-open) for a single split named 'all'")
    g.add_argument("--split", action="append", metavar="NAME=A..B", help="named split; repeatable")
    g.add_argument("--kinds", help="comma-separated shape kinds; class ids follow this order")
    g.add_argument("--size", type=int, default=96, help="canvas side in pixels")
    g.add_argument("--max-overlap", type=float, default=0.3, help="max pairwise mask IoU")
    g.set_defaults(func=cmd_gen_data)

    def common(sp):
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override; repeatable")

    t = sub.add_parser("train", help="run stage 1 (ICG+ICD) or stage 2 (MCR)")
    t.add_argument("--data", required=True, help="dataset directory from gen-data")
    t.add_argument("--split", default="train")
    t.add_argument("--stage", type=int, choices=(1, 2), default=1)
    t.add_argument("--out", required=True, help="run directory for checkpoints and logs")
    t.add_argument("--config", help="JSON config file")
    t.add_argument("--init", help="starting checkpoint (required for stage 2)")
    t.add_argument("--resume", help="continue from a checkpoint of the same stage")
    t.add_argument("--steps", type=int, help="stop after this step; the LR schedule still spans the configured horizon (use --set steps=N to change it)")
    common(t)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="detect contours in one image and draw an overlay")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--trace", action="store_true", help="also export and draw C_0..C_K (and C_M)")
    i.add_argument("--no-refine", action="store_true", help="skip the refinement module")
    common(i)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="AP / AP_vol on a dataset split")
    e.add_argument("--checkpoint", help="model to run on the split")
    e.add_argument("--predictions", help="score a polygon-record file instead of running a model "
                                         "(records without a score count as 1.0)")
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="val")
    e.add_argument("--out", help="directory for report.json and the per-iteration plot")
    e.add_argument("--per-iteration", action="store_true", help="mean IoU of every C_k")
    e.add_argument("--no-refine", action="store_true")
    common(e)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (CLIError, ValueError, OSError, KeyError) as e:
        msg = str(e) if not isinstance(e, KeyError) else f"missing key {e}"
        print(json.dumps({"error": type(e).__name__, "message": msg}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
