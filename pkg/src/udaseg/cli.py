"""Command-line entry point: ``udaseg <command> [options]``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import data, fusion, grid, imageio, metrics, superpixel, teacher, transfer
from .config import RunConfig, load_config
from .errors import (
    ConfigError,
    ContractError,
    IngestionError,
    InvalidInputError,
    NumericError,
    ShapeError,
)
from .model import NetConfig, SegNet, grad_check

GRADCHECK_LIMIT = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _net_from_params(params: dict) -> tuple[SegNet, dict]:
    try:
        w1, head = params["enc1.w"], params["head.w"]
    except KeyError as exc:
        raise IngestionError(f"checkpoint lacks network tensor {exc}") from exc
    cfg = NetConfig(input_channels=w1.shape[1], classes=head.shape[0], base_width=w1.shape[0])
    return SegNet(cfg), params


def _load_net(path, which):
    from .pipeline import load_params

    return _net_from_params(load_params(path, which))


# --- commands -----------------------------------------------------------------


def cmd_synth(a):
    src, tgt, ev = data.generate_synthetic_pair(a.seed, a.classes, a.n_images, a.size, a.n_eval)
    data.save_pair(a.out, src, tgt, ev)
    print(f"wrote {len(src)} source, {len(tgt)} target, {len(ev)} eval images to {a.out}")


def cmd_transfer(a):
    src = data.load_images(a.src)
    pool = data.load_images(a.ref).images if a.method in ("histogram_match", "stats_transfer") else []
    out = Path(a.out)
    for i, (x, stem) in enumerate(zip(src.images, src.stems)):
        y = transfer.transfer(a.method, x, pool, [a.seed, i], stem, a.precomputed)
        imageio.write_image(out / f"{stem}.png", y)
    print(f"wrote {len(src)} transferred images to {out}")


def cmd_fuse(a):
    src = data.load_images(a.source)
    out = Path(a.out)
    if a.variant == "efficient":
        net, params = _load_net(a.checkpoint, "student")
        fp = fusion.FusionParams(a.c, a.metric, a.direction, a.tau, a.patch_size)
    else:
        from .pipeline import load_params

        fc = load_params(a.checkpoint, "fusion") if a.checkpoint else {}
        if "fusion.w" not in fc:
            fc = fusion.init_fusion_conv(src.images[0].shape[-1])
    for stem, x_s in zip(src.stems, src.images):
        path = Path(a.transferred) / f"{stem}.png"
        if not path.is_file():
            raise IngestionError(f"{path}: no transferred image for source {stem!r}")
        x_st = imageio.read_image(path)
        if a.variant == "efficient":
            x_mix, mask = fusion.efficient_fuse(net, params, x_s, x_st, fp)
            imageio.write_mask(out / "masks" / f"{stem}.png", mask)
        else:
            x_mix, _ = fusion.cnn_fuse(fc, x_s, x_st)
        imageio.write_image(out / "images" / f"{stem}.png", x_mix)
    print(f"wrote {len(src)} fused images to {out}")


def cmd_pseudo(a):
    net, params = _load_net(a.checkpoint, "teacher")
    ds = data.load_images(a.images)
    out = Path(a.out)
    state = teacher.TeacherState(params, 1.0)
    prw = superpixel.PrwParams(a.n_superpixels, a.compactness, a.iterations, a.boundary_width, a.beta) if a.prw else None
    rows = []
    for stem, x in zip(ds.stems, ds.images):
        labels, probs = teacher.pseudo_label(net, state, x)
        w_base = teacher.quality_scalar(probs, a.delta)
        rows.append([stem, repr(w_base)])
        imageio.write_labels(out / "labels" / f"{stem}.png", labels)
        if prw is not None:
            wmap = superpixel.regional_weight_map(w_base, superpixel.prw_boundary(x, prw, a.seed), prw.beta)
            (out / "weights").mkdir(parents=True, exist_ok=True)
            np.save(out / "weights" / f"{stem}.npy", wmap)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "quality.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stem", "w_base"])
        w.writerows(rows)
    print(f"wrote pseudo-labels for {len(ds)} images to {out}")


def cmd_superpix(a):
    ds = data.load_images(a.images)
    out = Path(a.out)
    p = superpixel.PrwParams(a.n_superpixels, a.compactness, a.iterations, a.boundary_width, 0.5)
    for stem, x in zip(ds.stems, ds.images):
        sp = superpixel.slic_superpixels(x, p, a.seed)
        imageio.write_uint16(out / "superpixels" / f"{stem}.png", sp)
        imageio.write_mask(out / "boundaries" / f"{stem}.png", superpixel.boundary_mask(sp, p.boundary_width))
    print(f"wrote superpixels for {len(ds)} images to {out}")


def cmd_train(a):
    from .pipeline import train

    cfg = load_config(a.config) if a.config else RunConfig()
    changes = {}
    if a.out:
        changes["output_dir"] = a.out
    if a.seed is not None:
        changes["seed"] = a.seed
    if a.steps is not None:
        changes["total_steps"] = a.steps
    cfg = cfg.replace(**changes) if changes else cfg
    res = train(cfg, resume_from=a.resume, figures=not a.no_figures)
    print(f"target mIoU {res.report.miou:.6f}  mF1 {res.report.mf1:.6f}  ({res.output_dir})")


def cmd_eval(a):
    preds = imageio.list_pngs(a.pred)
    if not preds:
        raise IngestionError(f"{a.pred}: no prediction PNGs")
    cm = metrics.new_confusion(a.classes)
    for p in preds:
        g = Path(a.gt) / p.name
        if not g.is_file():
            raise IngestionError(f"{g}: missing ground truth for prediction {p.name}")
        try:
            cm = metrics.accumulate(cm, imageio.read_labels(p), imageio.read_labels(g))
        except ShapeError as exc:
            raise ShapeError(f"{p.name}: {exc}") from exc
    rep = metrics.iou_f1(cm)
    metrics.write_report(a.out, rep)
    if a.figure:
        from . import plotting

        plotting.plot_class_scores(rep, Path(a.out).with_suffix(".png"))
    print(f"mIoU {rep.miou:.6f}  mF1 {rep.mf1:.6f}")


def cmd_infer(a):
    net, params = _load_net(a.checkpoint, a.which)
    from .plotting import colorize

    ds = data.load_images(a.images)
    out = Path(a.out)
    for stem, x in zip(ds.stems, ds.images):
        logits, _ = net.forward(params, x)
        labels = grid.argmax_labels(logits)
        imageio.write_labels(out / "labels" / f"{stem}.png", labels)
        imageio.write_image(out / "color" / f"{stem}.png", colorize(labels))
    print(f"wrote predictions for {len(ds)} images to {out}")


def cmd_gradcheck(a):
    cfg = NetConfig(a.channels, a.classes, a.width, "none" if a.linear else "relu")
    err = grad_check(cfg, a.seed, a.size)
    print(f"max relative error {err:.3e}")
    if not err <= GRADCHECK_LIMIT:
        raise NumericError(f"gradient check failed: {err:.3e} > {GRADCHECK_LIMIT:.0e}")


def cmd_ablate(a):
    from .ablation import AblationSpec, run_ablation

    cfg = load_config(a.config) if a.config else RunConfig()
    if a.steps is not None:
        cfg = cfg.replace(total_steps=a.steps)
    rows = run_ablation(AblationSpec(cfg, a.seeds, a.out))
    for r in rows:
        print(f"{r.variant:22s} mIoU {r.mean:.4f} ± {r.stdev:.4f}")


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="udaseg", description="Hybrid self-training for domain-adaptive segmentation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic two-domain dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--n-images", type=int, default=200)
    s.add_argument("--n-eval", type=int, default=50)
    s.add_argument("--size", type=int, default=64)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("transfer", help="style-transfer a directory of images")
    s.add_argument("--src", required=True, help="source image directory")
    s.add_argument("--ref", help="target reference image directory")
    s.add_argument("--out", required=True)
    s.add_argument("--method", choices=transfer.METHODS, default="histogram_match")
    s.add_argument("--precomputed", help="directory of precomputed transfers")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_transfer)

    s = sub.add_parser("fuse", help="fuse source images with their transferred versions")
    s.add_argument("--source", required=True)
    s.add_argument("--transferred", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--checkpoint", help="training checkpoint (student for efficient, fusion conv for cnn)")
    s.add_argument("--variant", choices=("efficient", "cnn"), default="efficient")
    s.add_argument("--patch-size", type=int, default=8)
    s.add_argument("--c", type=float, default=50.0)
    s.add_argument("--metric", choices=fusion.METRICS, default="entropy")
    s.add_argument("--direction", choices=fusion.DIRECTIONS, help="default: low for entropy, high for snd")
    s.add_argument("--tau", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("pseudo", help="teacher pseudo-labels, quality weights and PRW maps")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--images", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--delta", type=float, default=0.968)
    s.add_argument("--prw", action="store_true", help="also write boundary-boosted weight maps (.npy)")
    s.add_argument("--beta", type=float, default=0.5)
    s.add_argument("--n-superpixels", type=int, default=0)
    s.add_argument("--compactness", type=float, default=10.0)
    s.add_argument("--iterations", type=int, default=10)
    s.add_argument("--boundary-width", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_pseudo)

    s = sub.add_parser("superpix", help="SLIC superpixel ids and boundary masks")
    s.add_argument("--images", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--n-superpixels", type=int, default=0)
    s.add_argument("--compactness", type=float, default=10.0)
    s.add_argument("--iterations", type=int, default=10)
    s.add_argument("--boundary-width", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_superpix)

    s = sub.add_parser("train", help="run the training loop from a JSON config")
    s.add_argument("--config", help="RunConfig JSON (defaults when omitted)")
    s.add_argument("--out", help="override output_dir")
    s.add_argument("--seed", type=int)
    s.add_argument("--steps", type=int, help="override total_steps")
    s.add_argument("--resume", help="checkpoint to resume from")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="metrics CSV from prediction and label directories")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--classes", type=int, required=True)
    s.add_argument("--out", required=True, help="report CSV path")
    s.add_argument("--figure", action="store_true", help="also write a per-class bar chart")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", help="per-image class-index and colourised predictions")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--images", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--which", choices=("teacher", "student"), default="teacher")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("gradcheck", help="finite-difference check of the network gradients")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--channels", type=int, default=3)
    s.add_argument("--classes", type=int, default=3)
    s.add_argument("--width", type=int, default=4)
    s.add_argument("--size", type=int, default=8)
    s.add_argument("--linear", action="store_true", help="disable activations")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("ablate", help="variant x seed ablation table")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    s.add_argument("--steps", type=int)
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (IngestionError, ShapeError, InvalidInputError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
