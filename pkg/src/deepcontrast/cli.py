"""Command-line interface: synth, train, train-contour, infer, crf, eval,
segment."""

import argparse
import os
import sys

import numpy as np

from .config import PipelineConfig, load_config
from .data import generate_synthetic_dataset, load_manifest
from .imageio import read_image, read_mask, write_pgm, write_pgm16
from .metrics import mae
from .pipeline import (
    DEFAULT_VARIANTS, Models, VARIANTS, evaluate, infer, run_variant,
    spec_from_config,
)
from .segmentation import multi_level_segment
from .training import alternate_train, train_contour
from .weights import load_weights


def _load_config(path):
    return load_config(path) if path else PipelineConfig().validate()


def _load_models(cfg, weights_dir):
    msfcn = load_weights(os.path.join(weights_dir, "msfcn.dclw"))
    mlp = load_weights(os.path.join(weights_dir, "mlp.dclw"))
    contour_path = os.path.join(weights_dir, "contour.dclw")
    contour = load_weights(contour_path) if os.path.exists(contour_path) else None
    return Models(config=cfg, spec=spec_from_config(cfg), msfcn=msfcn,
                  mlp=mlp, contour=contour)


def cmd_synth(args):
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    manifest = generate_synthetic_dataset(args.count, seed, args.out,
                                          size=cfg.image_size,
                                          split=args.split)
    print(f"wrote {len(manifest)} image/mask pairs under {args.out}")


def cmd_train(args):
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    manifest = load_manifest(args.manifest)
    alternate_train(cfg, manifest, args.out, log=print)
    print(f"weights saved under {args.out}")


def cmd_train_contour(args):
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    manifest = load_manifest(args.manifest)
    train_contour(cfg, manifest, args.out, log=print)
    print(f"contour weights saved under {args.out}")


def cmd_infer(args):
    cfg = _load_config(args.config)
    models = _load_models(cfg, args.weights)
    os.makedirs(args.out, exist_ok=True)
    image = read_image(args.image)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    if args.variant:
        result = {args.variant: run_variant(models, image, args.variant)}
    else:
        want = ["s1", "s2", "fused"]
        if models.contour is not None:
            want.append("contour")
        if not args.no_crf:
            want.append("crf")
        result = infer(models, image, want=want,
                       multiscale=args.multiscale == "on",
                       use_crf=not args.no_crf)
    for name, m in result.items():
        path = os.path.join(args.out, f"{stem}_{name}.pgm")
        write_pgm(path, m)
        print(f"wrote {path}")


def cmd_crf(args):
    cfg = _load_config(args.config)
    models = _load_models(cfg, args.weights)
    os.makedirs(args.out, exist_ok=True)
    image = read_image(args.image)
    refined = infer(models, image, want=("crf",))["crf"]
    stem = os.path.splitext(os.path.basename(args.image))[0]
    path = os.path.join(args.out, f"{stem}_crf.pgm")
    write_pgm(path, refined)
    print(f"wrote {path}")
    if args.gt:
        print(f"MAE vs ground truth: {mae(refined, read_mask(args.gt)):.4f}")


def cmd_eval(args):
    cfg = _load_config(args.config)
    models = _load_models(cfg, args.weights)
    manifest = load_manifest(args.manifest)
    variants = args.variant or list(DEFAULT_VARIANTS)
    for v in variants:
        if v not in VARIANTS:
            sys.exit(f"unknown variant '{v}'; choose from {sorted(VARIANTS)}")
    if args.no_crf:
        variants = [v for v in variants if "crf" not in v]
    if args.multiscale == "on":
        variants = [v if v != "fused" else "fused_ms" for v in variants]
    evaluate(models, manifest, args.out, variants=variants,
             dataset_name=args.dataset_name, log=print)
    print(f"reports written under {args.out}")


def cmd_segment(args):
    cfg = _load_config(args.config)
    image = read_image(args.image)
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    levels = multi_level_segment(image, cfg.seg_levels())
    for i, level in enumerate(levels):
        path = os.path.join(args.out, f"{stem}_level{i}.pgm")
        write_pgm16(path, level.label_map)
        print(f"wrote {path} ({level.num_segments} segments)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="deepcontrast",
        description="Two-stream saliency detection pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, weights=False, manifest=False, image=False):
        p.add_argument("--config", help="pipeline config file (key = value)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        if weights:
            p.add_argument("--weights", required=True,
                           help="directory holding msfcn.dclw / mlp.dclw")
        if manifest:
            p.add_argument("--manifest", required=True,
                           help="image<TAB>mask manifest file")
        if image:
            p.add_argument("--image", required=True, help="input PPM/PGM image")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--split", default="train")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="alternate training of both streams")
    common(p, manifest=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-contour", help="retrain MS-FCN on contours")
    common(p, manifest=True)
    p.set_defaults(func=cmd_train_contour)

    p = sub.add_parser("infer", help="run inference on one image")
    common(p, weights=True, image=True)
    p.add_argument("--variant", choices=sorted(VARIANTS), default=None)
    p.add_argument("--multiscale", choices=("on", "off"), default="off")
    p.add_argument("--no-crf", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("crf", help="CRF-refine the fused map for one image")
    common(p, weights=True, image=True)
    p.add_argument("--gt", help="optional ground-truth mask for an MAE readout")
    p.set_defaults(func=cmd_crf)

    p = sub.add_parser("eval", help="evaluate variants over a manifest")
    common(p, weights=True, manifest=True)
    p.add_argument("--variant", action="append", default=None,
                   help="variant name (repeatable)")
    p.add_argument("--multiscale", choices=("on", "off"), default="off")
    p.add_argument("--no-crf", action="store_true")
    p.add_argument("--dataset-name", default="dataset")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("segment", help="write multi-level label maps")
    common(p, image=True)
    p.set_defaults(func=cmd_segment)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
