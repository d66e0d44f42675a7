"""Experiment driver.

Verbs: synth, pretrain, finetune, ablate, eval, cadence-study, visualize.
Exit codes: 0 success, 2 usage/config error, 3 numerical abort (NaN loss).
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_model_checkpoint
from .config import ConfigError, load_experiment_config
from .data import (DatasetError, generate_synthetic_shadow, load_image_png,
                   load_mask_png, load_triplet_dataset, quantize8, save_mask_png,
                   save_image_png, save_triplet_dataset, subset_fraction)
from .evaluation import REGIONS, evaluate_dataset, rgb_to_lab, weight_maps
from .networks import ABLATION_VARIANTS, make_ablation_variant
from .training import TrainingDiverged, finetune, pretrain, run_pretrain_cadence_study

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _common_flags(p):
    p.add_argument("--config", help="experiment TOML file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="override the config output directory")
    p.add_argument("--fraction", type=float, default=None,
                   help="train on a random fraction of the shadow data")


def build_parser():
    parser = argparse.ArgumentParser(prog="shadowfuse",
                                     description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic shadow triplet dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=256)

    p = sub.add_parser("pretrain", help="inpainting pretraining")
    _common_flags(p)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")

    p = sub.add_parser("finetune", help="shadow-removal fine-tuning")
    _common_flags(p)
    p.add_argument("--init", default=None, help="pretraining checkpoint to start from")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")

    p = sub.add_parser("ablate", help="train/evaluate an ablation variant")
    _common_flags(p)
    p.add_argument("--variant", required=True, choices=ABLATION_VARIANTS)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a triplet directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--mask-source", choices=("provided", "otsu"), default="provided")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--out", default="eval_out")

    p = sub.add_parser("cadence-study", help="fine-tune every periodic pretraining checkpoint")
    _common_flags(p)

    p = sub.add_parser("visualize", help="restored image, W1/W2 maps, LAB A/B difference maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--gt", default=None)
    p.add_argument("--diff", action="store_true",
                   help="require the LAB difference maps (needs --gt)")
    p.add_argument("--out", required=True)
    return parser


def _load_config(args, need=()):
    if not args.config:
        raise ConfigError("--config is required for this command")
    cfg = load_experiment_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        if cfg.pretrain is not None:
            cfg.pretrain = replace(cfg.pretrain, seed=args.seed)
        if cfg.finetune is not None:
            cfg.finetune = replace(cfg.finetune, seed=args.seed)
    if args.out is not None:
        cfg.out_dir = args.out
    for section in need:
        if getattr(cfg, section) is None:
            raise ConfigError(f"config has no [{section}] section")
    return cfg


def cmd_synth(args):
    if args.count < 1:
        raise ConfigError("--count must be >= 1")
    triplets = generate_synthetic_shadow(args.seed, args.count, size=args.size)
    base = save_triplet_dataset(args.out, triplets)
    print(f"wrote {len(triplets)} triplets under {base}")
    return EXIT_OK


def cmd_pretrain(args):
    cfg = _load_config(args, need=("pretrain",))
    model = cfg.build_model()
    dataset = cfg.inpaint_dataset()
    out = Path(cfg.out_dir) / "pretrain"
    manifest = pretrain(model, dataset, cfg.pretrain, out, resume_from=args.resume)
    print(f"pretrain completed: {out / 'manifest.json'}")
    print(f"final checkpoint: {manifest.final_checkpoint}")
    return EXIT_OK


def cmd_finetune(args):
    cfg = _load_config(args, need=("finetune",))
    train, _ = cfg.shadow_datasets()
    if args.fraction is not None:
        train = subset_fraction(train, args.fraction, cfg.seed)
    init = args.init or cfg.finetune_init_checkpoint
    model_or_ckpt = init if init else cfg.build_model()
    out = Path(cfg.out_dir) / "finetune"
    manifest = finetune(model_or_ckpt, train, cfg.finetune, out, resume_from=args.resume)
    print(f"finetune completed on {len(train)} triplets: {out / 'manifest.json'}")
    print(f"final checkpoint: {manifest.final_checkpoint}")
    return EXIT_OK


def _merge_ablation_csv(path, variant, report):
    rows = {}
    if path.is_file():
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                rows[(row["variant"], row["region"])] = row
    for region in REGIONS:
        m = report.regions[region]
        rows[(variant, region)] = {
            "variant": variant, "region": region,
            "rmse": repr(m["rmse"]), "psnr": repr(m["psnr"]), "ssim": repr(m["ssim"]),
        }
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["variant", "region", "rmse", "psnr", "ssim"])
        writer.writeheader()
        for key in sorted(rows):
            writer.writerow(rows[key])


def cmd_ablate(args):
    cfg = _load_config(args, need=("finetune",))
    variant = args.variant
    train, holdout = cfg.shadow_datasets()
    out = Path(cfg.out_dir) / "ablate"
    out.mkdir(parents=True, exist_ok=True)

    if variant in ("zero_shadow_branch", "zero_inpaint_branch"):
        # inference-time interception only: no retraining or fine-tuning
        if cfg.ablate_base_checkpoint:
            base, _, _ = load_model_checkpoint(cfg.ablate_base_checkpoint)
        else:
            base = cfg.build_model()
        model = make_ablation_variant(base, variant)
        trained = False
    else:
        base = cfg.build_model()
        model = make_ablation_variant(base, variant, seed=cfg.seed)
        ft_cfg = replace(cfg.finetune, iterations=cfg.ablate_iterations)
        finetune(model, train, ft_cfg, out / f"train_{variant}")
        trained = True

    report = evaluate_dataset(model, holdout, mask_source=cfg.eval.mask_source)
    report.to_json(out / f"report_{variant}.json")
    report.to_csv(out / f"report_{variant}.csv")
    _merge_ablation_csv(out / "ablation_report.csv", variant, report)
    print(f"ablate {variant}: trained={trained}, report under {out}")
    for region in REGIONS:
        m = report.regions[region]
        print(f"  {region:>10}: rmse {m['rmse']:.4f}  psnr {m['psnr']:.2f}  ssim {m['ssim']:.4f}")
    return EXIT_OK


def cmd_eval(args):
    model, _, _ = load_model_checkpoint(args.checkpoint)
    dataset = load_triplet_dataset(args.data, args.split, image_size=args.size)
    report = evaluate_dataset(model, dataset, mask_source=args.mask_source)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.to_json(out / "report.json")
    report.to_csv(out / "report.csv")
    print(f"evaluated {report.n_images} images ({report.n_skipped} skipped), "
          f"mask_source={report.mask_source}")
    for region in REGIONS:
        m = report.regions[region]
        print(f"  {region:>10}: rmse {m['rmse']:.4f}  psnr {m['psnr']:.2f}  ssim {m['ssim']:.4f}")
    return EXIT_OK


def cmd_cadence_study(args):
    cfg = _load_config(args, need=("pretrain", "finetune"))
    model = cfg.build_model()
    inpaint = cfg.inpaint_dataset()
    train, holdout = cfg.shadow_datasets()
    out = Path(cfg.out_dir) / "cadence"
    rows = run_pretrain_cadence_study(inpaint, train, cfg.pretrain.checkpoint_every,
                                      cfg.pretrain, cfg.finetune, out,
                                      model=model, shadow_val=holdout)
    print(f"cadence study: {len(rows)} checkpoints, report under {out}")
    for r in rows:
        print(f"  iter {r['iter']:>8}: inpaint_psnr {r['inpaint_psnr']:.2f}  "
              f"rmse_shadow {r['rmse_shadow']:.4f}  rmse_nonshadow {r['rmse_nonshadow']:.4f}")
    return EXIT_OK


def _save_gray_png(path, gray):
    save_mask_png(path, np.clip(gray, 0.0, 1.0))


def cmd_visualize(args):
    if args.diff and not args.gt:
        raise ConfigError("--diff requires --gt")
    model, _, _ = load_model_checkpoint(args.checkpoint)
    image = load_image_png(args.image)
    mask = load_mask_png(args.mask)
    if image.shape[:2] != mask.shape:
        raise ConfigError(f"image {image.shape[:2]} and mask {mask.shape} dims differ")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    if model.kind == "fusion":
        restored, w1, w2 = model.forward(image, mask)
        g1, g2 = weight_maps(w1, w2, out_hw=image.shape[:2])
        _save_gray_png(out / "w1.png", g1)
        _save_gray_png(out / "w2.png", g2)
        written += ["w1.png", "w2.png"]
    else:
        restored = model.restore(image, mask)
    restored = quantize8(restored)  # difference maps describe the written PNG
    save_image_png(out / "restored.png", restored)
    written.append("restored.png")

    if args.gt:
        gt = load_image_png(args.gt)
        if gt.shape != image.shape:
            raise ConfigError("ground truth dims differ from the input image")
        diff = np.abs(rgb_to_lab(restored) - rgb_to_lab(gt))
        for channel, name in ((1, "diff_a.png"), (2, "diff_b.png")):
            d = diff[..., channel]
            peak = d.max()
            _save_gray_png(out / name, d / peak if peak > 0 else d)
            written.append(name)
    print(f"wrote {len(written)} PNGs to {out}: {', '.join(sorted(written))}")
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "ablate": cmd_ablate,
    "eval": cmd_eval,
    "cadence-study": cmd_cadence_study,
    "visualize": cmd_visualize,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, DatasetError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
