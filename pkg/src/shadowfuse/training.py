"""Two-stage training: inpainting pretraining, then shadow fine-tuning.

Seed discipline: one master seed, per-component streams derived through
SeedSequence([seed, stream, iteration]). Because every iteration's
randomness is derived statelessly, resuming from a checkpoint reproduces an
uninterrupted run bit for bit; optimizer state rides along in checkpoints.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np

from . import nn
from .checkpoint import load_archive, load_model_checkpoint, save_model_checkpoint
from .data import sample_irregular_mask
from .evaluation import evaluate_dataset, psnr
from .losses import (FeatureExtractor, LossWeights, PatchDiscriminator,
                     batch_masked_l1_and_grad, disc_gan_grads, gan_losses,
                     gen_gan_grad, perceptual_loss_and_grad, style_loss_and_grad)

STREAM_DATA = 1
STREAM_MASK = 2
STREAM_DISC = 3
STREAM_EXTRACTOR = 4

CURVE_FIELDS = ("iter", "loss_total", "loss_l1", "loss_gan", "loss_perc", "loss_style")


class TrainingDiverged(RuntimeError):
    """Raised when a loss goes non-finite; carries the abort manifest."""

    def __init__(self, message, manifest=None):
        super().__init__(message)
        self.manifest = manifest


def stream_rng(seed, stream, *extra):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), *map(int, extra)]))


@dataclass(frozen=True)
class TrainConfig:
    stage: str
    iterations: int
    batch_size: int = 8
    learning_rate: float = 5e-5
    seed: int = 0
    checkpoint_every: int = 500_000
    loss_weights: LossWeights = field(default_factory=LossWeights)
    log_every: int = 1
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    gan_mode: str = "nonsaturating"
    resample_masks: bool = False
    mask_coverage: tuple = (0.1, 0.4)
    disc_base_channels: int = 8
    extractor_base_channels: int = 8

    def __post_init__(self):
        if self.stage not in ("pretrain", "finetune"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.iterations <= 0:
            raise ValueError("iterations must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.checkpoint_every <= 0 or self.log_every <= 0:
            raise ValueError("checkpoint_every and log_every must be > 0")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")

    def to_dict(self):
        d = asdict(self)
        d["loss_weights"] = asdict(self.loss_weights)
        d["betas"] = list(self.betas)
        d["mask_coverage"] = list(self.mask_coverage)
        return d

    @staticmethod
    def from_dict(d):
        d = dict(d)
        d["loss_weights"] = LossWeights(**d["loss_weights"])
        d["betas"] = tuple(d["betas"])
        d["mask_coverage"] = tuple(d["mask_coverage"])
        return TrainConfig(**d)


@dataclass
class RunManifest:
    stage: str
    status: str
    config: dict
    checkpoint_paths: list
    final_checkpoint: str
    loss_curve: list
    wall_clock: dict
    started_iteration: int = 0
    ended_iteration: int = 0

    def to_dict(self):
        return asdict(self)

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    def curve_to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(CURVE_FIELDS)
            for row in self.loss_curve:
                writer.writerow([repr(row[k]) if isinstance(row[k], float) else row[k]
                                 for k in CURVE_FIELDS])
        return path

    @staticmethod
    def from_json(path):
        return RunManifest(**json.loads(Path(path).read_text()))


def _forward(model, images, masks, cache=False):
    out = model.forward_batch(images, masks, cache)
    return out[0] if model.kind == "fusion" else out


def _batch_indices(rng, n, batch_size):
    if batch_size <= n:
        return rng.choice(n, size=batch_size, replace=False)
    return rng.choice(n, size=batch_size, replace=True)


def _curve_row(t, total, l1, gan, perc, style):
    return {"iter": int(t), "loss_total": float(total), "loss_l1": float(l1),
            "loss_gan": float(gan), "loss_perc": float(perc), "loss_style": float(style)}


def _write_manifest(out_dir, manifest):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest.to_json(out_dir / "manifest.json")
    manifest.curve_to_csv(out_dir / "loss_curve.csv")
    return manifest


def _abort(out_dir, manifest, t, component):
    manifest.status = "aborted_nan"
    manifest.ended_iteration = t
    manifest.wall_clock["ended_unix"] = time.time()
    manifest.wall_clock["seconds"] = (manifest.wall_clock["ended_unix"]
                                      - manifest.wall_clock["started_unix"])
    _write_manifest(out_dir, manifest)
    raise TrainingDiverged(
        f"non-finite {component} at iteration {t}; last-good checkpoints retained",
        manifest=manifest)


def pretrain(model, inpaint_dataset, config, out_dir, discriminator=None,
             extractor=None, resume_from=None):
    """Inpainting pretraining with L1 + GAN + perceptual + style losses.

    Alternates a discriminator step and a generator step per iteration.
    Periodic checkpoints land every ``config.checkpoint_every`` iterations,
    plus a final one; a non-finite loss aborts with the last good checkpoint
    retained on disk.
    """
    if config.stage != "pretrain":
        raise ValueError("config.stage must be 'pretrain'")
    data = list(inpaint_dataset)
    if not data:
        raise ValueError("inpaint dataset is empty")
    clean = np.stack([s.clean for s in data])
    masks_fixed = np.stack([s.mask for s in data])
    size = clean.shape[1]

    disc = discriminator or PatchDiscriminator(
        in_channels=3, base_channels=config.disc_base_channels,
        seed=int(stream_rng(config.seed, STREAM_DISC).integers(2 ** 31)))
    ext = extractor or FeatureExtractor(
        seed=int(stream_rng(config.seed, STREAM_EXTRACTOR).integers(2 ** 31)),
        base_channels=config.extractor_base_channels)
    opt_g = nn.Adam(model.param_items(), config.learning_rate, config.betas, config.adam_eps)
    opt_d = nn.Adam(disc.param_items(), config.learning_rate, config.betas, config.adam_eps)

    start_iter = 0
    curve = []
    ckpt_paths = []
    if resume_from is not None:
        arrays, meta = load_archive(resume_from)
        nn.set_params(model, {k[4:]: v for k, v in arrays.items() if k.startswith("gen/")})
        nn.set_params(disc, {k[5:]: v for k, v in arrays.items() if k.startswith("disc/")})
        nn.set_params(ext, {k[4:]: v for k, v in arrays.items() if k.startswith("ext/")})
        opt_g.load_state_arrays(arrays, meta["opt_g_t"], "opt_g/")
        opt_d.load_state_arrays(arrays, meta["opt_d_t"], "opt_d/")
        start_iter = int(meta["iteration"])
        curve = list(meta.get("loss_curve", []))
        ckpt_paths = list(meta.get("checkpoint_paths", []))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lw = config.loss_weights
    manifest = RunManifest(
        stage="pretrain", status="running", config=config.to_dict(),
        checkpoint_paths=ckpt_paths, final_checkpoint="", loss_curve=curve,
        wall_clock={"started_unix": time.time()}, started_iteration=start_iter)

    def save(path, t):
        extra = {f"disc/{k}": v for k, v in nn.get_params(disc).items()}
        extra.update({f"ext/{k}": v for k, v in nn.get_params(ext).items()})
        extra.update(opt_g.state_arrays("opt_g/"))
        extra.update(opt_d.state_arrays("opt_d/"))
        meta = {"iteration": t, "opt_g_t": opt_g.t, "opt_d_t": opt_d.t,
                "stage": "pretrain", "train_config": config.to_dict(),
                "loss_curve": curve, "checkpoint_paths": ckpt_paths}
        return str(save_model_checkpoint(path, model, extra, meta))

    for t in range(start_iter + 1, config.iterations + 1):
        idx = _batch_indices(stream_rng(config.seed, STREAM_DATA, t), len(data),
                             config.batch_size)
        images = clean[idx]
        if config.resample_masks:
            mask_rng = stream_rng(config.seed, STREAM_MASK, t)
            masks = np.stack([
                sample_irregular_mask(int(mask_rng.integers(2 ** 31)), size, size,
                                      config.mask_coverage)
                for _ in idx])
        else:
            masks = masks_fixed[idx]
        corrupted = images * (1.0 - masks)[..., None]

        fake = _forward(model, corrupted, masks, cache=True)

        # discriminator step
        disc.zero_grad()
        d_real = disc.forward(images, cache=True)
        g_real, _ = disc_gan_grads(d_real, d_real, config.gan_mode)
        disc.backward(g_real)
        d_fake = disc.forward(fake, cache=True)
        _, g_fake = disc_gan_grads(d_fake, d_fake, config.gan_mode)
        disc.backward(g_fake)
        _, disc_val = gan_losses(d_real, d_fake, config.gan_mode)
        if not np.isfinite(disc_val):
            _abort(out_dir, manifest, t, "discriminator loss")
        opt_d.step()

        # generator step
        model.zero_grad()
        l1_val, d_l1 = batch_masked_l1_and_grad(fake, images, masks)
        perc_val, d_perc = perceptual_loss_and_grad(ext, fake, images)
        style_val, d_style = style_loss_and_grad(ext, fake, images, masks)
        d_fake2 = disc.forward(fake, cache=True)
        gen_val, _ = gan_losses(d_fake2, d_fake2, config.gan_mode)
        d_gan = disc.backward(gen_gan_grad(d_fake2, config.gan_mode))
        total = (lw.lambda1 * l1_val + lw.lambda2 * gen_val
                 + lw.lambda3 * perc_val + lw.lambda4 * style_val)
        if not np.isfinite(total):
            _abort(out_dir, manifest, t, "generator loss")
        d_fake_total = (lw.lambda1 * d_l1 + lw.lambda2 * d_gan
                        + lw.lambda3 * d_perc + lw.lambda4 * d_style)
        model.backward_batch(d_fake_total)
        opt_g.step()

        if t % config.log_every == 0:
            curve.append(_curve_row(t, total, l1_val, gen_val, perc_val, style_val))
        if t % config.checkpoint_every == 0:
            ckpt_paths.append(save(out_dir / f"ckpt_{t:08d}.sfck", t))

    manifest.final_checkpoint = save(out_dir / "ckpt_final.sfck", config.iterations)
    manifest.status = "completed"
    manifest.ended_iteration = config.iterations
    manifest.wall_clock["ended_unix"] = time.time()
    manifest.wall_clock["seconds"] = (manifest.wall_clock["ended_unix"]
                                      - manifest.wall_clock["started_unix"])
    return _write_manifest(out_dir, manifest)


def finetune(model_or_checkpoint, shadow_dataset, config, out_dir, resume_from=None):
    """Shadow-removal fine-tuning: masked L1 only, same checkpoint contract.

    Accepts a model (the random-init arm) or a pretraining checkpoint path.
    Discriminator arrays found in the source checkpoint are carried through
    untouched (never updated by this stage).
    """
    if config.stage != "finetune":
        raise ValueError("config.stage must be 'finetune'")
    data = list(shadow_dataset)
    if not data:
        raise ValueError("shadow dataset is empty")
    shadows = np.stack([t.shadow for t in data])
    frees = np.stack([t.shadow_free for t in data])
    masks = np.stack([t.mask for t in data])

    carried = {}
    if isinstance(model_or_checkpoint, (str, Path)):
        model, arrays, _ = load_model_checkpoint(model_or_checkpoint)
        carried = {k: v for k, v in arrays.items()
                   if k.startswith(("disc/", "opt_d/", "ext/"))}
    else:
        model = model_or_checkpoint

    opt_g = nn.Adam(model.param_items(), config.learning_rate, config.betas, config.adam_eps)
    start_iter = 0
    curve = []
    ckpt_paths = []
    if resume_from is not None:
        arrays, meta = load_archive(resume_from)
        nn.set_params(model, {k[4:]: v for k, v in arrays.items() if k.startswith("gen/")})
        opt_g.load_state_arrays(arrays, meta["opt_g_t"], "opt_g/")
        carried = {k: v for k, v in arrays.items()
                   if k.startswith(("disc/", "opt_d/", "ext/"))}
        start_iter = int(meta["iteration"])
        curve = list(meta.get("loss_curve", []))
        ckpt_paths = list(meta.get("checkpoint_paths", []))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        stage="finetune", status="running", config=config.to_dict(),
        checkpoint_paths=ckpt_paths, final_checkpoint="", loss_curve=curve,
        wall_clock={"started_unix": time.time()}, started_iteration=start_iter)

    def save(path, t):
        extra = dict(carried)
        extra.update(opt_g.state_arrays("opt_g/"))
        meta = {"iteration": t, "opt_g_t": opt_g.t, "stage": "finetune",
                "train_config": config.to_dict(), "loss_curve": curve,
                "checkpoint_paths": ckpt_paths}
        return str(save_model_checkpoint(path, model, extra, meta))

    lam = config.loss_weights.lambda1
    for t in range(start_iter + 1, config.iterations + 1):
        idx = _batch_indices(stream_rng(config.seed, STREAM_DATA, t), len(data),
                             config.batch_size)
        pred = _forward(model, shadows[idx], masks[idx], cache=True)
        l1_val, d_l1 = batch_masked_l1_and_grad(pred, frees[idx], masks[idx])
        total = lam * l1_val
        if not np.isfinite(total):
            _abort(out_dir, manifest, t, "l1 loss")
        model.zero_grad()
        model.backward_batch(lam * d_l1)
        opt_g.step()
        if t % config.log_every == 0:
            curve.append(_curve_row(t, total, l1_val, 0.0, 0.0, 0.0))
        if t % config.checkpoint_every == 0:
            ckpt_paths.append(save(out_dir / f"ckpt_{t:08d}.sfck", t))

    manifest.final_checkpoint = save(out_dir / "ckpt_final.sfck", config.iterations)
    manifest.status = "completed"
    manifest.ended_iteration = config.iterations
    manifest.wall_clock["ended_unix"] = time.time()
    manifest.wall_clock["seconds"] = (manifest.wall_clock["ended_unix"]
                                      - manifest.wall_clock["started_unix"])
    return _write_manifest(out_dir, manifest)


def inpaint_psnr(model, inpaint_dataset):
    """Mean PSNR of restored vs clean over an inpainting validation split."""
    vals = []
    for s in inpaint_dataset:
        vals.append(psnr(model.restore(s.corrupted, s.mask), s.clean))
    return math.fsum(vals) / len(vals)


def run_pretrain_cadence_study(inpaint_dataset, shadow_dataset, cadence,
                               pretrain_config, finetune_config, out_dir,
                               model=None, inpaint_val=None, shadow_val=None):
    """Fine-tune every periodic pretraining checkpoint and pair the curves.

    For each checkpoint saved every ``cadence`` iterations: inpainting PSNR
    on a validation split, then shadow / non-shadow RMSE after fine-tuning a
    copy. Returns rows {iter, inpaint_psnr, rmse_shadow, rmse_nonshadow}
    sorted by pretrain iteration, and writes cadence_report.{json,csv}.
    """
    if pretrain_config.iterations % cadence != 0:
        raise ValueError("cadence must divide the pretraining iteration count")
    from .networks import FusionNet, FusionNetConfig  # local import to avoid cycle
    out_dir = Path(out_dir)
    if model is None:
        model = FusionNet(FusionNetConfig.default(base_channels=8), seed=pretrain_config.seed)
    if inpaint_val is None:
        inpaint_val = inpaint_dataset
    if shadow_val is None:
        shadow_val = shadow_dataset
    pre_cfg = replace(pretrain_config, checkpoint_every=cadence)
    manifest = pretrain(model, inpaint_dataset, pre_cfg, out_dir / "pretrain")

    rows = []
    for path in manifest.checkpoint_paths:
        ckpt_model, _, meta = load_model_checkpoint(path)
        it = int(meta["iteration"])
        ip = inpaint_psnr(ckpt_model, inpaint_val)
        ft_manifest = finetune(path, shadow_dataset, finetune_config,
                               out_dir / f"finetune_{it:08d}")
        ft_model, _, _ = load_model_checkpoint(ft_manifest.final_checkpoint)
        report = evaluate_dataset(ft_model, shadow_val, mask_source="provided")
        rows.append({"iter": it,
                     "inpaint_psnr": ip,
                     "rmse_shadow": report.regions["shadow"]["rmse"],
                     "rmse_nonshadow": report.regions["non_shadow"]["rmse"]})
    rows.sort(key=lambda r: r["iter"])
    (out_dir / "cadence_report.json").write_text(
        json.dumps(rows, indent=2, sort_keys=True) + "\n")
    with open(out_dir / "cadence_report.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iter", "inpaint_psnr", "rmse_shadow", "rmse_nonshadow"])
        for r in rows:
            writer.writerow([r["iter"], repr(r["inpaint_psnr"]),
                             repr(r["rmse_shadow"]), repr(r["rmse_nonshadow"])])
    return rows
