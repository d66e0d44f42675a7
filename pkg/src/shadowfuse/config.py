"""Experiment configuration: a single TOML file drives every CLI verb.

See configs/desk_scale.toml for the schema; unknown keys are ignored so
configs stay forward-compatible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import (generate_synthetic_inpaint, generate_synthetic_shadow,
                   load_triplet_dataset, split_holdout)
from .losses import LossWeights
from .networks import (ABLATION_VARIANTS, EncoderDecoderConfig, FusionNet,
                       FusionNetConfig, NaiveEncoderDecoder, make_ablation_variant)
from .training import TrainConfig


class ConfigError(Exception):
    pass


def _derive_seed(seed, tag):
    return int(np.random.SeedSequence([int(seed), int(tag)]).generate_state(1)[0] % (2 ** 31))


@dataclass
class ModelSection:
    arch: str = "fusion"
    variant: str = "full"
    base_channels: int = 8
    resnet_blocks: int = 8
    fusion_combine: str = "concat"
    image_size: int = 64


@dataclass
class DataSection:
    source: str = "synthetic"
    root: str = ""
    split: str = ""
    inpaint_count: int = 16
    shadow_count: int = 32
    shadow_holdout: int = 8
    coverage: tuple = (0.1, 0.4)


@dataclass
class EvalSection:
    mask_source: str = "provided"


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/out"
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    pretrain: TrainConfig = None
    finetune: TrainConfig = None
    eval: EvalSection = field(default_factory=EvalSection)
    ablate_iterations: int = 40
    finetune_init_checkpoint: str = ""
    ablate_base_checkpoint: str = ""

    # -- model -------------------------------------------------------------
    def build_model(self, seed=None):
        m = self.model
        seed = self.seed if seed is None else seed
        if m.arch == "fusion":
            cfg = FusionNetConfig.default(base_channels=m.base_channels,
                                          combine=m.fusion_combine,
                                          resnet_blocks=m.resnet_blocks)
            model = FusionNet(cfg, seed=seed)
        elif m.arch == "naive":
            cfg = EncoderDecoderConfig.default(base_channels=m.base_channels,
                                               resnet_blocks=m.resnet_blocks)
            model = NaiveEncoderDecoder(cfg, seed=seed)
        else:
            raise ConfigError(f"unknown model.arch {m.arch!r}")
        if m.variant != "full":
            if m.variant not in ABLATION_VARIANTS:
                raise ConfigError(f"unknown model.variant {m.variant!r}")
            model = make_ablation_variant(model, m.variant, seed=seed)
        return model

    # -- datasets ----------------------------------------------------------
    def inpaint_dataset(self):
        d = self.data
        if d.source == "synthetic":
            return generate_synthetic_inpaint(_derive_seed(self.seed, 10), d.inpaint_count,
                                              size=self.model.image_size,
                                              coverage_range=tuple(d.coverage))
        raise ConfigError("directory-backed inpainting data is not supported; "
                          "use data.source = 'synthetic'")

    def shadow_datasets(self):
        """(train, holdout) shadow triplet splits."""
        d = self.data
        if d.source == "synthetic":
            full = generate_synthetic_shadow(_derive_seed(self.seed, 11),
                                             d.shadow_count + d.shadow_holdout,
                                             size=self.model.image_size)
        elif d.source == "directory":
            if not d.root:
                raise ConfigError("data.source = 'directory' needs data.root")
            full = load_triplet_dataset(d.root, d.split or None,
                                        image_size=self.model.image_size)
            if len(full) <= d.shadow_holdout:
                raise ConfigError(f"dataset has {len(full)} triplets, "
                                  f"holdout {d.shadow_holdout} leaves no training data")
        else:
            raise ConfigError(f"unknown data.source {d.source!r}")
        if d.shadow_holdout <= 0:
            return full, full
        return split_holdout(full, d.shadow_holdout)


def _train_section(tbl, stage, seed):
    lw = tbl.get("loss_weights", {})
    weights = LossWeights(
        lambda1=float(lw.get("lambda1", 1.0)),
        lambda2=float(lw.get("lambda2", 0.1)),
        lambda3=float(lw.get("lambda3", 0.1)),
        lambda4=float(lw.get("lambda4", 250.0)),
    )
    try:
        return TrainConfig(
            stage=stage,
            iterations=int(tbl["iterations"]),
            batch_size=int(tbl.get("batch_size", 8)),
            learning_rate=float(tbl.get("learning_rate", 5e-5)),
            seed=int(tbl.get("seed", seed)),
            checkpoint_every=int(tbl.get("checkpoint_every", 500_000)),
            loss_weights=weights,
            log_every=int(tbl.get("log_every", 1)),
            gan_mode=str(tbl.get("gan_mode", "nonsaturating")),
            resample_masks=bool(tbl.get("resample_masks", False)),
            mask_coverage=tuple(tbl.get("mask_coverage", (0.1, 0.4))),
            disc_base_channels=int(tbl.get("disc_base_channels", 8)),
            extractor_base_channels=int(tbl.get("extractor_base_channels", 8)),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad [{stage}] section: {exc}") from exc


def load_experiment_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    cfg = ExperimentConfig()
    cfg.seed = int(raw.get("seed", 0))
    cfg.out_dir = str(raw.get("out_dir", "runs/out"))

    m = raw.get("model", {})
    cfg.model = ModelSection(
        arch=str(m.get("arch", "fusion")),
        variant=str(m.get("variant", "full")),
        base_channels=int(m.get("base_channels", 8)),
        resnet_blocks=int(m.get("resnet_blocks", 8)),
        fusion_combine=str(m.get("fusion_combine", "concat")),
        image_size=int(m.get("image_size", 64)),
    )
    d = raw.get("data", {})
    cfg.data = DataSection(
        source=str(d.get("source", "synthetic")),
        root=str(d.get("root", "")),
        split=str(d.get("split", "")),
        inpaint_count=int(d.get("inpaint_count", 16)),
        shadow_count=int(d.get("shadow_count", 32)),
        shadow_holdout=int(d.get("shadow_holdout", 8)),
        coverage=tuple(d.get("coverage", (0.1, 0.4))),
    )
    if "pretrain" in raw:
        cfg.pretrain = _train_section(raw["pretrain"], "pretrain", cfg.seed)
    if "finetune" in raw:
        cfg.finetune = _train_section(raw["finetune"], "finetune", cfg.seed)
        cfg.finetune_init_checkpoint = str(raw["finetune"].get("init_checkpoint", ""))
    e = raw.get("eval", {})
    cfg.eval = EvalSection(mask_source=str(e.get("mask_source", "provided")))
    if cfg.eval.mask_source not in ("provided", "otsu"):
        raise ConfigError(f"unknown eval.mask_source {cfg.eval.mask_source!r}")
    a = raw.get("ablate", {})
    cfg.ablate_iterations = int(a.get("iterations", 40))
    cfg.ablate_base_checkpoint = str(a.get("base_checkpoint", ""))
    return cfg
