"""The two-stage pipeline at desk scale: pretrain on inpainting, fine-tune on
shadows, and compare against a randomly initialized twin.

Takes a couple of minutes. The full-scale recipe (450k + 250k iterations,
batch 8, lr 5e-5) lives in configs/paper_scale.toml; the mechanics here are
identical.
"""

import _bootstrap  # noqa: F401

from pathlib import Path

import numpy as np

from shadowfuse import data, training
from shadowfuse.checkpoint import load_model_checkpoint
from shadowfuse.evaluation import evaluate_dataset, identity_model
from shadowfuse.networks import FusionNet, FusionNetConfig

out = Path("runs/demo_training")
ITERS = 150  # bump to 300 for the numbers quoted in the README

inpaint = data.generate_synthetic_inpaint(seed=5, count=16, size=64)
shadow = data.generate_synthetic_shadow(seed=3, count=40, size=64)
train, holdout = shadow[:32], shadow[32:]

net_cfg = FusionNetConfig.default(base_channels=8)
pre_cfg = training.TrainConfig(stage="pretrain", iterations=ITERS, batch_size=2,
                               learning_rate=1e-3, seed=0, checkpoint_every=ITERS,
                               log_every=1, resample_masks=True)
ft_cfg = training.TrainConfig(stage="finetune", iterations=ITERS, batch_size=2,
                              learning_rate=1e-3, seed=100, checkpoint_every=ITERS,
                              log_every=1)

print(f"pretraining on {len(inpaint)} inpainting samples, {ITERS} iterations...")
warm = FusionNet(net_cfg, seed=0)
pre = training.pretrain(warm, inpaint, pre_cfg, out / "pretrain")
l1 = [r["loss_l1"] for r in pre.loss_curve]
print(f"  L1 component: {np.mean(l1[:10]):.3f} (first 10) -> {np.mean(l1[-10:]):.3f} (last 10)")

print(f"fine-tuning from the pretrained checkpoint on {len(train)} triplets...")
warm_ft = training.finetune(pre.final_checkpoint, train, ft_cfg, out / "warm")
warm_model, _, _ = load_model_checkpoint(warm_ft.final_checkpoint)

print("fine-tuning an identically seeded random-init twin...")
cold = FusionNet(net_cfg, seed=0)
training.finetune(cold, train, ft_cfg, out / "cold")

rows = [("identity (do nothing)", identity_model),
        ("random init + finetune", cold),
        ("pretrained + finetune", warm_model)]
print(f"\nheld-out shadow-region RMSE ({len(holdout)} triplets):")
for name, model in rows:
    report = evaluate_dataset(model, holdout, mask_source="provided")
    print(f"  {name:<24} shadow {report.regions['shadow']['rmse']:7.3f}   "
          f"non-shadow {report.regions['non_shadow']['rmse']:7.3f}")

print(f"\nmanifests, loss curves and checkpoints under {out}/")
print("resume works too: training.finetune(..., resume_from=<checkpoint>) "
      "continues a run bit-for-bit.")
