"""The two architectures and the adaptive fusion block.

The naive encoder-decoder maps [image, mask] (4 channels) to an image.
The fusion network runs two copies of that encoder: one on the shadow-masked
image (the inpainting view), one on the raw shadow image, and predicts
per-element weights W1, W2 with a conv+sigmoid to blend their features.
"""

import _bootstrap  # noqa: F401

from pathlib import Path

import numpy as np

from shadowfuse import data, nn
from shadowfuse.data import save_mask_png
from shadowfuse.evaluation import weight_maps
from shadowfuse.networks import FusionNet, FusionNetConfig, make_ablation_variant

# --- full-width shape walk (256x256 input) ----------------------------------
full = FusionNetConfig.default()  # base_channels=64: 4->64->128->256
net = FusionNet(full, seed=0)
print("encoder chain for a 256x256 input:")
shape = (4, 256, 256)
for layer in net.encoder_masked.layers:
    nxt = layer.out_shape(shape)
    print(f"  {type(layer).__name__:<16} {shape} -> {nxt}")
    shape = nxt
print(f"fusion: concat -> {net.fusion.weight_conv.out_shape((512, 64, 64))} weights"
      f" -> fused {net.fusion.fusion_conv.out_shape((512, 64, 64))}")
print(f"decoder restores {net.decoder.out_shape((256, 64, 64))}")
print(f"total parameters (full width): {nn.parameter_count(net):,}")

# --- desk-scale forward pass -------------------------------------------------
tiny = FusionNet(FusionNetConfig.default(base_channels=8), seed=1)
t = data.generate_synthetic_shadow(seed=3, count=1, size=64)[0]
restored, w1, w2 = tiny.forward(t.shadow, t.mask)
print(f"\ndesk-scale forward: restored {restored.shape}, "
      f"W1 {w1.shape} in ({w1.min():.3f}, {w1.max():.3f})")

# channel-averaged weight maps, the visualization used to inspect what each
# branch contributes where
out = Path("runs/demo_networks")
out.mkdir(parents=True, exist_ok=True)
g1, g2 = weight_maps(w1, w2, out_hw=t.shadow.shape[:2])
save_mask_png(out / "w1.png", g1)
save_mask_png(out / "w2.png", g2)
print(f"wrote weight maps to {out}")

# --- ablation variants -------------------------------------------------------
print("\nablation variants:")
for variant in ("no_fusion", "no_sigmoid", "no_w1", "no_w2", "concat_input"):
    m = make_ablation_variant(tiny, variant)
    kind = "naive 7-channel" if variant == "concat_input" else "fusion"
    print(f"  {variant:<12} -> fresh {kind} model, {nn.parameter_count(m):,} params")

# branch zero-out reuses the trained weights and intercepts at inference
zs = make_ablation_variant(tiny, "zero_shadow_branch")
only_inpaint = zs.restore(t.shadow, t.mask)
print(f"  zero_shadow_branch -> inpainting branch alone, "
      f"output range [{only_inpaint.min():.2f}, {only_inpaint.max():.2f}]")
