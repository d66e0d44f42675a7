"""The measurement protocol: LAB color space, Otsu-derived masks, and
region-wise metrics.

"RMSE" here follows the shadow-removal evaluation lineage: the mean absolute
LAB difference over a region's pixels. A true root-mean-square variant is
available behind the true_rmse flag. For reference, the full-scale method
this desk-scale kit mirrors reports 3.398 / 5.935 / 2.902 LAB RMSE
(all / shadow / non-shadow) and 34.14 dB PSNR on its benchmark; those are
documentation targets, not assertions.
"""

import _bootstrap  # noqa: F401

import numpy as np

from shadowfuse import data
from shadowfuse.evaluation import (evaluate_dataset, identity_model, otsu_shadow_mask,
                                   psnr, region_rmse, rgb_to_lab, ssim)

# --- LAB anchors --------------------------------------------------------------
for name, rgb in (("black", (0, 0, 0)), ("white", (1, 1, 1)), ("mid gray", (.5, .5, .5))):
    lab = rgb_to_lab(np.array(rgb, dtype=float).reshape(1, 1, 3))[0, 0]
    print(f"{name:>8} -> L {lab[0]:7.3f}  a {lab[1]:7.4f}  b {lab[2]:7.4f}")

# --- Otsu mask derivation ------------------------------------------------------
t = data.generate_synthetic_shadow(seed=11, count=1, size=96)[0]
derived = otsu_shadow_mask(t.shadow, t.shadow_free)
agree = (derived == t.mask).mean()
print(f"\nOtsu-derived mask agrees with the ground-truth polygon on {agree:.1%} of pixels")

# --- region-wise metrics -------------------------------------------------------
print("\nidentity restoration (= the shadow image itself):")
for region in ("all", "shadow", "non_shadow"):
    v = region_rmse(t.shadow, t.shadow_free, t.mask, region)
    print(f"  {region:>10} rmse {v:7.3f}")
print(f"  psnr {psnr(t.shadow, t.shadow_free):6.2f} dB   "
      f"ssim {ssim(t.shadow, t.shadow_free):.4f}")
print(f"  true RMS variant (all): "
      f"{region_rmse(t.shadow, t.shadow_free, t.mask, 'all', true_rmse=True):.3f}")

# --- dataset-level report ------------------------------------------------------
triplets = data.generate_synthetic_shadow(seed=12, count=6, size=64)
report = evaluate_dataset(identity_model, triplets, mask_source="otsu")
print(f"\nEvalReport over {report.n_images} images (mask_source={report.mask_source}):")
for region in ("all", "shadow", "non_shadow"):
    m = report.regions[region]
    print(f"  {region:>10}: rmse {m['rmse']:7.3f}  psnr {m['psnr']:6.2f}  "
          f"ssim {m['ssim']:.4f}")

# a perceptual-distance provider plugs in as any callable d(a, b) >= 0
mad = lambda a, b: float(np.abs(a - b).mean())
with_lpips = evaluate_dataset(identity_model, triplets, provider=mad)
print(f"with a provider configured, the 'all' row gains lpips = "
      f"{with_lpips.regions['all']['lpips']:.4f}")
