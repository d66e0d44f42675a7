"""Measurement protocol: LAB conversion, Otsu masks, region-wise metrics.

"RMSE" follows the shadow-removal evaluation lineage: the mean absolute
difference in CIE L*a*b* over the selected region's pixels (a historical
misnomer kept for comparability); ``true_rmse=True`` switches to the actual
root mean square. PSNR/SSIM are computed in RGB.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

DTYPE = np.float64

REGIONS = ("all", "shadow", "non_shadow")

# sRGB (D65) <-> XYZ
_SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_XYZ_TO_SRGB = np.linalg.inv(_SRGB_TO_XYZ)
_WHITE = np.array([0.95047, 1.0, 1.08883])
_DELTA = 6.0 / 29.0

_GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])  # ITU-R BT.601


def rgb_to_lab(image):
    """sRGB in [0,1] -> CIE L*a*b* (D65). Out-of-range input is clamped."""
    image = np.asarray(image, dtype=DTYPE)
    if image.min() < 0.0 or image.max() > 1.0:
        log.warning("rgb_to_lab: input outside [0,1], clamping")
        image = np.clip(image, 0.0, 1.0)
    linear = np.where(image <= 0.04045, image / 12.92, ((image + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _SRGB_TO_XYZ.T / _WHITE
    f = np.where(xyz > _DELTA ** 3, np.cbrt(xyz), xyz / (3 * _DELTA ** 2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def lab_to_rgb(lab):
    """Inverse of :func:`rgb_to_lab` (used for round-trip checks)."""
    lab = np.asarray(lab, dtype=DTYPE)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    f = np.stack([fx, fy, fz], axis=-1)
    xyz = np.where(f > _DELTA, f ** 3, 3 * _DELTA ** 2 * (f - 4.0 / 29.0)) * _WHITE
    linear = xyz @ _XYZ_TO_SRGB.T
    linear = np.clip(linear, 0.0, None)
    srgb = np.where(linear <= 0.0031308, linear * 12.92,
                    1.055 * np.power(linear, 1.0 / 2.4) - 0.055)
    return np.clip(srgb, 0.0, 1.0)


def grayscale(image):
    return np.asarray(image, dtype=DTYPE) @ _GRAY_WEIGHTS


# ---------------------------------------------------------------------------
# Otsu

def otsu_threshold(hist):
    """Index maximizing between-class variance; -1 when degenerate."""
    hist = np.asarray(hist, dtype=DTYPE)
    total = hist.sum()
    levels = np.arange(hist.size, dtype=DTYPE)
    w0 = np.cumsum(hist)
    w1 = total - w0
    sum0 = np.cumsum(hist * levels)
    sum_total = sum0[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = sum0 / w0
        mu1 = (sum_total - sum0) / w1
        var_b = w0 * w1 * (mu0 - mu1) ** 2
    var_b[~np.isfinite(var_b)] = 0.0
    best = int(np.argmax(var_b))
    if var_b[best] <= 0.0:
        return -1
    return best


def otsu_shadow_mask(shadow, shadow_free):
    """Shadow mask from the grayscale |shadow - shadow_free| difference.

    The difference is quantized to 256 levels; the Otsu threshold maximizes
    the between-class variance and the mask keeps pixels strictly above it.
    A constant difference image has no shadow evidence -> empty mask.
    """
    shadow = np.asarray(shadow, dtype=DTYPE)
    shadow_free = np.asarray(shadow_free, dtype=DTYPE)
    if shadow.shape != shadow_free.shape:
        raise ValueError(f"dims differ: {shadow.shape} vs {shadow_free.shape}")
    diff = np.abs(grayscale(shadow) - grayscale(shadow_free))
    levels = np.clip(np.round(diff * 255.0), 0, 255).astype(np.int64)
    hist = np.bincount(levels.ravel(), minlength=256)
    t = otsu_threshold(hist)
    if t < 0:
        return np.zeros(levels.shape, dtype=DTYPE)
    return (levels > t).astype(DTYPE)


# ---------------------------------------------------------------------------
# region metrics

def _region_selector(mask, region):
    if region == "all":
        return np.ones(mask.shape, dtype=bool)
    if region == "shadow":
        return np.asarray(mask) == 1.0
    if region == "non_shadow":
        return np.asarray(mask) == 0.0
    raise ValueError(f"unknown region {region!r}")


def region_rmse(pred, gt, mask, region="all", true_rmse=False):
    """Mean absolute LAB difference over the region (lineage 'RMSE').

    ``true_rmse=True`` computes the actual root mean square instead.
    """
    pred = np.asarray(pred, dtype=DTYPE)
    gt = np.asarray(gt, dtype=DTYPE)
    if pred.shape != gt.shape or pred.shape[:2] != np.asarray(mask).shape:
        raise ValueError("pred/gt/mask dims differ")
    sel = _region_selector(mask, region)
    if not sel.any():
        log.warning("region_rmse: empty region %r, reporting 0", region)
        return 0.0
    diff = rgb_to_lab(pred)[sel] - rgb_to_lab(gt)[sel]
    if true_rmse:
        return float(np.sqrt(np.mean(diff ** 2)))
    return float(np.mean(np.abs(diff)))


PSNR_CAP = 100.0


def psnr(pred, gt):
    """10*log10(1/MSE) over RGB in [0,1]; capped at 100 dB."""
    pred = np.asarray(pred, dtype=DTYPE)
    gt = np.asarray(gt, dtype=DTYPE)
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def region_psnr(pred, gt, mask, region="all"):
    sel = _region_selector(mask, region)
    if not sel.any():
        log.warning("region_psnr: empty region %r, reporting cap", region)
        return PSNR_CAP
    pred = np.asarray(pred, dtype=DTYPE)
    gt = np.asarray(gt, dtype=DTYPE)
    mse = float(np.mean((pred[sel] - gt[sel]) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _ssim_map(pred_gray, gt_gray):
    """SSIM over valid 11x11 Gaussian windows (dynamic range 1)."""
    h, w = pred_gray.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} input, got {h}x{w}")
    win = _gaussian_window()

    def filt(img):
        windows = np.lib.stride_tricks.sliding_window_view(img, (SSIM_WINDOW, SSIM_WINDOW))
        return np.tensordot(windows, win, axes=([2, 3], [0, 1]))

    mu_x = filt(pred_gray)
    mu_y = filt(gt_gray)
    sxx = filt(pred_gray * pred_gray) - mu_x * mu_x
    syy = filt(gt_gray * gt_gray) - mu_y * mu_y
    sxy = filt(pred_gray * gt_gray) - mu_x * mu_y
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    return (((2 * mu_x * mu_y + c1) * (2 * sxy + c2))
            / ((mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)))


def ssim(pred, gt):
    """Mean windowed SSIM on BT.601 grayscale."""
    pred = np.asarray(pred, dtype=DTYPE)
    gt = np.asarray(gt, dtype=DTYPE)
    if pred.shape != gt.shape:
        raise ValueError("pred/gt dims differ")
    return float(_ssim_map(grayscale(pred), grayscale(gt)).mean())


def region_ssim(pred, gt, mask, region="all"):
    """Mean of the SSIM map over windows whose center pixel lies in the region."""
    smap = _ssim_map(grayscale(np.asarray(pred, dtype=DTYPE)),
                     grayscale(np.asarray(gt, dtype=DTYPE)))
    half = SSIM_WINDOW // 2
    sel = _region_selector(mask, region)[half:half + smap.shape[0], half:half + smap.shape[1]]
    if not sel.any():
        log.warning("region_ssim: empty region %r, reporting 1.0", region)
        return 1.0
    return float(smap[sel].mean())


# ---------------------------------------------------------------------------
# dataset evaluation

@dataclass
class EvalReport:
    regions: dict
    n_images: int
    n_skipped: int = 0
    mask_source: str = "provided"
    skipped: list = field(default_factory=list)

    def to_dict(self):
        return {"regions": self.regions, "n_images": self.n_images,
                "n_skipped": self.n_skipped, "mask_source": self.mask_source,
                "skipped": list(self.skipped)}

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    def csv_rows(self):
        has_lpips = any("lpips" in m for m in self.regions.values())
        header = ["region", "rmse", "psnr", "ssim"] + (["lpips"] if has_lpips else [])
        rows = [header]
        for region in REGIONS:
            m = self.regions[region]
            row = [region, repr(m["rmse"]), repr(m["psnr"]), repr(m["ssim"])]
            if has_lpips:
                row.append(repr(m["lpips"]) if "lpips" in m else "")
            rows.append(row)
        return rows

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            csv.writer(f).writerows(self.csv_rows())
        return path


def _model_fn(model):
    if callable(model):
        return model
    if hasattr(model, "restore"):
        return model.restore
    raise TypeError("model must be callable or expose .restore(image, mask)")


def evaluate_dataset(model, dataset, mask_source="provided", provider=None):
    """Average per-image region metrics over a triplet dataset.

    ``mask_source='provided'`` takes the metric region mask from the dataset;
    ``'otsu'`` derives it from the shadow / shadow-free difference. The model
    input mask is always the dataset one. Images that fail (e.g. shape
    mismatch) are skipped and counted.
    """
    if mask_source not in ("provided", "otsu"):
        raise ValueError(f"unknown mask_source {mask_source!r}")
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset is empty")
    fn = _model_fn(model)
    per_image = {r: {"rmse": [], "psnr": [], "ssim": []} for r in REGIONS}
    lpips_vals = []
    skipped = []
    for i, t in enumerate(dataset):
        try:
            restored = fn(t.shadow, t.mask)
            if np.asarray(restored).shape != t.shadow_free.shape:
                raise ValueError(f"model output shape {np.asarray(restored).shape} != "
                                 f"{t.shadow_free.shape}")
            region_mask = t.mask if mask_source == "provided" \
                else otsu_shadow_mask(t.shadow, t.shadow_free)
            for r in REGIONS:
                per_image[r]["rmse"].append(region_rmse(restored, t.shadow_free, region_mask, r))
                per_image[r]["psnr"].append(region_psnr(restored, t.shadow_free, region_mask, r))
                per_image[r]["ssim"].append(region_ssim(restored, t.shadow_free, region_mask, r))
            if provider is not None:
                lpips_vals.append(float(provider(restored, t.shadow_free)))
        except Exception as exc:  # per-image failures must not kill the run
            name = getattr(t, "name", "") or f"index {i}"
            log.warning("evaluate_dataset: skipping %s (%s)", name, exc)
            skipped.append(str(name))
    n_ok = len(dataset) - len(skipped)
    if n_ok == 0:
        raise ValueError("every image in the dataset was skipped")
    regions = {}
    for r in REGIONS:
        regions[r] = {k: math.fsum(v) / n_ok for k, v in per_image[r].items()}
    if provider is not None:
        regions["all"]["lpips"] = math.fsum(lpips_vals) / n_ok
    return EvalReport(regions=regions, n_images=n_ok, n_skipped=len(skipped),
                      mask_source=mask_source, skipped=skipped)


class NullPerceptualProvider:
    """Placeholder for a learned perceptual distance; omits the column."""

    def __call__(self, a, b):
        raise NotImplementedError("null provider has no distance")


def identity_model(image, mask):
    """Do-nothing baseline: returns the shadow image unchanged."""
    return np.asarray(image, dtype=DTYPE)


# ---------------------------------------------------------------------------
# fusion-weight visualization

def _nearest_resize_2d(arr, out_h, out_w):
    h, w = arr.shape
    yi = np.minimum((np.arange(out_h) * h) // out_h, h - 1)
    xi = np.minimum((np.arange(out_w) * w) // out_w, w - 1)
    return arr[np.ix_(yi, xi)]


def weight_maps(w1, w2, out_hw=(256, 256)):
    """Channel-mean weight maps, min-max normalized, nearest-upsampled.

    A constant map has no contrast to show and normalizes to all 0.5.
    """
    if np.asarray(w1).shape != np.asarray(w2).shape:
        raise ValueError("weight map shapes differ")

    def pool(w):
        m = np.asarray(w, dtype=DTYPE).mean(axis=0)
        lo, hi = m.min(), m.max()
        if hi > lo:
            m = (m - lo) / (hi - lo)
        else:
            m = np.full_like(m, 0.5)
        return _nearest_resize_2d(m, *out_hw)

    return pool(w1), pool(w2)
