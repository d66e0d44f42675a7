"""Dataset ingestion, mask generation, and the synthetic desk-scale generator.

Images are (H, W, 3) float64 arrays with values in [0, 1]; masks are (H, W)
float64 arrays with values in {0, 1} where 1 marks the shadow / corrupted
region. The on-disk layout is ``root/[split/]{shadow,shadow_free,mask}/*.png``
with matching filenames (8-bit RGB images, 8-bit grayscale masks).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

DTYPE = np.float64

CANONICAL_SIZE = 256
MASK_BINARIZE_THRESHOLD = 0.5


class DatasetError(Exception):
    """Raised on malformed dataset directories (orphans, unreadable files)."""


@dataclass(frozen=True)
class ShadowTriplet:
    shadow: np.ndarray
    shadow_free: np.ndarray
    mask: np.ndarray
    name: str = ""

    def __post_init__(self):
        s, f, m = self.shadow.shape, self.shadow_free.shape, self.mask.shape
        if s != f or s[:2] != m:
            raise ValueError(f"triplet dims disagree: shadow {s}, shadow_free {f}, mask {m}")


@dataclass(frozen=True)
class InpaintSample:
    corrupted: np.ndarray
    mask: np.ndarray
    clean: np.ndarray

    def __post_init__(self):
        if self.corrupted.shape != self.clean.shape or self.corrupted.shape[:2] != self.mask.shape:
            raise ValueError("inpaint sample dims disagree")


def validate_image(image):
    image = np.asarray(image, dtype=DTYPE)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {image.shape}")
    if not np.isfinite(image).all():
        raise ValueError("image contains non-finite values")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("image values outside [0, 1]")
    return image


def validate_mask(mask, image_shape=None):
    mask = np.asarray(mask, dtype=DTYPE)
    if mask.ndim != 2:
        raise ValueError(f"expected (H, W) mask, got shape {mask.shape}")
    if not np.isin(mask, (0.0, 1.0)).all():
        raise ValueError("mask values must be exactly 0 or 1")
    if image_shape is not None and mask.shape != tuple(image_shape[:2]):
        raise ValueError(f"mask shape {mask.shape} does not match image {image_shape[:2]}")
    return mask


def make_shadow_masked(image, mask):
    """Zero out the shadow region: output = image * (1 - mask) per channel."""
    image = np.asarray(image, dtype=DTYPE)
    mask = np.asarray(mask, dtype=DTYPE)
    if image.shape[:2] != mask.shape:
        raise ValueError(f"image {image.shape[:2]} and mask {mask.shape} dims differ")
    return image * (1.0 - mask)[..., None]


def make_inpaint_sample(clean, mask):
    clean = validate_image(clean)
    mask = validate_mask(mask, clean.shape)
    return InpaintSample(corrupted=make_shadow_masked(clean, mask), mask=mask, clean=clean)


# ---------------------------------------------------------------------------
# irregular mask sampling

_DISC_OFFSETS = {}


def _disc(radius):
    if radius not in _DISC_OFFSETS:
        r = int(radius)
        yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
        _DISC_OFFSETS[radius] = (yy[yy * yy + xx * xx <= r * r], xx[yy * yy + xx * xx <= r * r])
    return _DISC_OFFSETS[radius]


def _stamp(mask, cy, cx, radius):
    """Paint a disc clipped to the canvas; returns the number of newly covered pixels."""
    h, w = mask.shape
    oy, ox = _disc(radius)
    yy = cy + oy
    xx = cx + ox
    keep = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
    yy, xx = yy[keep], xx[keep]
    newly = int((mask[yy, xx] == 0.0).sum())
    mask[yy, xx] = 1.0
    return newly


def sample_irregular_mask(seed, height, width, coverage_range=(0.1, 0.4)):
    """Random-walk brush strokes; coverage lands inside coverage_range.

    Deterministic for a given (seed, height, width, coverage_range).
    """
    lo, hi = coverage_range
    if not (0.0 <= lo < hi <= 1.0):
        raise ValueError(f"invalid coverage_range {coverage_range!r}: need 0 <= lo < hi <= 1")
    area = height * width
    n_lo = math.ceil(lo * area)
    n_hi = math.floor(hi * area)
    if n_hi < n_lo or n_hi < 1:
        raise ValueError(f"coverage_range {coverage_range!r} infeasible for {height}x{width}")

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), height, width]))
    target = int(rng.integers(max(n_lo, 1), n_hi + 1))
    mask = np.zeros((height, width), dtype=DTYPE)
    base_radius = max(2, min(height, width) // 16)
    count = 0
    while count < target:
        cy = int(rng.integers(0, height))
        cx = int(rng.integers(0, width))
        angle = rng.uniform(0.0, 2.0 * np.pi)
        steps = int(rng.integers(4, 16))
        for _ in range(steps):
            slack = target - count
            radius = base_radius
            while radius > 0 and len(_disc(radius)[0]) > slack:
                radius -= 1
            count += _stamp(mask, cy, cx, radius)
            if count >= target:
                break
            angle += rng.normal(0.0, 0.5)
            step = max(1, radius)
            cy = int(np.clip(cy + round(step * np.sin(angle)), 0, height - 1))
            cx = int(np.clip(cx + round(step * np.cos(angle)), 0, width - 1))
    assert n_lo <= count <= n_hi, (count, n_lo, n_hi)
    return mask


# ---------------------------------------------------------------------------
# synthetic shadow / inpainting data

def _bilinear_resize(arr, out_h, out_w):
    """Bilinear resize of an (H, W, C) array (align-corners)."""
    h, w = arr.shape[:2]
    ys = np.linspace(0, h - 1, out_h)
    xs = np.linspace(0, w - 1, out_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = arr[y0][:, x0] * (1 - fx) + arr[y0][:, x1] * fx
    bot = arr[y1][:, x0] * (1 - fx) + arr[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def quantize8(arr):
    """Snap values onto the 8-bit grid k/255, so PNG round-trips are exact."""
    return np.round(np.asarray(arr, dtype=DTYPE) * 255.0) / 255.0


def procedural_texture(rng, size):
    """Smooth multi-scale random RGB field in [0.25, 0.95], 8-bit quantized."""
    coarse = _bilinear_resize(rng.uniform(0.0, 1.0, (4, 4, 3)), size, size)
    fine = _bilinear_resize(rng.uniform(0.0, 1.0, (16, 16, 3)), size, size)
    img = 0.7 * coarse + 0.3 * fine
    return quantize8(0.25 + 0.7 * img)


def _polygon_mask(rng, size, min_coverage=0.02):
    """Star-shaped random polygon rasterized by the even-odd rule."""
    for _ in range(32):
        n_vert = int(rng.integers(5, 9))
        cx, cy = rng.uniform(0.3, 0.7, 2) * size
        angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, n_vert))
        radii = rng.uniform(0.12, 0.38, n_vert) * size
        vx = cx + radii * np.cos(angles)
        vy = cy + radii * np.sin(angles)
        px, py = np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5)
        inside = np.zeros((size, size), dtype=bool)
        for i in range(n_vert):
            x1, y1 = vx[i], vy[i]
            x2, y2 = vx[(i + 1) % n_vert], vy[(i + 1) % n_vert]
            crosses = (y1 > py) != (y2 > py)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = (x2 - x1) * (py - y1) / (y2 - y1) + x1
            inside ^= crosses & (px < xint)
        if inside.mean() >= min_coverage:
            return inside.astype(DTYPE)
    raise RuntimeError("failed to draw a polygon with enough coverage")


def generate_synthetic_shadow(seed, count, size=CANONICAL_SIZE, return_factors=False):
    """Procedural shadow triplets: a polygon region of a texture is darkened
    by a per-sample factor in [0.3, 0.7].

    Values sit on the 8-bit grid; inside the mask the shadow image equals
    quantize8(factor * shadow_free) exactly, outside it equals shadow_free.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5AD0]))
    triplets = []
    factors = []
    for i in range(count):
        texture = procedural_texture(rng, size)
        mask = _polygon_mask(rng, size)
        factor = float(rng.uniform(0.3, 0.7))
        shadow = np.where(mask[..., None] > 0, quantize8(factor * texture), texture)
        triplets.append(ShadowTriplet(shadow=shadow, shadow_free=texture, mask=mask,
                                      name=f"synth_{i:04d}"))
        factors.append(factor)
    if return_factors:
        return triplets, factors
    return triplets


def generate_synthetic_inpaint(seed, count, size=CANONICAL_SIZE, coverage_range=(0.1, 0.4)):
    """Clean procedural textures corrupted by irregular masks."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1A7A]))
    samples = []
    for i in range(count):
        clean = procedural_texture(rng, size)
        mask = sample_irregular_mask(int(rng.integers(0, 2 ** 31)), size, size, coverage_range)
        samples.append(make_inpaint_sample(clean, mask))
    return samples


# ---------------------------------------------------------------------------
# directory I/O

def _to_png_array(arr):
    return np.clip(np.round(np.asarray(arr) * 255.0), 0, 255).astype(np.uint8)


def save_image_png(path, image):
    Image.fromarray(_to_png_array(image), mode="RGB").save(path)


def save_mask_png(path, mask):
    Image.fromarray(_to_png_array(mask), mode="L").save(path)


def load_image_png(path, image_size=None):
    with Image.open(path) as im:
        im = im.convert("RGB")
        if image_size is not None and im.size != (image_size, image_size):
            im = im.resize((image_size, image_size), Image.BILINEAR)
        return np.asarray(im, dtype=DTYPE) / 255.0


def load_mask_png(path, image_size=None):
    with Image.open(path) as im:
        im = im.convert("L")
        if image_size is not None and im.size != (image_size, image_size):
            im = im.resize((image_size, image_size), Image.NEAREST)
        arr = np.asarray(im, dtype=DTYPE) / 255.0
    return (arr > MASK_BINARIZE_THRESHOLD).astype(DTYPE)


_SUBDIRS = ("shadow", "shadow_free", "mask")


def save_triplet_dataset(root_path, triplets, split=None):
    """Write triplets in the directory layout load_triplet_dataset expects."""
    base = Path(root_path) / split if split else Path(root_path)
    for sub in _SUBDIRS:
        (base / sub).mkdir(parents=True, exist_ok=True)
    for i, t in enumerate(triplets):
        name = t.name or f"item_{i:04d}"
        save_image_png(base / "shadow" / f"{name}.png", t.shadow)
        save_image_png(base / "shadow_free" / f"{name}.png", t.shadow_free)
        save_mask_png(base / "mask" / f"{name}.png", t.mask)
    return base


def load_triplet_dataset(root_path, split=None, image_size=CANONICAL_SIZE):
    """Load shadow/shadow_free/mask PNG triplets, resized to image_size.

    Images are resized bilinearly, masks with nearest-neighbor and binarized
    at 0.5. Files are paired by stem; a stem present in some subdirectories
    but not all is an orphan and aborts the load.
    """
    base = Path(root_path) / split if split else Path(root_path)
    if not base.is_dir():
        raise DatasetError(f"dataset directory not found: {base}")
    stems = {}
    for sub in _SUBDIRS:
        d = base / sub
        stems[sub] = {p.stem: p for p in sorted(d.glob("*.png"))} if d.is_dir() else {}
    all_stems = sorted(set().union(*[set(s) for s in stems.values()]))
    orphans = []
    for stem in all_stems:
        missing = [sub for sub in _SUBDIRS if stem not in stems[sub]]
        if missing:
            orphans.append(f"'{stem}' missing in {', '.join(missing)}")
    if orphans:
        raise DatasetError("orphaned dataset entries: " + "; ".join(orphans))
    triplets = []
    for stem in all_stems:
        triplets.append(ShadowTriplet(
            shadow=load_image_png(stems["shadow"][stem], image_size),
            shadow_free=load_image_png(stems["shadow_free"][stem], image_size),
            mask=load_mask_png(stems["mask"][stem], image_size),
            name=stem,
        ))
    return triplets


def subset_fraction(dataset, fraction, seed):
    """Deterministic uniform subset of round(fraction * N) items, no replacement."""
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    dataset = list(dataset)
    if fraction == 1.0:
        return dataset
    n = len(dataset)
    k = int(math.floor(fraction * n + 0.5))
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5B5E7]))
    idx = sorted(rng.choice(n, size=k, replace=False).tolist())
    return [dataset[i] for i in idx]


def split_holdout(dataset, holdout, seed=None):
    """Split off the last `holdout` items (or a seeded random subset) for eval."""
    dataset = list(dataset)
    if holdout <= 0 or holdout >= len(dataset):
        raise ValueError("holdout must be in (0, len(dataset))")
    if seed is None:
        return dataset[:-holdout], dataset[-holdout:]
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x0758]))
    idx = rng.permutation(len(dataset))
    held = set(idx[:holdout].tolist())
    train = [d for i, d in enumerate(dataset) if i not in held]
    val = [d for i, d in enumerate(dataset) if i in held]
    return train, val
