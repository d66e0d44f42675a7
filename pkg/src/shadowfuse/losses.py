"""Reconstruction and adversarial losses for the inpainting pretraining stage.

All reductions are means (over pixels, channels, feature elements), so the
default loss weights are resolution independent. Each loss comes with a
``*_and_grad`` companion returning the analytic gradient w.r.t. the
prediction, used by the trainer and checked against finite differences in
the tests.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .checkpoint import load_archive, save_archive

log = logging.getLogger(__name__)

DTYPE = np.float64
EPS_PROB = 1e-7

COMPONENT_NAMES = ("l1", "gan", "perc", "style")


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.1
    lambda3: float = 0.1
    lambda4: float = 250.0

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3, self.lambda4) < 0:
            raise ValueError("loss weights must be >= 0")


# ---------------------------------------------------------------------------
# masked L1

def masked_l1_and_grad(pred, target, mask):
    pred = np.asarray(pred, dtype=DTYPE)
    target = np.asarray(target, dtype=DTYPE)
    mask = np.asarray(mask, dtype=DTYPE)
    if pred.shape != target.shape or pred.shape[:mask.ndim] != mask.shape:
        raise ValueError(f"dims differ: pred {pred.shape}, target {target.shape}, "
                         f"mask {mask.shape}")
    mean_m = float(mask.mean())
    diff = pred - target
    value = float(np.abs(diff).mean())
    if mean_m == 0.0:
        log.warning("masked_l1: mask is empty, falling back to unweighted L1")
        weight = 1.0
    else:
        weight = mean_m
    grad = np.sign(diff) / (diff.size * weight)
    return value / weight, grad


def masked_l1(pred, target, mask):
    """(1/Mean(M)) * mean |pred - target|; plain MAE when the mask is empty."""
    return masked_l1_and_grad(pred, target, mask)[0]


def batch_masked_l1_and_grad(pred, target, masks):
    """Mean over samples of the per-sample masked L1."""
    n = pred.shape[0]
    total = 0.0
    grad = np.empty_like(pred)
    for i in range(n):
        v, g = masked_l1_and_grad(pred[i], target[i], masks[i])
        total += v
        grad[i] = g / n
    return total / n, grad


# ---------------------------------------------------------------------------
# GAN objectives

def _clip_prob(p):
    return np.clip(np.asarray(p, dtype=DTYPE), EPS_PROB, 1.0 - EPS_PROB)


def gan_losses(disc_real, disc_fake, mode="nonsaturating"):
    """Generator/discriminator objectives from post-sigmoid probabilities.

    ``nonsaturating`` (default): gen = -E log D(fake);
    disc = -1/2 E log D(real) - 1/2 E log(1 - D(fake)).
    ``literal`` reproduces the reference equations as printed:
    gen = E log(1 - D(fake)); disc = 1/2 E log D(fake) + 1/2 E log(1 - D(real)).
    """
    r = _clip_prob(disc_real)
    f = _clip_prob(disc_fake)
    if mode == "nonsaturating":
        gen = -float(np.log(f).mean())
        disc = -0.5 * float(np.log(r).mean()) - 0.5 * float(np.log1p(-f).mean())
    elif mode == "literal":
        gen = float(np.log1p(-f).mean())
        disc = 0.5 * float(np.log(f).mean()) + 0.5 * float(np.log1p(-r).mean())
    else:
        raise ValueError(f"unknown GAN mode {mode!r}")
    return gen, disc


def gen_gan_grad(disc_fake, mode="nonsaturating"):
    """d(gen_loss)/d(disc_fake)."""
    f = _clip_prob(disc_fake)
    if mode == "nonsaturating":
        return -1.0 / (f.size * f)
    if mode == "literal":
        return -1.0 / (f.size * (1.0 - f))
    raise ValueError(f"unknown GAN mode {mode!r}")


def disc_gan_grads(disc_real, disc_fake, mode="nonsaturating"):
    """(d disc_loss/d disc_real, d disc_loss/d disc_fake)."""
    r = _clip_prob(disc_real)
    f = _clip_prob(disc_fake)
    if mode == "nonsaturating":
        return -0.5 / (r.size * r), 0.5 / (f.size * (1.0 - f))
    if mode == "literal":
        return -0.5 / (r.size * (1.0 - r)), 0.5 / (f.size * f)
    raise ValueError(f"unknown GAN mode {mode!r}")


# ---------------------------------------------------------------------------
# feature extractor (perceptual / style)

class FeatureExtractor:
    """Five-stage conv stack providing perceptual feature taps.

    The default weights are a fixed seeded random draw, which is enough to
    carry a training signal at desk scale without a pretrained dependency;
    VGG-style pretrained weights can be loaded from a checkpoint archive.
    Stages mirror the relu1_1..relu5_1 taps: stride-2 convs from stage two on.
    """

    tap_names = ("tap1", "tap2", "tap3", "tap4", "tap5")

    def __init__(self, seed=0, base_channels=8, in_channels=3):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xFEA7]))
        widths = (base_channels, 2 * base_channels, 4 * base_channels,
                  4 * base_channels, 4 * base_channels)
        self.stages = []
        cur = in_channels
        for i, w in enumerate(widths):
            stride = 1 if i == 0 else 2
            self.stages.append(nn.Sequential(nn.Conv2d(cur, w, 3, stride, 1, rng), nn.ReLU()))
            cur = w

    def param_items(self):
        items = []
        for i, stage in enumerate(self.stages):
            items += [(f"stage{i}.{n}", w, g) for n, w, g in stage.param_items()]
        return items

    def features(self, images_nchw, cache=False):
        """List of five tap activations for an NCHW batch."""
        taps = []
        h = images_nchw
        for stage in self.stages:
            h = stage.forward(h, cache)
            taps.append(h)
        return taps

    def backward_from_taps(self, dtaps):
        """Backprop per-tap gradients to the input image batch."""
        dcur = dtaps[-1]
        for i in range(len(self.stages) - 1, -1, -1):
            dcur = self.stages[i].backward(dcur)
            if i > 0:
                dcur = dcur + dtaps[i - 1]
        return dcur

    def save(self, path):
        save_archive(path, nn.get_params(self), {"kind": "feature_extractor"})

    def load(self, path):
        arrays, _ = load_archive(path)
        nn.set_params(self, arrays)
        return self


def _image_batch_nchw(image):
    image = np.asarray(image, dtype=DTYPE)
    if image.ndim == 3:
        image = image[None]
    return np.ascontiguousarray(image.transpose(0, 3, 1, 2))


def perceptual_loss_and_grad(extractor, pred, target):
    if extractor is None:
        raise ValueError("perceptual loss needs an initialized FeatureExtractor")
    p = _image_batch_nchw(pred)
    t = _image_batch_nchw(target)
    taps_t = [a.copy() for a in extractor.features(t)]
    taps_p = extractor.features(p, cache=True)
    value = 0.0
    dtaps = []
    for fp, ft in zip(taps_p, taps_t):
        diff = fp - ft
        value += float(np.abs(diff).mean())
        dtaps.append(np.sign(diff) / diff.size)
    dx = extractor.backward_from_taps(dtaps)
    grad = dx.transpose(0, 2, 3, 1)
    if np.asarray(pred).ndim == 3:
        grad = grad[0]
    return value, np.ascontiguousarray(grad)


def perceptual_loss(extractor, pred, target):
    """Sum over taps of the mean absolute feature difference (N_i = 1)."""
    return perceptual_loss_and_grad(extractor, pred, target)[0]


def gram(features):
    """G[i, j] = sum_p f_i(p) f_j(p) / (C*H*W) for a (C, H, W) feature map."""
    features = np.asarray(features, dtype=DTYPE)
    c, h, w = features.shape
    flat = features.reshape(c, h * w)
    return flat @ flat.T / (c * h * w)


def _batch_gram(features):
    n, c, h, w = features.shape
    flat = features.reshape(n, c, h * w)
    return np.matmul(flat, flat.transpose(0, 2, 1)) / (c * h * w)


def style_loss_and_grad(extractor, pred, target, mask):
    if extractor is None:
        raise ValueError("style loss needs an initialized FeatureExtractor")
    pred_arr = np.asarray(pred, dtype=DTYPE)
    mask = np.asarray(mask, dtype=DTYPE)
    m3 = mask[..., None]
    p = _image_batch_nchw(pred_arr * m3)
    t = _image_batch_nchw(np.asarray(target, dtype=DTYPE) * m3)
    grams_t = [g.copy() for g in map(_batch_gram, extractor.features(t))]
    taps_p = extractor.features(p, cache=True)
    value = 0.0
    dtaps = []
    for fp, gt in zip(taps_p, grams_t):
        n, c, h, w = fp.shape
        gp = _batch_gram(fp)
        diff = gp - gt
        value += float(np.abs(diff).mean())
        dg = np.sign(diff) / diff[0].size / n
        flat = fp.reshape(n, c, h * w)
        dflat = np.matmul(dg + dg.transpose(0, 2, 1), flat) / (c * h * w)
        dtaps.append(dflat.reshape(fp.shape))
    dx = extractor.backward_from_taps(dtaps)
    grad = dx.transpose(0, 2, 3, 1)
    if pred_arr.ndim == 3:
        grad = grad[0]
    return value, np.ascontiguousarray(grad * m3)


def style_loss(extractor, pred, target, mask):
    """L1 distance between Gram matrices of mask-multiplied images, over taps."""
    return style_loss_and_grad(extractor, pred, target, mask)[0]


def total_inpaint_loss(weights, components):
    """lambda1*L1 + lambda2*GAN + lambda3*Perc + lambda4*Style."""
    if hasattr(components, "keys"):
        vals = [components[k] for k in COMPONENT_NAMES]
    else:
        vals = list(components)
        if len(vals) != 4:
            raise ValueError("expected four loss components (l1, gan, perc, style)")
    for name, v in zip(COMPONENT_NAMES, vals):
        if not np.isfinite(v):
            raise ValueError(f"non-finite loss component: {name}")
    return (weights.lambda1 * vals[0] + weights.lambda2 * vals[1]
            + weights.lambda3 * vals[2] + weights.lambda4 * vals[3])


# ---------------------------------------------------------------------------
# discriminator

class PatchDiscriminator:
    """Four strided conv layers + sigmoid head -> patch-level probabilities."""

    def __init__(self, in_channels=3, base_channels=64, seed=0):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xD15C]))
        c = base_channels
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, c, 4, 2, 1, rng), nn.LeakyReLU(0.2),
            nn.Conv2d(c, 2 * c, 4, 2, 1, rng), nn.LeakyReLU(0.2),
            nn.Conv2d(2 * c, 4 * c, 4, 2, 1, rng), nn.LeakyReLU(0.2),
            nn.Conv2d(4 * c, 1, 4, 1, 1, rng), nn.Sigmoid(),
        )

    def param_items(self):
        return self.net.param_items()

    def zero_grad(self):
        self.net.zero_grad()

    def forward(self, images, cache=False):
        """images: BHWC in [0,1] -> (N, 1, h, w) probabilities."""
        return self.net.forward(_image_batch_nchw(images), cache)

    def backward(self, dout):
        """Returns the gradient w.r.t. the input images (BHWC)."""
        dx = self.net.backward(dout)
        return np.ascontiguousarray(dx.transpose(0, 2, 3, 1))
