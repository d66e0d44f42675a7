"""Network definitions: the naive encoder-decoder and the adaptive fusion net.

The fusion net runs the shadow image and the shadow-masked image through two
sibling encoders, predicts per-element blend weights with a conv+sigmoid, and
decodes the fused feature back to an image. Default channel widths follow the
reference architecture (4->64->128->256 encoder, 512->512 weight conv,
512->256 fusion conv, 8 resnet blocks, two transposed convs + final conv);
``base_channels`` scales everything down for desk-scale runs.

Public arrays are HWC images in [0,1] and HW masks in {0,1}; batches add a
leading axis. NCHW is internal.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import nn

DTYPE = np.float64

ABLATION_VARIANTS = (
    "no_fusion", "no_sigmoid", "no_w1", "no_w2",
    "concat_input", "zero_shadow_branch", "zero_inpaint_branch",
)


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | transposed_conv | relu | sigmoid | resnet_block
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kind in ("conv", "transposed_conv"):
            if self.kernel <= 0 or self.stride <= 0 or self.padding < 0:
                raise ValueError(f"bad {self.kind} geometry: {self}")
            if self.in_channels <= 0 or self.out_channels <= 0:
                raise ValueError(f"bad {self.kind} channels: {self}")


def conv(cin, cout, k, s, p):
    return LayerSpec("conv", cin, cout, k, s, p)


def tconv(cin, cout, k, s, p):
    return LayerSpec("transposed_conv", cin, cout, k, s, p)


def relu():
    return LayerSpec("relu")


def _encoder_specs(in_channels, base):
    return (
        conv(in_channels, base, 7, 1, 3), relu(),
        conv(base, 2 * base, 4, 2, 1), relu(),
        conv(2 * base, 4 * base, 4, 2, 1), relu(),
    )


def _decoder_specs(base):
    return (
        tconv(4 * base, 2 * base, 4, 2, 1), relu(),
        tconv(2 * base, base, 4, 2, 1), relu(),
        conv(base, 3, 7, 1, 3),
    )


@dataclass(frozen=True)
class EncoderDecoderConfig:
    encoder: tuple = ()
    resnet_blocks: int = 8
    resnet_channels: int = 256
    decoder: tuple = ()
    in_channels: int = 4
    input_mode: str = "image_mask"  # image_mask (4ch) | concat_masked (7ch: I, I~, M)

    @staticmethod
    def default(base_channels=64, in_channels=4, input_mode="image_mask", resnet_blocks=8):
        return EncoderDecoderConfig(
            encoder=_encoder_specs(in_channels, base_channels),
            resnet_blocks=resnet_blocks,
            resnet_channels=4 * base_channels,
            decoder=_decoder_specs(base_channels),
            in_channels=in_channels,
            input_mode=input_mode,
        )

    def to_dict(self):
        d = asdict(self)
        d["encoder"] = [asdict(s) for s in self.encoder]
        d["decoder"] = [asdict(s) for s in self.decoder]
        return d

    @staticmethod
    def from_dict(d):
        return EncoderDecoderConfig(
            encoder=tuple(LayerSpec(**s) for s in d["encoder"]),
            resnet_blocks=d["resnet_blocks"],
            resnet_channels=d["resnet_channels"],
            decoder=tuple(LayerSpec(**s) for s in d["decoder"]),
            in_channels=d["in_channels"],
            input_mode=d.get("input_mode", "image_mask"),
        )


@dataclass(frozen=True)
class FusionBlockSpec:
    weight_conv: LayerSpec
    fusion_conv: LayerSpec
    use_sigmoid: bool = True
    use_w1: bool = True
    use_w2: bool = True
    combine: str = "concat"  # concat | sum
    enabled: bool = True

    def __post_init__(self):
        if self.combine not in ("concat", "sum"):
            raise ValueError(f"unknown combine mode {self.combine!r}")
        if self.enabled and self.weight_conv.out_channels % 2 != 0:
            raise ValueError("weight conv must emit an even channel count (W1|W2 split)")

    @staticmethod
    def default(feature_channels=256, combine="concat", use_sigmoid=True,
                use_w1=True, use_w2=True, enabled=True):
        f = feature_channels
        # the disabled (no_fusion) block concatenates the raw features
        fusion_in = 2 * f if (combine == "concat" or not enabled) else f
        return FusionBlockSpec(
            weight_conv=conv(2 * f, 2 * f, 3, 1, 1),
            fusion_conv=conv(fusion_in, f, 3, 1, 1),
            use_sigmoid=use_sigmoid, use_w1=use_w1, use_w2=use_w2,
            combine=combine, enabled=enabled,
        )

    def to_dict(self):
        d = asdict(self)
        d["weight_conv"] = asdict(self.weight_conv)
        d["fusion_conv"] = asdict(self.fusion_conv)
        return d

    @staticmethod
    def from_dict(d):
        return FusionBlockSpec(
            weight_conv=LayerSpec(**d["weight_conv"]),
            fusion_conv=LayerSpec(**d["fusion_conv"]),
            use_sigmoid=d["use_sigmoid"], use_w1=d["use_w1"], use_w2=d["use_w2"],
            combine=d["combine"], enabled=d["enabled"],
        )


@dataclass(frozen=True)
class FusionNetConfig:
    encoder: tuple = ()
    fusion: FusionBlockSpec = None
    resnet_blocks: int = 8
    resnet_channels: int = 256
    decoder: tuple = ()
    in_channels: int = 4

    @staticmethod
    def default(base_channels=64, combine="concat", use_sigmoid=True,
                use_w1=True, use_w2=True, fusion_enabled=True, resnet_blocks=8):
        f = 4 * base_channels
        return FusionNetConfig(
            encoder=_encoder_specs(4, base_channels),
            fusion=FusionBlockSpec.default(f, combine, use_sigmoid, use_w1, use_w2,
                                           fusion_enabled),
            resnet_blocks=resnet_blocks,
            resnet_channels=f,
            decoder=_decoder_specs(base_channels),
        )

    def to_dict(self):
        d = asdict(self)
        d["encoder"] = [asdict(s) for s in self.encoder]
        d["decoder"] = [asdict(s) for s in self.decoder]
        d["fusion"] = self.fusion.to_dict()
        return d

    @staticmethod
    def from_dict(d):
        return FusionNetConfig(
            encoder=tuple(LayerSpec(**s) for s in d["encoder"]),
            fusion=FusionBlockSpec.from_dict(d["fusion"]),
            resnet_blocks=d["resnet_blocks"],
            resnet_channels=d["resnet_channels"],
            decoder=tuple(LayerSpec(**s) for s in d["decoder"]),
            in_channels=d["in_channels"],
        )


def _layers_from_specs(specs, rng, in_channels):
    layers = []
    cur = in_channels
    for spec in specs:
        if spec.kind == "conv":
            if spec.in_channels != cur:
                raise ValueError(f"channel chain broken at {spec}: have {cur}")
            layers.append(nn.Conv2d(spec.in_channels, spec.out_channels, spec.kernel,
                                    spec.stride, spec.padding, rng))
            cur = spec.out_channels
        elif spec.kind == "transposed_conv":
            if spec.in_channels != cur:
                raise ValueError(f"channel chain broken at {spec}: have {cur}")
            layers.append(nn.ConvTranspose2d(spec.in_channels, spec.out_channels, spec.kernel,
                                             spec.stride, spec.padding, rng))
            cur = spec.out_channels
        elif spec.kind == "relu":
            layers.append(nn.ReLU())
        elif spec.kind == "sigmoid":
            layers.append(nn.Sigmoid())
        elif spec.kind == "resnet_block":
            if spec.in_channels != cur:
                raise ValueError(f"channel chain broken at {spec}: have {cur}")
            layers.append(nn.ResnetBlock(spec.in_channels, rng))
        else:
            raise ValueError(f"unknown layer kind {spec.kind!r}")
    return layers, cur


def spec_parameter_count(specs, resnet_blocks=0, resnet_channels=0):
    """k^2*cin*cout + cout per conv; resnet blocks hold two 3x3 convs each."""
    total = 0
    for s in specs:
        if s.kind in ("conv", "transposed_conv"):
            total += s.kernel * s.kernel * s.in_channels * s.out_channels + s.out_channels
    total += resnet_blocks * 2 * (9 * resnet_channels * resnet_channels + resnet_channels)
    return total


# ---------------------------------------------------------------------------
# batching helpers

def _to_nchw(images):
    images = np.asarray(images, dtype=DTYPE)
    if images.ndim == 3:
        images = images[None]
    return np.ascontiguousarray(images.transpose(0, 3, 1, 2))


def _to_bhwc(nchw):
    return np.ascontiguousarray(nchw.transpose(0, 2, 3, 1))


def _mask_batch(masks):
    masks = np.asarray(masks, dtype=DTYPE)
    if masks.ndim == 2:
        masks = masks[None]
    return masks[:, None]  # (N,1,H,W)


class FusionBlock:
    """Conv_weight -> sigmoid -> per-element weighting -> Conv_fusion."""

    def __init__(self, spec, rng):
        self.spec = spec
        self.feature_channels = spec.fusion_conv.out_channels
        if spec.enabled:
            wc = spec.weight_conv
            self.weight_conv = nn.Conv2d(wc.in_channels, wc.out_channels, wc.kernel,
                                         wc.stride, wc.padding, rng)
            self.sig = nn.Sigmoid()
        else:
            self.weight_conv = None
            self.sig = None
        fc = spec.fusion_conv
        self.fusion_conv = nn.Conv2d(fc.in_channels, fc.out_channels, fc.kernel,
                                     fc.stride, fc.padding, rng)

    def param_items(self):
        items = []
        if self.weight_conv is not None:
            items += [("weight_conv." + n, w, g) for n, w, g in self.weight_conv.param_items()]
        items += [("fusion_conv." + n, w, g) for n, w, g in self.fusion_conv.param_items()]
        return items

    def forward(self, f_masked, f_shadow, cache=False):
        if f_masked.shape != f_shadow.shape:
            raise ValueError(f"feature shapes differ: {f_masked.shape} vs {f_shadow.shape}")
        spec = self.spec
        if not spec.enabled:
            fused_in = np.concatenate([f_masked, f_shadow], axis=1)
            return self.fusion_conv.forward(fused_in, cache), None, None

        cat = np.concatenate([f_masked, f_shadow], axis=1)
        wraw = self.weight_conv.forward(cat, cache)
        wact = self.sig.forward(wraw, cache) if spec.use_sigmoid else wraw
        half = wact.shape[1] // 2
        w1, w2 = wact[:, :half], wact[:, half:]
        t1 = f_masked * w1 if spec.use_w1 else f_masked
        t2 = f_shadow * w2 if spec.use_w2 else f_shadow
        if spec.combine == "concat":
            fused_in = np.concatenate([t1, t2], axis=1)
        else:
            fused_in = t1 + t2
        if cache:
            self._fm, self._fs, self._w1, self._w2 = f_masked, f_shadow, w1, w2
        return self.fusion_conv.forward(fused_in, cache), w1, w2

    def backward(self, dout):
        spec = self.spec
        din = self.fusion_conv.backward(dout)
        c = self.feature_channels
        if not spec.enabled:
            return din[:, :c], din[:, c:]
        if spec.combine == "concat":
            dt1, dt2 = din[:, :c], din[:, c:]
        else:
            dt1 = dt2 = din
        if spec.use_w1:
            dfm = dt1 * self._w1
            dw1 = dt1 * self._fm
        else:
            dfm = dt1
            dw1 = np.zeros_like(dt1)
        if spec.use_w2:
            dfs = dt2 * self._w2
            dw2 = dt2 * self._fs
        else:
            dfs = dt2
            dw2 = np.zeros_like(dt2)
        dwact = np.concatenate([dw1, dw2], axis=1)
        dwraw = self.sig.backward(dwact) if spec.use_sigmoid else dwact
        dcat = self.weight_conv.backward(dwraw)
        half = dcat.shape[1] // 2
        return dfm + dcat[:, :half], dfs + dcat[:, half:]


class NaiveEncoderDecoder:
    """Single encoder-decoder mapping (image, mask) -> restored image.

    ``input_mode='image_mask'`` feeds [I, M] (4 channels);
    ``input_mode='concat_masked'`` feeds [I, I*(1-M), M] (7 channels).
    Output is clamped to [0, 1].
    """

    kind = "naive"

    def __init__(self, config=None, seed=0):
        config = config or EncoderDecoderConfig.default()
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1217]))
        self.config = config
        self.init_seed = int(seed)
        enc_layers, cur = _layers_from_specs(config.encoder, rng, config.in_channels)
        if cur != config.resnet_channels:
            raise ValueError(f"encoder emits {cur} channels, bottleneck wants "
                             f"{config.resnet_channels}")
        self.encoder = nn.Sequential(*enc_layers)
        self.bottleneck = nn.Sequential(
            *[nn.ResnetBlock(config.resnet_channels, rng) for _ in range(config.resnet_blocks)])
        dec_layers, cur = _layers_from_specs(config.decoder, rng, config.resnet_channels)
        if cur != 3:
            raise ValueError(f"decoder emits {cur} channels, expected 3")
        self.decoder = nn.Sequential(*dec_layers)
        self.out_clamp = nn.Clamp01()

    def param_items(self):
        items = [("encoder." + n, w, g) for n, w, g in self.encoder.param_items()]
        items += [("bottleneck." + n, w, g) for n, w, g in self.bottleneck.param_items()]
        items += [("decoder." + n, w, g) for n, w, g in self.decoder.param_items()]
        return items

    def zero_grad(self):
        for _, _, g in self.param_items():
            g[...] = 0.0

    def _assemble(self, images, masks):
        x = _to_nchw(images)
        m = _mask_batch(masks)
        if x.shape[2:] != m.shape[2:]:
            raise ValueError(f"image {x.shape[2:]} and mask {m.shape[2:]} dims differ")
        if self.config.input_mode == "concat_masked":
            return np.concatenate([x, x * (1.0 - m), m], axis=1)
        return np.concatenate([x, m], axis=1)

    def forward_batch(self, images, masks, cache=False):
        x = self._assemble(images, masks)
        h = self.encoder.forward(x, cache)
        h = self.bottleneck.forward(h, cache)
        h = self.decoder.forward(h, cache)
        return _to_bhwc(self.out_clamp.forward(h, cache))

    def backward_batch(self, dout):
        dh = self.out_clamp.backward(_to_nchw(dout))
        dh = self.decoder.backward(dh)
        dh = self.bottleneck.backward(dh)
        self.encoder.backward(dh)

    def restore(self, image, mask):
        return self.forward_batch(image[None] if image.ndim == 3 else image,
                                  mask[None] if mask.ndim == 2 else mask)[0]

    def restore_batch(self, images, masks):
        return self.forward_batch(images, masks, cache=False)


class FusionNet:
    """Two-encoder adaptive fusion network.

    phi sees the shadow-masked image [I*(1-M), M], psi the raw shadow image
    [I, M]; the fusion block blends their features, the shared decoder emits
    the restored image (clamped to [0,1]). ``zero_shadow_branch`` /
    ``zero_inpaint_branch`` zero one encoder's output at inference.
    """

    kind = "fusion"

    def __init__(self, config=None, seed=0):
        config = config or FusionNetConfig.default()
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1217]))
        self.config = config
        self.init_seed = int(seed)
        phi_layers, cur = _layers_from_specs(config.encoder, rng, config.in_channels)
        psi_layers, _ = _layers_from_specs(config.encoder, rng, config.in_channels)
        if cur != config.resnet_channels:
            raise ValueError(f"encoder emits {cur} channels, bottleneck wants "
                             f"{config.resnet_channels}")
        self.encoder_masked = nn.Sequential(*phi_layers)
        self.encoder_shadow = nn.Sequential(*psi_layers)
        self.fusion = FusionBlock(config.fusion, rng)
        self.bottleneck = nn.Sequential(
            *[nn.ResnetBlock(config.resnet_channels, rng) for _ in range(config.resnet_blocks)])
        dec_layers, cur = _layers_from_specs(config.decoder, rng, config.resnet_channels)
        if cur != 3:
            raise ValueError(f"decoder emits {cur} channels, expected 3")
        self.decoder = nn.Sequential(*dec_layers)
        self.out_clamp = nn.Clamp01()
        self.zero_shadow_branch = False
        self.zero_inpaint_branch = False

    def param_items(self):
        items = [("encoder_masked." + n, w, g) for n, w, g in self.encoder_masked.param_items()]
        items += [("encoder_shadow." + n, w, g) for n, w, g in self.encoder_shadow.param_items()]
        items += [("fusion." + n, w, g) for n, w, g in self.fusion.param_items()]
        items += [("bottleneck." + n, w, g) for n, w, g in self.bottleneck.param_items()]
        items += [("decoder." + n, w, g) for n, w, g in self.decoder.param_items()]
        return items

    def zero_grad(self):
        for _, _, g in self.param_items():
            g[...] = 0.0

    def forward_batch(self, images, masks, cache=False):
        """Returns (restored BHWC, W1, W2); weights are NCHW feature maps."""
        x = _to_nchw(images)
        m = _mask_batch(masks)
        if x.shape[2:] != m.shape[2:]:
            raise ValueError(f"image {x.shape[2:]} and mask {m.shape[2:]} dims differ")
        x_masked = x * (1.0 - m)
        f_masked = self.encoder_masked.forward(np.concatenate([x_masked, m], axis=1), cache)
        f_shadow = self.encoder_shadow.forward(np.concatenate([x, m], axis=1), cache)
        if self.zero_inpaint_branch:
            f_masked = np.zeros_like(f_masked)
        if self.zero_shadow_branch:
            f_shadow = np.zeros_like(f_shadow)
        fused, w1, w2 = self.fusion.forward(f_masked, f_shadow, cache)
        h = self.bottleneck.forward(fused, cache)
        h = self.decoder.forward(h, cache)
        out = self.out_clamp.forward(h, cache)
        return _to_bhwc(out), w1, w2

    def backward_batch(self, dout):
        dh = self.out_clamp.backward(_to_nchw(dout))
        dh = self.decoder.backward(dh)
        dh = self.bottleneck.backward(dh)
        dfm, dfs = self.fusion.backward(dh)
        if not self.zero_inpaint_branch:
            self.encoder_masked.backward(dfm)
        if not self.zero_shadow_branch:
            self.encoder_shadow.backward(dfs)

    def forward(self, shadow, mask, cache=False):
        """Single-image forward: (restored HWC, W1 (C,h,w), W2 (C,h,w))."""
        out, w1, w2 = self.forward_batch(shadow[None], mask[None], cache)
        return out[0], (w1[0] if w1 is not None else None), (w2[0] if w2 is not None else None)

    def restore(self, image, mask):
        return self.forward(image, mask)[0]

    def restore_batch(self, images, masks):
        return self.forward_batch(images, masks, cache=False)[0]


# ---------------------------------------------------------------------------
# spec-level operations

def build_naive_encoder_decoder(config=None, seed=0):
    return NaiveEncoderDecoder(config, seed)


def build_fusion_network(config=None, seed=0):
    return FusionNet(config, seed)


def forward_encoder(encoder, image, mask):
    """Run one encoder over [image, mask]; returns a (C, h, w) feature map."""
    x = _to_nchw(image[None] if image.ndim == 3 else image)
    m = _mask_batch(mask[None] if mask.ndim == 2 else mask)
    if x.shape[2:] != m.shape[2:]:
        raise ValueError("image and mask dims differ")
    return encoder.forward(np.concatenate([x, m], axis=1))[0]


def forward_fusion_block(block, f_masked, f_shadow):
    """Fuse two (C, h, w) feature maps; returns the fused (C, h, w) map."""
    fm = f_masked[None] if f_masked.ndim == 3 else f_masked
    fs = f_shadow[None] if f_shadow.ndim == 3 else f_shadow
    fused, _, _ = block.forward(fm, fs)
    return fused[0] if f_masked.ndim == 3 else fused


def forward_fusion_network(model, shadow, mask):
    """Restored image plus the fusion weights W1, W2 for visualization."""
    return model.forward(shadow, mask)


def clone_model(model):
    if model.kind == "fusion":
        twin = FusionNet(model.config, model.init_seed)
        twin.zero_shadow_branch = model.zero_shadow_branch
        twin.zero_inpaint_branch = model.zero_inpaint_branch
    else:
        twin = NaiveEncoderDecoder(model.config, model.init_seed)
    nn.set_params(twin, nn.get_params(model))
    return twin


def _base_channels_of(config):
    return config.encoder[0].out_channels


def make_ablation_variant(model, variant, seed=None):
    """Derive an ablation model.

    Structural variants (no_fusion, no_sigmoid, no_w1, no_w2, concat_input)
    build a fresh network; zero_shadow_branch / zero_inpaint_branch copy the
    given model's weights and intercept one encoder's output at inference.
    """
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"unknown ablation variant {variant!r}")
    if variant in ("zero_shadow_branch", "zero_inpaint_branch"):
        if model.kind != "fusion":
            raise ValueError("branch zero-out needs a fusion model")
        twin = clone_model(model)
        twin.zero_shadow_branch = variant == "zero_shadow_branch"
        twin.zero_inpaint_branch = variant == "zero_inpaint_branch"
        return twin
    seed = model.init_seed if seed is None else seed
    base = _base_channels_of(model.config)
    blocks = model.config.resnet_blocks
    if variant == "concat_input":
        cfg = EncoderDecoderConfig.default(base_channels=base, in_channels=7,
                                           input_mode="concat_masked", resnet_blocks=blocks)
        return NaiveEncoderDecoder(cfg, seed)
    if model.kind != "fusion":
        raise ValueError(f"variant {variant!r} needs a fusion model")
    flags = {"fusion_enabled": model.config.fusion.enabled,
             "use_sigmoid": model.config.fusion.use_sigmoid,
             "use_w1": model.config.fusion.use_w1,
             "use_w2": model.config.fusion.use_w2}
    if variant == "no_fusion":
        flags["fusion_enabled"] = False
    elif variant == "no_sigmoid":
        flags["use_sigmoid"] = False
    elif variant == "no_w1":
        flags["use_w1"] = False
    elif variant == "no_w2":
        flags["use_w2"] = False
    cfg = FusionNetConfig.default(base_channels=base, combine=model.config.fusion.combine,
                                  resnet_blocks=blocks, **flags)
    return FusionNet(cfg, seed)
