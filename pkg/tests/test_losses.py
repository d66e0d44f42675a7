import logging

import numpy as np
import pytest

from shadowfuse import losses as L

from conftest import fd_input_grad, rel_err


def test_masked_l1_identity():
    img = np.random.default_rng(0).uniform(0, 1, (8, 8, 3))
    mask = np.ones((8, 8))
    assert L.masked_l1(img, img, mask) == 0.0


def test_masked_l1_scalar_case():
    # uniform |diff| 0.1, Mean(M) = 0.25 -> 0.1 / 0.25 = 0.4
    pred = np.zeros((2, 2, 1))
    target = np.full((2, 2, 1), 0.1)
    mask = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert abs(L.masked_l1(pred, target, mask) - 0.4) < 1e-12


def test_masked_l1_all_ones_mask_is_plain_mae(rng):
    pred = rng.uniform(0, 1, (6, 6, 3))
    target = rng.uniform(0, 1, (6, 6, 3))
    assert L.masked_l1(pred, target, np.ones((6, 6))) == pytest.approx(
        float(np.abs(pred - target).mean()), abs=1e-15)


def test_masked_l1_empty_mask_guard(rng, caplog):
    pred = rng.uniform(0, 1, (4, 4, 3))
    target = rng.uniform(0, 1, (4, 4, 3))
    with caplog.at_level(logging.WARNING):
        v = L.masked_l1(pred, target, np.zeros((4, 4)))
    assert v == pytest.approx(float(np.abs(pred - target).mean()))
    assert any("mask is empty" in r.message for r in caplog.records)


def test_masked_l1_gradient_vs_fd(rng):
    pred = rng.uniform(0.1, 0.9, (4, 4, 3))
    target = rng.uniform(0.1, 0.9, (4, 4, 3))
    # keep |pred - target| away from the kink so central differences are clean
    target += 0.05 * np.sign(pred - target)
    mask = (rng.uniform(0, 1, (4, 4)) > 0.5).astype(float)
    _, g = L.masked_l1_and_grad(pred, target, mask)
    fd = fd_input_grad(pred, lambda: L.masked_l1(pred, target, mask), step=1e-6)
    assert rel_err(g, fd) < 1e-5


def test_masked_l1_pixel_order_invariance(rng):
    pred = rng.uniform(0, 1, (5, 5, 3))
    target = rng.uniform(0, 1, (5, 5, 3))
    mask = (rng.uniform(0, 1, (5, 5)) > 0.5).astype(float)
    v = L.masked_l1(pred, target, mask)
    perm = rng.permutation(25)
    pv = L.masked_l1(pred.reshape(25, 1, 3)[perm], target.reshape(25, 1, 3)[perm],
                     mask.reshape(25, 1)[perm])
    assert v == pytest.approx(pv, rel=1e-12)


def test_gan_examples():
    gen, _ = L.gan_losses(np.array([0.9]), np.full(5, 0.5))
    assert gen == pytest.approx(np.log(2.0), abs=1e-12)
    _, disc = L.gan_losses(np.array([1.0 - 1e-7]), np.array([1e-7]))
    assert abs(disc) < 1e-6  # zero up to epsilon terms


def test_gan_monotonicity(rng):
    f = rng.uniform(0.1, 0.8, 16)
    lo, _ = L.gan_losses(np.array([0.5]), f)
    hi, _ = L.gan_losses(np.array([0.5]), f + 0.1)
    assert hi < lo


def test_gan_literal_mode_formulas(rng):
    r = rng.uniform(0.2, 0.8, 8)
    f = rng.uniform(0.2, 0.8, 8)
    gen, disc = L.gan_losses(r, f, mode="literal")
    assert gen == pytest.approx(float(np.mean(np.log(1 - f))), abs=1e-12)
    assert disc == pytest.approx(0.5 * float(np.mean(np.log(f)))
                                 + 0.5 * float(np.mean(np.log(1 - r))), abs=1e-12)


def test_gan_probability_clamping():
    gen, disc = L.gan_losses(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    assert np.isfinite(gen) and np.isfinite(disc)
    with pytest.raises(ValueError):
        L.gan_losses(np.array([0.5]), np.array([0.5]), mode="wat")


def test_gan_grads_vs_fd(rng):
    f = rng.uniform(0.2, 0.8, (2, 1, 3, 3))
    r = rng.uniform(0.2, 0.8, (2, 1, 3, 3))
    for mode in ("nonsaturating", "literal"):
        g = L.gen_gan_grad(f, mode)
        fd = fd_input_grad(f, lambda: L.gan_losses(r, f, mode)[0], step=1e-6)
        assert rel_err(g, fd) < 1e-6
        dr, df = L.disc_gan_grads(r, f, mode)
        fdr = fd_input_grad(r, lambda: L.gan_losses(r, f, mode)[1], step=1e-6)
        fdf = fd_input_grad(f, lambda: L.gan_losses(r, f, mode)[1], step=1e-6)
        assert rel_err(dr, fdr) < 1e-6
        assert rel_err(df, fdf) < 1e-6


def test_perceptual_identity_and_symmetry(rng):
    ex = L.FeatureExtractor(seed=3, base_channels=4)
    a = rng.uniform(0, 1, (16, 16, 3))
    b = rng.uniform(0, 1, (16, 16, 3))
    assert L.perceptual_loss(ex, a, a) == 0.0
    assert L.perceptual_loss(ex, a, b) == pytest.approx(L.perceptual_loss(ex, b, a), abs=1e-15)
    with pytest.raises(ValueError):
        L.perceptual_loss(None, a, b)


def test_perceptual_linear_scaling_probe(rng):
    # at a ReLU-stable operating point, doubling the input difference doubles
    # each tap's contribution
    ex = L.FeatureExtractor(seed=5, base_channels=4)
    base = rng.uniform(0.3, 0.7, (16, 16, 3))
    d = rng.standard_normal((16, 16, 3))
    eps = 1e-4
    v1 = L.perceptual_loss(ex, base + eps * d, base)
    v2 = L.perceptual_loss(ex, base + 2 * eps * d, base)
    assert v2 == pytest.approx(2.0 * v1, rel=1e-3)


def test_gram_cases(rng):
    assert np.array_equal(L.gram(np.zeros((3, 4, 4))), np.zeros((3, 3)))
    f = np.array([[[1.0, 2.0]], [[3.0, 4.0]]])  # (2, 1, 2)
    g = L.gram(f)
    expect = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            expect[i, j] = float((f[i] * f[j]).sum()) / (2 * 1 * 2)
    assert np.allclose(g, expect, atol=1e-15)

    f = rng.standard_normal((5, 3, 4))
    g = L.gram(f)
    assert np.allclose(g, g.T, atol=1e-15)
    assert np.linalg.eigvalsh(g).min() > -1e-12  # PSD
    assert np.trace(g) == pytest.approx(float((f ** 2).sum()) / f.size, rel=1e-12)


def test_style_identities(rng):
    ex = L.FeatureExtractor(seed=7, base_channels=4)
    a = rng.uniform(0, 1, (16, 16, 3))
    b = rng.uniform(0, 1, (16, 16, 3))
    mask = (rng.uniform(0, 1, (16, 16)) > 0.4).astype(float)
    assert L.style_loss(ex, a, a, mask) == 0.0
    assert L.style_loss(ex, a, b, np.zeros((16, 16))) == 0.0


def test_style_composition_oracle(rng):
    # independent recomputation: taps of the mask-multiplied images -> loop
    # gram -> L1 between grams, summed over taps
    ex = L.FeatureExtractor(seed=7, base_channels=4)
    a = rng.uniform(0, 1, (16, 16, 3))
    b = rng.uniform(0, 1, (16, 16, 3))
    mask = (rng.uniform(0, 1, (16, 16)) > 0.4).astype(float)
    got = L.style_loss(ex, a, b, mask)

    def taps(img):
        x = (img * mask[..., None]).transpose(2, 0, 1)[None]
        return [t[0] for t in ex.features(x)]

    def gram_loop(f):
        c = f.shape[0]
        g = np.zeros((c, c))
        for i in range(c):
            for j in range(c):
                g[i, j] = float((f[i] * f[j]).sum()) / f.size
        return g

    expect = 0.0
    for fa, fb in zip(taps(a), taps(b)):
        expect += float(np.abs(gram_loop(fa) - gram_loop(fb)).mean())
    assert got == pytest.approx(expect, rel=1e-12)


def test_perceptual_and_style_grads_vs_fd(rng):
    ex = L.FeatureExtractor(seed=2, base_channels=2)
    pred = rng.uniform(0.2, 0.8, (8, 8, 3))
    target = rng.uniform(0.2, 0.8, (8, 8, 3))
    mask = (rng.uniform(0, 1, (8, 8)) > 0.5).astype(float)
    _, gp = L.perceptual_loss_and_grad(ex, pred, target)
    fdp = fd_input_grad(pred, lambda: L.perceptual_loss(ex, pred, target), step=1e-6)
    assert rel_err(gp, fdp) < 1e-4
    _, gs = L.style_loss_and_grad(ex, pred, target, mask)
    fds = fd_input_grad(pred, lambda: L.style_loss(ex, pred, target, mask), step=1e-6)
    assert rel_err(gs, fds) < 1e-4


def test_total_inpaint_loss():
    w = L.LossWeights()
    assert (w.lambda1, w.lambda2, w.lambda3, w.lambda4) == (1.0, 0.1, 0.1, 250.0)
    assert L.total_inpaint_loss(w, (0.0, 0.0, 0.0, 0.0)) == 0.0
    assert L.total_inpaint_loss(w, (1.0, 1.0, 1.0, 1.0)) == 251.2
    zero = L.LossWeights(0.0, 0.0, 0.0, 0.0)
    assert L.total_inpaint_loss(zero, (3.0, 5.0, 7.0, 9.0)) == 0.0
    with pytest.raises(ValueError, match="perc"):
        L.total_inpaint_loss(w, (1.0, 1.0, float("nan"), 1.0))
    with pytest.raises(ValueError):
        L.LossWeights(-1.0, 0.1, 0.1, 250.0)
    assert L.total_inpaint_loss(w, {"l1": 1.0, "gan": 1.0, "perc": 1.0, "style": 1.0}) == 251.2


def test_losses_nonnegative_and_zero_at_identity(rng):
    ex = L.FeatureExtractor(seed=1, base_channels=2)
    for _ in range(10):
        img = rng.uniform(0, 1, (16, 16, 3))
        other = rng.uniform(0, 1, (16, 16, 3))
        mask = (rng.uniform(0, 1, (16, 16)) > 0.5).astype(float)
        assert L.masked_l1(img, img, mask) == 0.0
        assert L.perceptual_loss(ex, img, img) == 0.0
        assert L.style_loss(ex, img, img, mask) == 0.0
        assert L.masked_l1(img, other, mask) >= 0.0
        assert L.perceptual_loss(ex, img, other) >= 0.0
        assert L.style_loss(ex, img, other, mask) >= 0.0


def test_extractor_save_load_and_taps(tmp_path, rng):
    ex = L.FeatureExtractor(seed=4, base_channels=4)
    assert len(ex.tap_names) == 5
    img = rng.uniform(0, 1, (1, 3, 16, 16))
    taps = ex.features(img)
    assert len(taps) == 5
    assert taps[0].shape == (1, 4, 16, 16)
    assert taps[1].shape == (1, 8, 8, 8)
    ex.save(tmp_path / "ext.sfck")
    ex2 = L.FeatureExtractor(seed=99, base_channels=4).load(tmp_path / "ext.sfck")
    for a, b in zip(ex.features(img), ex2.features(img)):
        assert np.array_equal(a, b)


def test_discriminator_contract(rng):
    d = L.PatchDiscriminator(base_channels=4, seed=0)
    out = d.forward(rng.uniform(0, 1, (2, 32, 32, 3)))
    assert out.shape[0] == 2 and out.shape[1] == 1
    assert np.all(out > 0.0) and np.all(out < 1.0)
