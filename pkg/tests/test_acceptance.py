"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with:  pytest -s -v tests/test_acceptance.py
"""

import csv
import functools
import json
import math
import time

import numpy as np

from shadowfuse import cli, data, evaluation as E, losses as L, networks, nn, training
from shadowfuse.checkpoint import load_model_checkpoint
from shadowfuse.networks import (EncoderDecoderConfig, FusionBlock, FusionBlockSpec,
                                 FusionNet, FusionNetConfig, conv, relu, tconv)

import conftest
from conftest import REPO, fd_input_grad, fd_param_grads, rel_err

DESK = dict(base_channels=8, image_size=64, batch_size=2, learning_rate=1e-3)


def gate(num, desc, budget_s):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            start = time.time()
            try:
                fn(*args, **kwargs)
            except BaseException:
                line = f"[FAIL] criterion {num}: {desc} ({time.time() - start:.1f}s)"
                print("\n" + line)
                conftest.ACCEPTANCE_LINES.append(line)
                raise
            elapsed = time.time() - start
            line = f"[PASS] criterion {num}: {desc} ({elapsed:.1f}s, budget {budget_s}s)"
            print("\n" + line)
            conftest.ACCEPTANCE_LINES.append(line)
            assert elapsed < budget_s, f"criterion {num} exceeded its {budget_s}s budget"
        return wrapper
    return deco


# ---------------------------------------------------------------------------
# 1. gradient fidelity

@gate(1, "fusion block and masked_l1 gradients match central finite differences", 5)
def test_criterion_1_gradient_fidelity():
    step, tol = 1e-4, 1e-3
    for seed in (0, 1, 2):
        rng = np.random.default_rng(seed)
        spec = FusionBlockSpec(weight_conv=conv(4, 4, 3, 1, 1),
                               fusion_conv=conv(4, 2, 3, 1, 1))
        block = FusionBlock(spec, rng)
        fm = rng.standard_normal((1, 2, 4, 4))
        fs = rng.standard_normal((1, 2, 4, 4))
        proj = rng.standard_normal((1, 2, 4, 4))

        out, _, _ = block.forward(fm, fs, cache=True)
        for _, _, g in block.param_items():
            g[...] = 0.0
        block.backward(proj)

        def loss():
            return float(np.sum(block.forward(fm, fs)[0] * proj))

        fd = fd_param_grads(block, loss, step=step)
        for name, w, g in block.param_items():
            err = rel_err(g, fd[name])
            assert err < tol, (name, err)

        # masked L1 on 4x4, 2-channel instances, away from the |.| kink
        pred = rng.uniform(0.2, 0.8, (4, 4, 2))
        target = pred + rng.choice([-1.0, 1.0], size=pred.shape) * rng.uniform(
            0.05, 0.2, pred.shape)
        mask = (rng.uniform(0, 1, (4, 4)) > 0.5).astype(float)
        _, grad = L.masked_l1_and_grad(pred, target, mask)
        fd_grad = fd_input_grad(pred, lambda: L.masked_l1(pred, target, mask), step=step)
        assert rel_err(grad, fd_grad) < tol


# ---------------------------------------------------------------------------
# 2. architecture conformance

@gate(2, "networks reproduce every reference-table shape", 5)
def test_criterion_2_architecture_conformance():
    # naive encoder-decoder, full width
    cfg = EncoderDecoderConfig.default()
    assert cfg.encoder == (conv(4, 64, 7, 1, 3), relu(),
                           conv(64, 128, 4, 2, 1), relu(),
                           conv(128, 256, 4, 2, 1), relu())
    assert (cfg.resnet_blocks, cfg.resnet_channels) == (8, 256)
    assert cfg.decoder == (tconv(256, 128, 4, 2, 1), relu(),
                           tconv(128, 64, 4, 2, 1), relu(),
                           conv(64, 3, 7, 1, 3))
    naive = networks.NaiveEncoderDecoder(cfg, seed=0)
    # per-layer input sizes for a 256x256 image: 256, 256, 128 -> 64
    shapes = [(4, 256, 256)]
    for layer in naive.encoder.layers:
        shapes.append(layer.out_shape(shapes[-1]))
    assert shapes[0][1:] == (256, 256) and shapes[2][1:] == (256, 256)
    assert shapes[4][1:] == (128, 128)
    assert shapes[-1] == (256, 64, 64)
    assert naive.bottleneck.out_shape((256, 64, 64)) == (256, 64, 64)
    dec = [(256, 64, 64)]
    for layer in naive.decoder.layers:
        dec.append(layer.out_shape(dec[-1]))
    assert dec[1] == (128, 128, 128) and dec[3] == (64, 256, 256)
    assert dec[-1] == (3, 256, 256)

    # fusion network: Conv(512,512) -> sigmoid -> multiply -> Conv(512,256)
    fcfg = FusionNetConfig.default()
    assert fcfg.fusion.weight_conv == conv(512, 512, 3, 1, 1)
    assert fcfg.fusion.fusion_conv == conv(512, 256, 3, 1, 1)
    assert fcfg.fusion.use_sigmoid
    fusion = FusionNet(fcfg, seed=0)
    assert fusion.encoder_masked.out_shape((4, 256, 256)) == (256, 64, 64)
    assert fusion.encoder_shadow.out_shape((4, 256, 256)) == (256, 64, 64)
    assert fusion.fusion.weight_conv.out_shape((512, 64, 64)) == (512, 64, 64)
    assert fusion.fusion.fusion_conv.out_shape((512, 64, 64)) == (256, 64, 64)
    assert fusion.decoder.out_shape((256, 64, 64)) == (3, 256, 256)

    # runtime check of the full-width channel chain on a smaller canvas
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, (64, 64, 3))
    mask = (rng.uniform(0, 1, (64, 64)) > 0.8).astype(float)
    out, w1, w2 = fusion.forward(img, mask)
    assert out.shape == (64, 64, 3)
    assert w1.shape == (256, 16, 16) and w2.shape == (256, 16, 16)
    feat = networks.forward_encoder(fusion.encoder_masked, img, mask)
    assert feat.shape == (256, 16, 16)

    # parameter count equals the layer-wise counting oracle
    expected = (2 * networks.spec_parameter_count(fcfg.encoder)
                + networks.spec_parameter_count([fcfg.fusion.weight_conv,
                                                 fcfg.fusion.fusion_conv])
                + networks.spec_parameter_count(fcfg.decoder)
                + 8 * 2 * (9 * 256 * 256 + 256))
    assert nn.parameter_count(fusion) == expected


# ---------------------------------------------------------------------------
# 3. metric oracles

@gate(3, "metrics match independent brute-force/closed-form oracles", 30)
def test_criterion_3_metric_oracles():
    rng = np.random.default_rng(42)
    from test_evaluation import exhaustive_otsu, lab_scalar_oracle, ssim_loop_oracle

    for _ in range(20):
        # region_rmse vs per-pixel loop
        pred = rng.uniform(0, 1, (4, 4, 3))
        gt = rng.uniform(0, 1, (4, 4, 3))
        mask = (rng.uniform(0, 1, (4, 4)) > 0.5).astype(float)
        lp, lg = E.rgb_to_lab(pred), E.rgb_to_lab(gt)
        for region, keep in (("all", lambda m: True), ("shadow", lambda m: m == 1),
                             ("non_shadow", lambda m: m == 0)):
            acc = [abs(lp[i, j, c] - lg[i, j, c])
                   for i in range(4) for j in range(4) for c in range(3)
                   if keep(mask[i, j])]
            if acc:
                assert abs(E.region_rmse(pred, gt, mask, region) - np.mean(acc)) < 1e-6

        # psnr closed form
        p, q = rng.uniform(0, 1, (5, 5, 3)), rng.uniform(0, 1, (5, 5, 3))
        mse = sum((float(a) - float(b)) ** 2 for a, b in
                  zip(p.ravel(), q.ravel())) / p.size
        assert abs(E.psnr(p, q) - 10 * math.log10(1.0 / mse)) < 1e-6

        # gram double loop
        f = rng.standard_normal((3, 2, 2))
        g = L.gram(f)
        for i in range(3):
            for j in range(3):
                assert abs(g[i, j] - float((f[i] * f[j]).sum()) / f.size) < 1e-6

        # rgb_to_lab vs published scalar formulas
        col = rng.uniform(0, 1, 3)
        assert np.abs(np.asarray(lab_scalar_oracle(*col))
                      - E.rgb_to_lab(col.reshape(1, 1, 3))[0, 0]).max() < 1e-6

        # otsu vs exhaustive 256-threshold search (exact)
        levels = np.clip(np.round(rng.uniform(0, 1, (12, 12)) * 255), 0, 255).astype(int)
        hist = np.bincount(levels.ravel(), minlength=256)
        assert E.otsu_threshold(hist) == exhaustive_otsu(hist)

    for _ in range(20):  # ssim vs direct-formula loop
        x = rng.uniform(0, 1, (16, 16, 3))
        y = rng.uniform(0, 1, (16, 16, 3))
        assert abs(E.ssim(x, y) - ssim_loop_oracle(x, y)) < 1e-6

    # LAB round trip at 1e-4 on 1000 random colors
    cols = rng.uniform(0, 1, (1000, 1, 3))
    assert np.abs(E.lab_to_rgb(E.rgb_to_lab(cols)) - cols).max() < 1e-4


# ---------------------------------------------------------------------------
# 4. loss identities

@gate(4, "reconstruction losses vanish at identity; weighted total is exact", 5)
def test_criterion_4_loss_identities():
    rng = np.random.default_rng(7)
    ex = L.FeatureExtractor(seed=1, base_channels=4)
    for _ in range(5):
        img = rng.uniform(0, 1, (16, 16, 3))
        mask = (rng.uniform(0, 1, (16, 16)) > 0.5).astype(float)
        assert L.masked_l1(img, img, mask) == 0.0
        assert L.perceptual_loss(ex, img, img) == 0.0
        assert L.style_loss(ex, img, img, mask) == 0.0
    weights = L.LossWeights()
    total = L.total_inpaint_loss(weights, (1.0, 1.0, 1.0, 1.0))
    assert total == 1 * 1.0 + 0.1 * 1.0 + 0.1 * 1.0 + 250 * 1.0
    assert total == 251.2


# ---------------------------------------------------------------------------
# 5. desk-scale training signal

@gate(5, "300 pretrain iterations halve L1; 300 finetune iterations beat identity", 600)
def test_criterion_5_training_signal(tmp_path):
    inpaint = data.generate_synthetic_inpaint(5, 16, size=DESK["image_size"])
    model = FusionNet(FusionNetConfig.default(base_channels=DESK["base_channels"]), seed=1)
    cfg = training.TrainConfig(stage="pretrain", iterations=300,
                               batch_size=DESK["batch_size"],
                               learning_rate=DESK["learning_rate"], seed=7,
                               checkpoint_every=100, log_every=1)
    manifest = training.pretrain(model, inpaint, cfg, tmp_path / "pre")
    assert len(manifest.checkpoint_paths) == 3  # every 100 of 300, plus final
    assert manifest.final_checkpoint.endswith("ckpt_final.sfck")
    l1 = [row["loss_l1"] for row in manifest.loss_curve]
    first10 = float(np.mean(l1[:10]))
    last10 = float(np.mean(l1[-10:]))
    print(f"\n  pretrain l1: first-10 avg {first10:.4f} -> last-10 avg {last10:.4f}")
    assert last10 < 0.5 * first10

    full = data.generate_synthetic_shadow(3, 40, size=DESK["image_size"])
    train, holdout = full[:32], full[32:]
    ft_model = FusionNet(FusionNetConfig.default(base_channels=DESK["base_channels"]), seed=2)
    ft_cfg = training.TrainConfig(stage="finetune", iterations=300,
                                  batch_size=DESK["batch_size"],
                                  learning_rate=DESK["learning_rate"], seed=7,
                                  checkpoint_every=300, log_every=1)
    training.finetune(ft_model, train, ft_cfg, tmp_path / "ft")
    trained = E.evaluate_dataset(ft_model, holdout).regions["shadow"]["rmse"]
    baseline = E.evaluate_dataset(E.identity_model, holdout).regions["shadow"]["rmse"]
    print(f"  held-out shadow RMSE: trained {trained:.3f} vs identity {baseline:.3f}")
    assert trained < baseline


# ---------------------------------------------------------------------------
# 6. pretraining benefit direction

@gate(6, "finetune-from-pretrained beats finetune-from-random (3-seed mean)", 1800)
def test_criterion_6_pretraining_benefit(tmp_path):
    size = DESK["image_size"]
    full = data.generate_synthetic_shadow(3, 40, size=size)
    train, holdout = full[:32], full[32:]
    inpaint = data.generate_synthetic_inpaint(5, 16, size=size)

    pretrained_rmse, random_rmse = [], []
    for seed in (0, 1, 2):
        net_cfg = FusionNetConfig.default(base_channels=DESK["base_channels"])
        pre_cfg = training.TrainConfig(stage="pretrain", iterations=300,
                                       batch_size=DESK["batch_size"],
                                       learning_rate=DESK["learning_rate"], seed=seed,
                                       checkpoint_every=300, log_every=10,
                                       resample_masks=True)
        ft_cfg = training.TrainConfig(stage="finetune", iterations=300,
                                      batch_size=DESK["batch_size"],
                                      learning_rate=DESK["learning_rate"], seed=seed + 100,
                                      checkpoint_every=300, log_every=10)
        warm = FusionNet(net_cfg, seed=seed)
        pre = training.pretrain(warm, inpaint, pre_cfg, tmp_path / f"pre{seed}")
        warm_ft = training.finetune(pre.final_checkpoint, train, ft_cfg,
                                    tmp_path / f"warm{seed}")
        warm_model, _, _ = load_model_checkpoint(warm_ft.final_checkpoint)
        pretrained_rmse.append(
            E.evaluate_dataset(warm_model, holdout).regions["shadow"]["rmse"])

        cold = FusionNet(net_cfg, seed=seed)
        training.finetune(cold, train, ft_cfg, tmp_path / f"cold{seed}")
        random_rmse.append(
            E.evaluate_dataset(cold, holdout).regions["shadow"]["rmse"])
        print(f"\n  seed {seed}: pretrained {pretrained_rmse[-1]:.4f} "
              f"random {random_rmse[-1]:.4f}")

    mean_pre = float(np.mean(pretrained_rmse))
    mean_rand = float(np.mean(random_rmse))
    print(f"  seed-averaged shadow RMSE: pretrained {mean_pre:.4f} "
          f"vs random {mean_rand:.4f}")
    assert mean_pre <= mean_rand


# ---------------------------------------------------------------------------
# 7. ablation harness

@gate(7, "all 7 cmd_ablate variants complete; zero_* never update parameters", 900)
def test_criterion_7_ablation_harness(tmp_path):
    out = tmp_path / "run"
    cfg_text = (REPO / "configs" / "desk_scale.toml").read_text()
    cfg_path = tmp_path / "desk.toml"
    cfg_path.write_text(cfg_text.replace('out_dir = "runs/desk"',
                                         f'out_dir = "{out.as_posix()}"'))
    for variant in networks.ABLATION_VARIANTS:
        assert cli.main(["ablate", "--config", str(cfg_path),
                         "--variant", variant]) == 0, variant
        if variant.startswith("zero_"):
            assert not (out / "ablate" / f"train_{variant}").exists()

    with open(out / "ablate" / "ablation_report.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == len(networks.ABLATION_VARIANTS) * 3
    assert {r["variant"] for r in rows} == set(networks.ABLATION_VARIANTS)

    # zero_* is inference-only: weights stay bit-identical through evaluation
    from shadowfuse.config import load_experiment_config
    cfg = load_experiment_config(cfg_path)
    base = cfg.build_model()
    for variant in ("zero_shadow_branch", "zero_inpaint_branch"):
        model = networks.make_ablation_variant(base, variant)
        before = {n: w.copy() for n, w, _ in model.param_items()}
        _, holdout = cfg.shadow_datasets()
        E.evaluate_dataset(model, holdout, mask_source=cfg.eval.mask_source)
        for n, w, _ in model.param_items():
            assert np.array_equal(before[n], w), (variant, n)


# ---------------------------------------------------------------------------
# 8. determinism

@gate(8, "same seed gives bit-identical checkpoints and reports", 900)
def test_criterion_8_determinism(tmp_path):
    cfg_text = (REPO / "configs" / "desk_scale.toml").read_text()
    cfg_text = cfg_text.replace("iterations = 300", "iterations = 40")
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        cfg_path = tmp_path / f"{name}.toml"
        cfg_path.write_text(cfg_text.replace('out_dir = "runs/desk"',
                                             f'out_dir = "{out.as_posix()}"'))
        assert cli.main(["pretrain", "--config", str(cfg_path)]) == 0
        runs.append(out)
    ck_a = (runs[0] / "pretrain" / "ckpt_final.sfck").read_bytes()
    ck_b = (runs[1] / "pretrain" / "ckpt_final.sfck").read_bytes()
    assert ck_a == ck_b

    # manifests agree modulo wall-clock fields
    ma = json.loads((runs[0] / "pretrain" / "manifest.json").read_text())
    mb = json.loads((runs[1] / "pretrain" / "manifest.json").read_text())
    for m, root in ((ma, runs[0]), (mb, runs[1])):
        m.pop("wall_clock")
        m["checkpoint_paths"] = [p.replace(root.as_posix(), "") for p in m["checkpoint_paths"]]
        m["final_checkpoint"] = m["final_checkpoint"].replace(root.as_posix(), "")
    assert ma == mb

    dataset = tmp_path / "ds"
    assert cli.main(["synth", "--count", "6", "--seed", "4", "--out", str(dataset),
                     "--size", "64"]) == 0
    reports = []
    for name in ("ra", "rb"):
        out = tmp_path / name
        assert cli.main(["eval", "--checkpoint",
                         str(runs[0] / "pretrain" / "ckpt_final.sfck"),
                         "--data", str(dataset), "--size", "64",
                         "--out", str(out)]) == 0
        reports.append(out)
    assert (reports[0] / "report.json").read_bytes() == (reports[1] / "report.json").read_bytes()
    assert (reports[0] / "report.csv").read_bytes() == (reports[1] / "report.csv").read_bytes()


# ---------------------------------------------------------------------------
# 9. checkpoint resume

@gate(9, "train 200 equals 100 + resume + 100 bit for bit", 300)
def test_criterion_9_checkpoint_resume(tmp_path):
    size = DESK["image_size"]
    shadow = data.generate_synthetic_shadow(3, 16, size=size)

    def cfg(iters):
        return training.TrainConfig(stage="finetune", iterations=iters,
                                    batch_size=DESK["batch_size"],
                                    learning_rate=DESK["learning_rate"], seed=5,
                                    checkpoint_every=100, log_every=10)

    straight = FusionNet(FusionNetConfig.default(base_channels=DESK["base_channels"]), seed=3)
    training.finetune(straight, shadow, cfg(200), tmp_path / "straight")

    half = FusionNet(FusionNetConfig.default(base_channels=DESK["base_channels"]), seed=3)
    m1 = training.finetune(half, shadow, cfg(100), tmp_path / "half")
    resumed = FusionNet(FusionNetConfig.default(base_channels=DESK["base_channels"]), seed=3)
    training.finetune(resumed, shadow, cfg(200), tmp_path / "resumed",
                      resume_from=m1.final_checkpoint)

    for (n1, w1, _), (n2, w2, _) in zip(straight.param_items(), resumed.param_items()):
        assert np.array_equal(w1, w2), n1
