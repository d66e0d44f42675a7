"""The pretraining loss suite: masked L1, adversarial, perceptual, style.

Pretraining optimizes lambda1*L1 + lambda2*GAN + lambda3*Perc + lambda4*Style
with defaults (1, 0.1, 0.1, 250); fine-tuning keeps only the masked L1.
"""

import _bootstrap  # noqa: F401

import numpy as np

from shadowfuse import data, losses

rng = np.random.default_rng(0)

sample = data.generate_synthetic_inpaint(seed=2, count=1, size=64)[0]
pred = np.clip(sample.clean + rng.normal(0, 0.05, sample.clean.shape), 0, 1)

# masked L1: the mean absolute error weighted by 1/Mean(M), so sparse masks
# do not drown the corrupted region
l1 = losses.masked_l1(pred, sample.clean, sample.mask)
plain = float(np.abs(pred - sample.clean).mean())
print(f"masked L1 {l1:.4f}  (plain MAE {plain:.4f}, mask covers {sample.mask.mean():.1%})")

# adversarial pieces from a patch discriminator
disc = losses.PatchDiscriminator(base_channels=8, seed=0)
d_real = disc.forward(sample.clean[None])
d_fake = disc.forward(pred[None])
gen, dsc = losses.gan_losses(d_real, d_fake)
print(f"GAN: generator {gen:.4f}, discriminator {dsc:.4f} "
      f"(patch grid {d_fake.shape[2]}x{d_fake.shape[3]})")
print(f"  at D(fake)=0.5 the generator loss is log 2 = "
      f"{losses.gan_losses(d_real, np.full(4, 0.5))[0]:.4f}")

# perceptual + style over a fixed random 5-tap feature stack
extractor = losses.FeatureExtractor(seed=0, base_channels=8)
perc = losses.perceptual_loss(extractor, pred, sample.clean)
style = losses.style_loss(extractor, pred, sample.clean, sample.mask)
print(f"perceptual {perc:.4f}, style {style:.6f} over {len(extractor.tap_names)} taps")

# the Gram matrix behind the style term
taps = extractor.features(pred.transpose(2, 0, 1)[None])
g = losses.gram(taps[0][0])
print(f"tap1 Gram matrix {g.shape}, trace {np.trace(g):.4f} "
      f"(= mean squared activation)")

weights = losses.LossWeights()
total = losses.total_inpaint_loss(weights, (l1, gen, perc, style))
print(f"total pretraining loss {total:.4f} with lambdas "
      f"({weights.lambda1}, {weights.lambda2}, {weights.lambda3}, {weights.lambda4})")

# identities the tests pin down
assert losses.masked_l1(pred, pred, sample.mask) == 0.0
assert losses.total_inpaint_loss(weights, (1.0, 1.0, 1.0, 1.0)) == 251.2
print("identity checks passed: zero at pred==target, unit components -> 251.2")
