"""The four training loss terms and the evaluation metrics, side by side.

Computes pixel, gradient, perceptual, and adversarial losses between a
corrupted patch and its clean target, combines them with the default
weights, and contrasts that with PSNR/SSIM on the same pair.
"""

import numpy as np

from descratch import arch, degrade, loss, metrics
from descratch.tensorops import Tensor

rng = np.random.default_rng(5)
clean = rng.random((3, 64, 64)) * 0.6 + 0.2
pair = degrade.composite(clean, degrade.sample_specs(9, (64, 64), "medium"))

t = Tensor(pair.clean[None])
t_hat = Tensor(pair.corrupted[None])

extractor = loss.ContentExtractor.fixed_random(seed=0)
pix = loss.pixel_loss(t_hat, t)
grad = loss.gradient_loss(t_hat, t)
perc = loss.perceptual_loss(t_hat, t, extractor)

# adversarial terms need a discriminator; score the residuals over the
# median baseline like the training loop does
med = degrade.median_filter(pair.corrupted[None], 5)
d_cfg = arch.DiscriminatorConfig.reduced_for_patch(64)
d_params, d_bn = arch.discriminator_init(d_cfg, seed=2)
d_real = arch.discriminator_forward(Tensor((pair.clean[None] - med).astype(np.float32)),
                                    d_params, d_cfg, "eval", d_bn)
d_fake = arch.discriminator_forward(Tensor((pair.corrupted[None] - med).astype(np.float32)),
                                    d_params, d_cfg, "eval", d_bn)
d_loss, g_loss = loss.adversarial_losses(d_real, d_fake)

weights = loss.LossWeights()
total = loss.total_loss((pix, grad, perc, g_loss), weights)

print(f"pixel      (w={weights.w1}):  {pix.item():.6f}")
print(f"gradient   (w={weights.w2}):  {grad.item():.6f}")
print(f"perceptual (w={weights.w3}):  {perc.item():.6f}")
print(f"adv (G)    (w={weights.w4}): {g_loss.item():.6f}   [adv (D): {d_loss.item():.6f}]")
print(f"total: {total.item():.6f}")

print()
print(f"PSNR(corrupted, clean): {metrics.psnr(pair.corrupted, clean):.2f} dB")
print(f"SSIM(corrupted, clean): {metrics.ssim(pair.corrupted, clean):.4f}")
print(f"PSNR(clean, clean): {metrics.psnr(clean, clean)}  (+inf sentinel)")

# a report over several pairs
ref, rest = {}, {}
for k in range(3):
    c = rng.random((3, 48, 48)) * 0.6 + 0.2
    p = degrade.composite(c, degrade.sample_specs(k, (48, 48), "light"))
    ref[f"pair{k}"], rest[f"pair{k}"] = c, p.corrupted
print()
print(metrics.evaluate(rest, ref).to_table())
