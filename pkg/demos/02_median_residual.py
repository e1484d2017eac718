"""Residual-over-median restoration, before any training.

The restoration pipeline is clamp(median(x) + G(2*(x - median(x)))). The
generator's output conv is zero-initialized, so a fresh model *is* the
median filter, bit for bit. This script shows that identity and how far
a plain median already gets on dusty images.
"""

import numpy as np

from descratch import arch, degrade, metrics

rng = np.random.default_rng(0)
h = w = 96
yy, xx = np.mgrid[0:h, 0:w] / 96.0
clean = np.clip(0.5 + 0.35 * np.sin(2 * np.pi * (2 * xx + yy))[None]
                * np.ones((3, 1, 1)), 0.02, 0.98)
pair = degrade.composite(clean, degrade.sample_specs(3, (h, w), "heavy"))

cfg = arch.GeneratorConfig()
params, bn = arch.generator_init(cfg, seed=0)
print(f"generator parameters: {params.count():,}")

restored = arch.restore(pair.corrupted[None], params, cfg, bn, median_k=5)[0]
median = np.clip(degrade.median_filter(pair.corrupted, 5), 0.0, 1.0)
assert np.array_equal(restored, median)
print("fresh model output == 5x5 median, bit-exact")

for name, img in [("corrupted", pair.corrupted), ("median / fresh model", median)]:
    print(f"{name:>22}: PSNR {metrics.psnr(img, clean):6.2f} dB, "
          f"SSIM {metrics.ssim(img, clean):.4f}")

# the discriminator side: default ladder has a 70x70 receptive field and
# collapses a 70x70 input to a single score
d_cfg = arch.DiscriminatorConfig()
print(f"discriminator receptive field: {d_cfg.receptive_field()}")
d_params, d_bn = arch.discriminator_init(d_cfg, seed=1)
from descratch.tensorops import Tensor
score = arch.discriminator_forward(
    Tensor(rng.standard_normal((1, 3, 70, 70)).astype(np.float32)),
    d_params, d_cfg, "eval", d_bn)
print(f"score map for a 70x70 input: {score.shape}")
