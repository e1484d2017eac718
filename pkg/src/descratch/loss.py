"""The four training loss terms and their weighted combination.

pixel: MSE. gradient: MSE of forward differences along x and y.
perceptual: size-normalized L1 distance between frozen-extractor feature
maps, summed over feature levels. adversarial: non-saturating GAN losses
on raw (pre-sigmoid) patch scores, computed through softplus so scores
of any practical magnitude stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorops as T
from .tensorops import ConvParams, ShapeError, Tensor


@dataclass(frozen=True)
class LossWeights:
    w1: float = 1.0   # pixel
    w2: float = 2.0   # gradient
    w3: float = 1.0   # perceptual
    w4: float = 0.01  # adversarial

    def __post_init__(self):
        for name in ("w1", "w2", "w3", "w4"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")

    def as_tuple(self):
        return (self.w1, self.w2, self.w3, self.w4)


def _check_same_shape(a: Tensor, b: Tensor, what: str):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def pixel_loss(t_hat: Tensor, t: Tensor) -> Tensor:
    """Mean squared elementwise difference."""
    _check_same_shape(t_hat, t, "pixel_loss")
    d = t_hat - t
    return T.mean(d * d)


def gradient_loss(t_hat: Tensor, t: Tensor) -> Tensor:
    """MSE of forward differences along x plus the same along y."""
    _check_same_shape(t_hat, t, "gradient_loss")
    if t.shape[2] < 2 or t.shape[3] < 2:
        raise ShapeError("gradient_loss needs h, w >= 2")
    dx = T.diff_x(t_hat) - T.diff_x(t)
    dy = T.diff_y(t_hat) - T.diff_y(t)
    return T.mean(dx * dx) + T.mean(dy * dy)


class ContentExtractor:
    """Frozen feature extractor for the perceptual loss.

    The default is a fixed-seed 5-layer convnet (3->16->32->32->64->64
    channels, stride 2 at layers 2 and 4) whose post-ReLU maps are the
    feature levels. Weights never require gradients, so the loss only
    ever differentiates through its inputs. An externally trained
    extractor can be supplied through `from_layers`.
    """

    def __init__(self, layers, provenance: str):
        # layers: list of (kernel Tensor, bias Tensor, stride)
        if len(layers) < 3:
            raise ValueError("extractor needs at least 3 feature levels")
        for kern, bias, _ in layers:
            if kern.requires_grad or (bias is not None and bias.requires_grad):
                raise ValueError("extractor weights must be frozen")
        self.layers = layers
        self.provenance = provenance

    @classmethod
    def fixed_random(cls, seed: int = 0, dtype=np.float64) -> "ContentExtractor":
        rng = np.random.default_rng(seed)
        plan = [(3, 16, 1), (16, 32, 2), (32, 32, 1), (32, 64, 2), (64, 64, 1)]
        layers = []
        for ci, co, stride in plan:
            kern = rng.standard_normal((co, ci, 3, 3)).astype(dtype)
            kern *= np.sqrt(2.0 / (ci * 9))
            bias = np.zeros((1, co, 1, 1), dtype=dtype)
            layers.append((Tensor(kern), Tensor(bias), stride))
        return cls(layers, provenance="fixed-random")

    @classmethod
    def from_layers(cls, layers) -> "ContentExtractor":
        return cls(layers, provenance="external")

    def features(self, x: Tensor):
        feats = []
        for kern, bias, stride in self.layers:
            x = T.relu(T.conv2d(x, ConvParams(kern, bias, stride=stride, padding=1)))
            feats.append(x)
        return feats

    def tensors(self):
        out = []
        for kern, bias, _ in self.layers:
            out.append(kern)
            if bias is not None:
                out.append(bias)
        return out


def perceptual_loss(t_hat: Tensor, t: Tensor,
                    extractor: ContentExtractor) -> Tensor:
    """Sum over feature levels of the mean absolute feature difference."""
    _check_same_shape(t_hat, t, "perceptual_loss")
    if extractor is None or not getattr(extractor, "layers", None):
        raise ValueError("perceptual_loss: extractor not initialized")
    total = None
    for fa, fb in zip(extractor.features(t_hat), extractor.features(t)):
        term = T.mean(T.abs_(fa - fb))
        total = term if total is None else total + term
    return total


def adversarial_losses(d_real_scores: Tensor, d_fake_scores: Tensor):
    """(d_loss, g_loss) from raw discriminator score maps.

    d_loss = -mean log sigma(real) - mean log(1 - sigma(fake));
    g_loss = -mean log sigma(fake), the non-saturating surrogate.
    """
    d_loss = T.mean(T.softplus(-1.0 * d_real_scores)) + T.mean(T.softplus(d_fake_scores))
    g_loss = T.mean(T.softplus(-1.0 * d_fake_scores))
    return d_loss, g_loss


def total_loss(components, weights: LossWeights) -> Tensor:
    """Weighted sum w1*pixel + w2*gradient + w3*perceptual + w4*adv."""
    pix, grad, perc, adv = components
    return (weights.w1 * pix + weights.w2 * grad
            + weights.w3 * perc + weights.w4 * adv)
