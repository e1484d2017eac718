"""Generator and PatchGAN discriminator, plus residual-over-median restore.

The generator consumes the scaled residual 2*(image - median(image)),
runs it through an input block, one stride-2 downsample, a chain of
dilated residual blocks with channel attention, one upsample and an
output conv, then emits a signed residual 2*sigmoid(.) - 1 in (-1, 1).
The restored image is median(image) + residual, clamped to [0, 1]. With
the output conv zero-initialized (the default) the whole pipeline is an
exact median filter, which makes training start from a sane baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import degrade
from . import tensorops as T
from .tensorops import BatchNormState, ConvParams, ShapeError, Tensor


@dataclass
class GeneratorConfig:
    base_channels: int = 32
    n_res_blocks: int = 7
    dilations: tuple = (1, 2, 2, 4, 4, 2, 1)
    attention_reduction: int = 8
    # downsample factor of the single stride-2 stage; input dims must divide it
    downsample: int = 2

    def __post_init__(self):
        self.dilations = tuple(self.dilations)
        if self.n_res_blocks != len(self.dilations):
            raise ValueError("n_res_blocks must equal len(dilations)")
        if self.base_channels % self.attention_reduction:
            raise ValueError("base_channels must divide by attention_reduction")

    @property
    def width(self) -> int:
        # feature width inside the residual chain
        return 2 * self.base_channels


@dataclass
class DiscriminatorConfig:
    """Conv ladder of (channels, stride) stages plus a 1-channel head.

    The default (64,2)(128,2)(256,2)(512,1) ladder with k=4 and no
    padding has a receptive field of exactly 70x70 and maps a 70x70
    input to a single score. For 64px training patches use
    reduced_for_patch(64), which drops the 512 stage.
    """

    stages: tuple = ((64, 2), (128, 2), (256, 2), (512, 1))
    kernel: int = 4
    leak: float = 0.2

    def __post_init__(self):
        self.stages = tuple((int(c), int(s)) for c, s in self.stages)

    @classmethod
    def reduced_for_patch(cls, patch: int) -> "DiscriminatorConfig":
        cfg = cls()
        if patch < cls().receptive_field():
            cfg = cls(stages=((64, 2), (128, 2), (256, 1)))
        if patch < cfg.receptive_field():
            raise ValueError(f"patch {patch} below minimum discriminator input "
                             f"{cfg.receptive_field()}")
        return cfg

    def receptive_field(self) -> int:
        rf, jump = 1, 1
        for _, stride in self.stages + ((1, 1),):  # head conv, stride 1
            rf += (self.kernel - 1) * jump
            jump *= stride
        return rf


class ModelParams:
    """Named, ordered collection of learnable tensors."""

    def __init__(self):
        self._entries: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._entries[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self):
        return list(self._entries)

    def tensors(self):
        return list(self._entries.values())

    def items(self):
        return list(self._entries.items())

    def count(self) -> int:
        return sum(t.data.size for t in self._entries.values())


def _he_kernel(rng, co, ci, k, dtype):
    fan_in = ci * k * k
    return rng.standard_normal((co, ci, k, k)).astype(dtype) * np.sqrt(2.0 / fan_in)


def _add_conv(params, bn, rng, name, ci, co, k, dtype, with_bn=True, zero=False):
    kern = np.zeros((co, ci, k, k), dtype=dtype) if zero else _he_kernel(rng, co, ci, k, dtype)
    params.add(f"{name}.kernel", Tensor(kern, requires_grad=True))
    params.add(f"{name}.bias", Tensor(np.zeros((1, co, 1, 1), dtype=dtype),
                                      requires_grad=True))
    if with_bn:
        params.add(f"{name}.gamma", Tensor(np.ones((1, co, 1, 1), dtype=dtype),
                                           requires_grad=True))
        params.add(f"{name}.beta", Tensor(np.zeros((1, co, 1, 1), dtype=dtype),
                                          requires_grad=True))
        bn[name] = BatchNormState.fresh(co, dtype=dtype)


def generator_init(cfg: GeneratorConfig, seed: int, dtype=np.float32):
    """Build generator parameters and fresh BN running stats.

    He-normal conv init; the final output conv is zero-initialized so a
    fresh model is the identity over the median baseline.
    """
    rng = np.random.default_rng(seed)
    params = ModelParams()
    bn: dict[str, BatchNormState] = {}
    b, wdt = cfg.base_channels, cfg.width
    _add_conv(params, bn, rng, "in", 3, b, 3, dtype)
    _add_conv(params, bn, rng, "down", b, wdt, 3, dtype)
    r = cfg.attention_reduction
    for i, _ in enumerate(cfg.dilations):
        blk = f"res{i}"
        _add_conv(params, bn, rng, f"{blk}.conv1", wdt, wdt, 3, dtype)
        _add_conv(params, bn, rng, f"{blk}.conv2", wdt, wdt, 3, dtype)
        _add_conv(params, bn, rng, f"{blk}.attn1", wdt, wdt // r, 1, dtype, with_bn=False)
        _add_conv(params, bn, rng, f"{blk}.attn2", wdt // r, wdt, 1, dtype, with_bn=False)
    # upsample kernel stored conv2d-style: (fwd_out=width, fwd_in=base, k, k)
    params.add("up.kernel", Tensor(_he_kernel(rng, wdt, b, 3, dtype), requires_grad=True))
    params.add("up.bias", Tensor(np.zeros((1, b, 1, 1), dtype=dtype), requires_grad=True))
    params.add("up.gamma", Tensor(np.ones((1, b, 1, 1), dtype=dtype), requires_grad=True))
    params.add("up.beta", Tensor(np.zeros((1, b, 1, 1), dtype=dtype), requires_grad=True))
    bn["up"] = BatchNormState.fresh(b, dtype=dtype)
    _add_conv(params, bn, rng, "out", b, 3, 3, dtype, with_bn=False, zero=True)
    return params, bn


def _conv_bn_act(x, params, bn, name, mode, stride=1, dilation=1, padding=1,
                 act="relu"):
    p = ConvParams(params[f"{name}.kernel"], params[f"{name}.bias"],
                   stride=stride, dilation=dilation, padding=padding)
    y = T.conv2d(x, p)
    if f"{name}.gamma" in params:
        y = T.batch_norm(y, params[f"{name}.gamma"], params[f"{name}.beta"],
                         bn[name], mode)
    if act == "relu":
        y = T.relu(y)
    elif act == "leaky":
        y = T.leaky_relu(y)
    return y


def channel_attention(x: Tensor, params: ModelParams, blk: str) -> Tensor:
    """Squeeze-excite gate: GAP -> 1x1 conv -> ReLU -> 1x1 conv -> sigmoid."""
    s = T.global_avg_pool(x)
    s = T.relu(T.conv2d(s, ConvParams(params[f"{blk}.attn1.kernel"],
                                      params[f"{blk}.attn1.bias"])))
    s = T.sigmoid(T.conv2d(s, ConvParams(params[f"{blk}.attn2.kernel"],
                                         params[f"{blk}.attn2.bias"])))
    return s


def residual_block_forward(x: Tensor, params: ModelParams, bn, blk: str,
                           dilation: int, mode: str) -> Tensor:
    """x + gate * F(x); F = conv-BN-ReLU-dilated conv-BN, gate in (0,1)^c."""
    f = _conv_bn_act(x, params, bn, f"{blk}.conv1", mode,
                     dilation=dilation, padding=dilation)
    f = _conv_bn_act(f, params, bn, f"{blk}.conv2", mode,
                     dilation=dilation, padding=dilation, act=None)
    gate = channel_attention(f, params, blk)
    return x + gate * f


def generator_forward(residual_input: Tensor, params: ModelParams,
                      cfg: GeneratorConfig, mode: str,
                      bn: dict) -> Tensor:
    """Map a scaled residual (n, 3, h, w) to a signed residual in (-1, 1)."""
    n, c, h, w = residual_input.shape
    if c != 3:
        raise ShapeError(f"generator expects 3 input channels, got {c}")
    m = cfg.downsample
    if h % m or w % m:
        raise ShapeError(
            f"generator input dims must be multiples of {m}, got {h}x{w}")
    x = _conv_bn_act(residual_input, params, bn, "in", mode)
    x = _conv_bn_act(x, params, bn, "down", mode, stride=2)
    for i, dil in enumerate(cfg.dilations):
        x = residual_block_forward(x, params, bn, f"res{i}", dil, mode)
    up = ConvParams(params["up.kernel"], params["up.bias"], stride=2, padding=1)
    x = T.conv2d_transpose(x, up, output_hw=(h, w))
    x = T.batch_norm(x, params["up.gamma"], params["up.beta"], bn["up"], mode)
    x = T.relu(x)
    out = T.conv2d(x, ConvParams(params["out.kernel"], params["out.bias"],
                                 padding=1))
    return 2.0 * T.sigmoid(out) - 1.0


def discriminator_init(cfg: DiscriminatorConfig, seed: int, dtype=np.float32):
    """PatchGAN parameters; BN on every stage except the first."""
    rng = np.random.default_rng(seed)
    params = ModelParams()
    bn: dict[str, BatchNormState] = {}
    ci = 3
    for i, (co, _) in enumerate(cfg.stages):
        _add_conv(params, bn, rng, f"d{i}", ci, co, cfg.kernel, dtype,
                  with_bn=(i > 0))
        ci = co
    _add_conv(params, bn, rng, "head", ci, 1, cfg.kernel, dtype, with_bn=False)
    return params, bn


def discriminator_forward(residual: Tensor, params: ModelParams,
                          cfg: DiscriminatorConfig, mode: str,
                          bn: dict) -> Tensor:
    """Raw patch scores (n, 1, h', w'); sigmoid is applied in the loss."""
    n, c, h, w = residual.shape
    rf = cfg.receptive_field()
    if h < rf or w < rf:
        raise ShapeError(
            f"discriminator input {h}x{w} below receptive field {rf}x{rf}")
    x = residual
    for i, (_, stride) in enumerate(cfg.stages):
        kern = params[f"d{i}.kernel"]
        p = ConvParams(kern, params[f"d{i}.bias"], stride=stride, padding=0,
                       allow_even=True)
        x = T.conv2d(x, p)
        if f"d{i}.gamma" in params:
            x = T.batch_norm(x, params[f"d{i}.gamma"], params[f"d{i}.beta"],
                             bn[f"d{i}"], mode)
        x = T.leaky_relu(x, cfg.leak)
    head = ConvParams(params["head.kernel"], params["head.bias"], padding=0,
                      allow_even=True)
    return T.conv2d(x, head)


# -- restoration --


def scaled_residual(corrupted: np.ndarray, median: np.ndarray) -> np.ndarray:
    return 2.0 * (corrupted - median)


def restore(corrupted: np.ndarray, params: ModelParams, cfg: GeneratorConfig,
            bn: dict, median_k: int = 5) -> np.ndarray:
    """clamp(median(x) + G(2*(x - median(x))), 0, 1) for (n, 3, h, w) input."""
    corrupted = np.asarray(corrupted)
    med = degrade.median_filter(corrupted, median_k)
    g_in = Tensor(scaled_residual(corrupted, med))
    res = generator_forward(g_in, params, cfg, "eval", bn)
    return np.clip(med + res.data, 0.0, 1.0)


def tiled_restore(corrupted: np.ndarray, params: ModelParams,
                  cfg: GeneratorConfig, bn: dict, median_k: int = 5,
                  tile: int = 256, overlap: int = 16) -> np.ndarray:
    """Restore a (3, h, w) image tile by tile with linear overlap blending.

    Tiles shorter than `tile` at the right/bottom edge are shifted back
    so every tile is full-size when the image allows it; dims are
    reflect-padded to the generator's downsample multiple.
    """
    c, h, w = corrupted.shape
    m = cfg.downsample
    ph, pw = (-h) % m, (-w) % m
    padded = np.pad(corrupted, ((0, 0), (0, ph), (0, pw)), mode="symmetric")
    H, W = padded.shape[1:]
    if tile % m:
        tile += m - tile % m
    if overlap % m:
        overlap += m - overlap % m  # keeps tile starts aligned to m
    if H <= tile and W <= tile:
        out = restore(padded[None], params, cfg, bn, median_k)[0]
        return out[:, :h, :w]

    step = tile - overlap
    acc = np.zeros_like(padded)
    wacc = np.zeros((H, W), dtype=padded.dtype)
    ramp = _tile_weight(tile, overlap)
    for top in _tile_starts(H, tile, step):
        for left in _tile_starts(W, tile, step):
            th = min(tile, H - top)
            tw = min(tile, W - left)
            th -= th % m
            tw -= tw % m
            patch = padded[:, top:top + th, left:left + tw]
            rest = restore(patch[None], params, cfg, bn, median_k)[0]
            wgt = ramp[:th, :tw]
            acc[:, top:top + th, left:left + tw] += rest * wgt
            wacc[top:top + th, left:left + tw] += wgt
    out = acc / np.maximum(wacc, 1e-12)
    return np.clip(out[:, :h, :w], 0.0, 1.0)


def _tile_starts(total, tile, step):
    starts = list(range(0, max(total - tile, 0) + 1, step))
    if starts[-1] + tile < total:
        starts.append(total - tile)
    return starts


def _tile_weight(tile, overlap):
    ramp = np.ones(tile)
    if overlap > 0:
        edge = np.linspace(1.0 / (overlap + 1), 1.0, overlap)
        ramp[:overlap] = edge
        ramp[-overlap:] = edge[::-1]
    return np.outer(ramp, ramp)
