"""Differentiable operators over rank-4 (batch, channel, height, width) tensors.

A small recording-based reverse-mode engine: every forward op returns a
Tensor that remembers its parents and a closure that pushes gradients
back. Gradients of every op are checked against central finite
differences in the test suite; keep forward/backward pairs exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor shapes violate an operator's contract."""


class Tensor:
    """Rank-4 real array with an optional gradient slot.

    data is (n, c, h, w), row-major. grad, when present, has the same
    shape. Scalars are represented as shape (1, 1, 1, 1).
    """

    def __init__(self, data, requires_grad: bool = False):
        data = np.asarray(data)
        if data.ndim != 4:
            raise ShapeError(f"Tensor data must be rank 4, got shape {data.shape}")
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._backward_done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    # -- elementwise arithmetic (Tensor or python scalar operands) --

    def __add__(self, other):
        if isinstance(other, Tensor):
            return _add(self, other)
        return _affine(self, 1.0, float(other))

    __radd__ = __add__

    def __neg__(self):
        return _affine(self, -1.0, 0.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return _add(self, _affine(other, -1.0, 0.0))
        return _affine(self, 1.0, -float(other))

    def __rsub__(self, other):
        return _affine(self, -1.0, float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return _mul(self, other)
        return _affine(self, float(other), 0.0)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    """Wrap an array as a non-learnable rank-4 tensor."""
    return Tensor(np.asarray(data), requires_grad=False)


def scalar(value: float, dtype=np.float64) -> Tensor:
    return Tensor(np.full((1, 1, 1, 1), value, dtype=dtype))


def _make(data, parents, backward_fn) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, grad):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    axes = tuple(i for i in range(4) if shape[i] == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(dout):
        _accumulate(a, _unbroadcast(dout, a.shape))
        _accumulate(b, _unbroadcast(dout, b.shape))

    return _make(data, (a, b), bwd)


def _mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(dout):
        _accumulate(a, _unbroadcast(dout * b.data, a.shape))
        _accumulate(b, _unbroadcast(dout * a.data, b.shape))

    return _make(data, (a, b), bwd)


def _affine(x: Tensor, scale: float, shift: float) -> Tensor:
    data = x.data * scale + shift

    def bwd(dout):
        _accumulate(x, dout * scale)

    return _make(data, (x,), bwd)


# -- convolution --


@dataclass
class ConvParams:
    """Weights and hyperparameters of one convolution layer.

    kernel is (c_out, c_in, k_h, k_w); bias is (1, c_out, 1, 1) or None.
    Odd kernels are required so "same" padding is unambiguous; a layer
    with explicit padding may opt out via allow_even (the PatchGAN
    discriminator ladder needs k=4 to make its receptive field exactly
    70). conv2d_transpose never accepts even kernels.
    """

    kernel: Tensor
    bias: Tensor | None = None
    stride: int = 1
    dilation: int = 1
    padding: int = 0
    allow_even: bool = False

    def __post_init__(self):
        co, ci, kh, kw = self.kernel.shape
        if not self.allow_even and (kh % 2 == 0 or kw % 2 == 0):
            raise ShapeError(f"kernel must be odd-sized, got {kh}x{kw}")
        if self.stride < 1 or self.dilation < 1:
            raise ShapeError("stride and dilation must be >= 1")
        if self.padding < 0:
            raise ShapeError("padding must be >= 0")

    @property
    def c_out(self) -> int:
        return self.kernel.shape[0]

    @property
    def c_in(self) -> int:
        return self.kernel.shape[1]


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """Cross-correlation (no kernel flip) with stride/dilation/zero-pad."""
    n, ci, h, w = x.shape
    co, ci_k, kh, kw = p.kernel.shape
    if ci != ci_k:
        raise ShapeError(f"conv2d: input has {ci} channels, kernel expects {ci_k}")
    s, d, pad = p.stride, p.dilation, p.padding
    oh = (h + 2 * pad - d * (kh - 1) - 1) // s + 1
    ow = (w + 2 * pad - d * (kw - 1) - 1) // s + 1
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv2d: {h}x{w} input with k={kh}x{kw} s={s} d={d} pad={pad} "
            f"gives empty {oh}x{ow} output"
        )
    if p.bias is not None and p.bias.shape != (1, co, 1, 1):
        raise ShapeError(f"conv2d: bias shape {p.bias.shape} != (1, {co}, 1, 1)")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    L = oh * ow
    out = np.zeros((n, co, L), dtype=x.dtype)
    # contiguous (kh, kw, co, ci) so each tap slice hits the BLAS fast path
    kern = np.ascontiguousarray(p.kernel.data.transpose(2, 3, 0, 1))
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i * d : i * d + (oh - 1) * s + 1 : s,
                    j * d : j * d + (ow - 1) * s + 1 : s]
            out += np.matmul(kern[i, j], xs.reshape(n, ci, L))
    out = out.reshape(n, co, oh, ow)
    if p.bias is not None:
        out = out + p.bias.data

    parents = (x, p.kernel) + ((p.bias,) if p.bias is not None else ())

    def bwd(dout):
        dmat = np.ascontiguousarray(dout.reshape(n, co, L))
        if p.kernel.requires_grad:
            dk = np.zeros_like(kern)  # (kh, kw, co, ci)
        if x.requires_grad:
            dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                hs = slice(i * d, i * d + (oh - 1) * s + 1, s)
                ws = slice(j * d, j * d + (ow - 1) * s + 1, s)
                if p.kernel.requires_grad:
                    xs = xp[:, :, hs, ws].reshape(n, ci, L)
                    dk[i, j] = np.matmul(dmat, xs.transpose(0, 2, 1)).sum(axis=0)
                if x.requires_grad:
                    dxp[:, :, hs, ws] += np.matmul(
                        kern[i, j].T, dmat
                    ).reshape(n, ci, oh, ow)
        if p.kernel.requires_grad:
            _accumulate(p.kernel, dk.transpose(2, 3, 0, 1))
        if x.requires_grad:
            if pad:
                _accumulate(x, dxp[:, :, pad:pad + h, pad:pad + w])
            else:
                _accumulate(x, dxp)
        if p.bias is not None and p.bias.requires_grad:
            _accumulate(p.bias, dout.sum(axis=(0, 2, 3)).reshape(1, co, 1, 1))

    return _make(out, parents, bwd)


def conv2d_transpose(x: Tensor, p: ConvParams, output_hw=None) -> Tensor:
    """Exact adjoint of conv2d with the same params.

    Kernel is read as (c_fwd_out, c_fwd_in, kh, kw): input must have
    c_fwd_out channels, output gets c_fwd_in. Default output spatial
    dims are (h-1)*stride - 2*pad + dilation*(k-1) + 1; a strided conv
    maps a range of input sizes to the same output size, so output_hw
    may pick any valid size in [default, default + stride - 1].
    """
    co, ci, kh, kw = p.kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d_transpose: kernel must be odd-sized, got {kh}x{kw}")
    n, cx, h, w = x.shape
    if cx != co:
        raise ShapeError(f"conv2d_transpose: input has {cx} channels, kernel expects {co}")
    s, d, pad = p.stride, p.dilation, p.padding
    oh0 = (h - 1) * s - 2 * pad + d * (kh - 1) + 1
    ow0 = (w - 1) * s - 2 * pad + d * (kw - 1) + 1
    if output_hw is None:
        oh, ow = oh0, ow0
    else:
        oh, ow = output_hw
        if not (oh0 <= oh < oh0 + s and ow0 <= ow < ow0 + s):
            raise ShapeError(
                f"conv2d_transpose: requested output {oh}x{ow} outside valid "
                f"range [{oh0},{oh0 + s - 1}]x[{ow0},{ow0 + s - 1}]"
            )
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d_transpose: empty output {oh}x{ow}")
    if p.bias is not None and p.bias.shape != (1, ci, 1, 1):
        raise ShapeError(f"conv2d_transpose: bias shape {p.bias.shape} != (1, {ci}, 1, 1)")

    kern = np.ascontiguousarray(p.kernel.data.transpose(2, 3, 0, 1))
    L = h * w
    xm = np.ascontiguousarray(x.data.reshape(n, co, L))
    outp = np.zeros((n, ci, oh + 2 * pad, ow + 2 * pad), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            outp[:, :, i * d : i * d + (h - 1) * s + 1 : s,
                 j * d : j * d + (w - 1) * s + 1 : s] += np.matmul(
                kern[i, j].T, xm
            ).reshape(n, ci, h, w)
    out = outp[:, :, pad:pad + oh, pad:pad + ow] if pad else outp
    if p.bias is not None:
        out = out + p.bias.data

    parents = (x, p.kernel) + ((p.bias,) if p.bias is not None else ())

    def bwd(dout):
        dp = np.pad(dout, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else dout
        if x.requires_grad:
            dx = np.zeros((n, co, L), dtype=x.dtype)
        if p.kernel.requires_grad:
            dk = np.zeros_like(kern)  # (kh, kw, co, ci)
        for i in range(kh):
            for j in range(kw):
                dv = dp[:, :, i * d : i * d + (h - 1) * s + 1 : s,
                        j * d : j * d + (w - 1) * s + 1 : s].reshape(n, ci, L)
                if x.requires_grad:
                    dx += np.matmul(kern[i, j], dv)
                if p.kernel.requires_grad:
                    dk[i, j] = np.matmul(xm, dv.transpose(0, 2, 1)).sum(axis=0)
        if x.requires_grad:
            _accumulate(x, dx.reshape(n, co, h, w))
        if p.kernel.requires_grad:
            _accumulate(p.kernel, dk.transpose(2, 3, 0, 1))
        if p.bias is not None and p.bias.requires_grad:
            _accumulate(p.bias, dout.sum(axis=(0, 2, 3)).reshape(1, ci, 1, 1))

    return _make(out, parents, bwd)


# -- batch normalization --

BN_EPS = 1e-5


@dataclass
class BatchNormState:
    """Running statistics of one BN layer, updated in train mode."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def fresh(cls, channels: int, dtype=np.float64) -> "BatchNormState":
        return cls(mean=np.zeros(channels, dtype=dtype),
                   var=np.ones(channels, dtype=dtype))


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
               mode: str) -> Tensor:
    """Per-channel batch normalization.

    Train mode normalizes with batch statistics over (n, h, w) and
    updates `state` in place; eval mode uses the stored running stats.
    gamma/beta are (1, c, 1, 1).
    """
    n, c, h, w = x.shape
    if gamma.shape != (1, c, 1, 1) or beta.shape != (1, c, 1, 1):
        raise ShapeError(f"batch_norm: gamma/beta must be (1, {c}, 1, 1)")
    if mode not in ("train", "eval"):
        raise ValueError(f"batch_norm: unknown mode {mode!r}")
    if mode == "train" and n < 2:
        raise ShapeError("batch_norm: train mode needs batch size >= 2")

    if mode == "train":
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        m = state.momentum
        state.mean = (1.0 - m) * state.mean + m * mu
        state.var = (1.0 - m) * state.var + m * var
    else:
        mu = state.mean.astype(x.dtype, copy=False)
        var = state.var.astype(x.dtype, copy=False)

    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x.data - mu.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = gamma.data * xhat + beta.data

    def bwd(dout):
        if gamma.requires_grad:
            _accumulate(gamma, (dout * xhat).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1))
        if beta.requires_grad:
            _accumulate(beta, dout.sum(axis=(0, 2, 3)).reshape(1, c, 1, 1))
        if x.requires_grad:
            dxhat = dout * gamma.data
            istd = inv_std.reshape(1, c, 1, 1)
            if mode == "train":
                dx = istd * (
                    dxhat
                    - dxhat.mean(axis=(0, 2, 3), keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
                )
            else:
                dx = dxhat * istd
            _accumulate(x, dx)

    return _make(out, (x, gamma, beta), bwd)


# -- activations --


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)

    def bwd(dout):
        _accumulate(x, dout * mask)

    return _make(out, (x,), bwd)


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, alpha * x.data)

    def bwd(dout):
        _accumulate(x, dout * np.where(mask, 1.0, alpha))

    return _make(out, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    e = np.exp(xd[~pos])
    out[~pos] = e / (1.0 + e)

    def bwd(dout):
        _accumulate(x, dout * out * (1.0 - out))

    return _make(out, (x,), bwd)


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), overflow-safe."""
    out = np.logaddexp(0.0, x.data)

    def bwd(dout):
        s = np.empty_like(x.data)
        pos = x.data >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
        e = np.exp(x.data[~pos])
        s[~pos] = e / (1.0 + e)
        _accumulate(x, dout * s)

    return _make(out, (x,), bwd)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation kind {kind!r}")


def abs_(x: Tensor) -> Tensor:
    out = np.abs(x.data)

    def bwd(dout):
        _accumulate(x, dout * np.sign(x.data))

    return _make(out, (x,), bwd)


# -- reductions and spatial diffs --


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over each channel's spatial extent; output (n, c, 1, 1)."""
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def bwd(dout):
        _accumulate(x, np.broadcast_to(dout / (h * w), x.shape).copy())

    return _make(out, (x,), bwd)


def mean(x: Tensor) -> Tensor:
    """Mean over all entries; scalar tensor (1, 1, 1, 1)."""
    out = np.full((1, 1, 1, 1), x.data.mean(), dtype=x.dtype)

    def bwd(dout):
        _accumulate(x, np.full(x.shape, dout.reshape(()) / x.data.size, dtype=x.dtype))

    return _make(out, (x,), bwd)


def sum_all(x: Tensor) -> Tensor:
    out = np.full((1, 1, 1, 1), x.data.sum(), dtype=x.dtype)

    def bwd(dout):
        _accumulate(x, np.full(x.shape, dout.reshape(()), dtype=x.dtype))

    return _make(out, (x,), bwd)


def diff_x(x: Tensor) -> Tensor:
    """Forward difference along width: out[..., j] = x[..., j+1] - x[..., j]."""
    if x.shape[3] < 2:
        raise ShapeError("diff_x needs width >= 2")
    out = x.data[:, :, :, 1:] - x.data[:, :, :, :-1]

    def bwd(dout):
        dx = np.zeros_like(x.data)
        dx[:, :, :, 1:] += dout
        dx[:, :, :, :-1] -= dout
        _accumulate(x, dx)

    return _make(out, (x,), bwd)


def diff_y(x: Tensor) -> Tensor:
    """Forward difference along height."""
    if x.shape[2] < 2:
        raise ShapeError("diff_y needs height >= 2")
    out = x.data[:, :, 1:, :] - x.data[:, :, :-1, :]

    def bwd(dout):
        dx = np.zeros_like(x.data)
        dx[:, :, 1:, :] += dout
        dx[:, :, :-1, :] -= dout
        _accumulate(x, dx)

    return _make(out, (x,), bwd)


# -- reverse pass --


def backward(loss: Tensor, params=None):
    """Propagate gradients from a scalar loss through the recording.

    Fills .grad on every reachable requires_grad tensor; any tensor in
    `params` left unreached by the recording ends up with a zero grad.
    A recording can be walked only once; rerun the forward pass first.
    """
    if loss.shape != (1, 1, 1, 1):
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._backward_done:
        raise RuntimeError("backward already called on this recording; re-run forward")
    loss._backward_done = True

    if params is not None:
        for p in _iter_params(params):
            p.zero_grad()

    # iterative post-order DFS
    topo = []
    visited = set()
    stack = [(loss, iter(loss._parents))]
    visited.add(id(loss))
    while stack:
        node, it = stack[-1]
        advanced = False
        for parent in it:
            if id(parent) not in visited and parent.requires_grad:
                visited.add(id(parent))
                stack.append((parent, iter(parent._parents)))
                advanced = True
                break
        if not advanced:
            topo.append(node)
            stack.pop()

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


def _iter_params(params):
    # accepts an iterable of Tensors or anything exposing .tensors()
    if hasattr(params, "tensors"):
        return params.tensors()
    return params
