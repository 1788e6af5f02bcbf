"""Layer primitives: fully connected, strided (transposed) convolution,
batch normalization and the four activations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateBatchError, ShapeError, ValidationError
from .tensor import Tensor, _record, apply_binary

LEAKY_SLOPE = 0.2

# smallest / largest float32 values strictly inside (0, 1)
_SIG_LO = np.float32(np.finfo(np.float32).tiny)
_SIG_HI = np.nextafter(np.float32(1.0), np.float32(0.0))


@dataclass
class Conv2dParams:
    """Weights and geometry of a (transposed) convolution.

    ``conv2d`` reads ``weight`` as ``[out_ch, in_ch, k, k]``.  ``deconv2d``
    reads it as ``[in_ch, out_ch, k, k]``, the layout of the convolution it is
    the adjoint of, so both directions can share one tensor.
    """

    weight: Tensor
    bias: Tensor
    stride: int = 2
    padding: int = 2

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    momentum: float = 0.9
    epsilon: float = 1e-5

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValidationError(f"batch-norm epsilon must be positive, got {self.epsilon}")


def fully_connected(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(
            f"fully_connected: x {list(x.shape)}, w {list(w.shape)}, b {list(b.shape)} do not agree"
        )
    return apply_binary("add", apply_binary("matmul", x, w), b)


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    """Strided cross-correlation, ``[B, I, H, W] -> [B, O, Ho, Wo]``."""
    w, bias = p.weight, p.bias
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {list(x.shape)}, {list(w.shape)}")
    O, I, k, _ = w.shape
    B, C, H, W = x.shape
    if C != I:
        raise ShapeError(f"conv2d: input has {C} channels, weight {list(w.shape)} expects {I}")
    s, pad = p.stride, p.padding
    Ho, Wo = conv_output_size(H, k, s, pad), conv_output_size(W, k, s, pad)
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d: input {H}x{W} too small for {k}x{k} kernel with padding {pad}")

    cols = kernels.im2col(x.data, k, s, pad, Ho, Wo)
    wmat = w.data.reshape(O, -1).astype(np.float64)
    out = (wmat @ cols).reshape(O, B, Ho, Wo).transpose(1, 0, 2, 3)
    out = (out + bias.data.astype(np.float64)[None, :, None, None]).astype(x.dtype)

    def bw(g, needs):
        gmat = g.transpose(1, 0, 2, 3).reshape(O, -1).astype(np.float64)
        gx = gw = gb = None
        if needs[0]:
            gx = kernels.col2im(wmat.T @ gmat, B, C, H, W, k, s, pad, Ho, Wo).astype(x.dtype)
        if needs[1]:
            gw = (gmat @ cols.T).reshape(w.shape).astype(w.dtype)
        if needs[2]:
            gb = gmat.sum(axis=1).astype(bias.dtype)
        return gx, gw, gb

    return _record(out, (x, w, bias), bw, "conv2d")


def deconv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    """Transposed convolution, ``[B, I, H, W] -> [B, O, stride*H, stride*W]``.

    Equal to the adjoint of :func:`conv2d` sharing the same weight tensor.
    """
    w, bias = p.weight, p.bias
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"deconv2d expects 4-D input and weight, got {list(x.shape)}, {list(w.shape)}")
    I, O, k, _ = w.shape
    B, C, H, W = x.shape
    if C != I:
        raise ShapeError(f"deconv2d: input has {C} channels, weight {list(w.shape)} expects {I}")
    s, pad = p.stride, p.padding
    Ho, Wo = s * H, s * W
    if conv_output_size(Ho, k, s, pad) != H:
        raise ShapeError(f"deconv2d: kernel {k}, stride {s}, padding {pad} cannot invert to {H}x{W}")

    xmat = x.data.transpose(1, 0, 2, 3).reshape(I, -1).astype(np.float64)
    wmat = w.data.reshape(I, -1).astype(np.float64)
    out = kernels.col2im(wmat.T @ xmat, B, O, Ho, Wo, k, s, pad, H, W)
    out = (out + bias.data.astype(np.float64)[None, :, None, None]).astype(x.dtype)

    def bw(g, needs):
        gcols = kernels.im2col(g, k, s, pad, H, W)
        gx = gw = gb = None
        if needs[0]:
            gx = (wmat @ gcols).reshape(I, B, H, W).transpose(1, 0, 2, 3).astype(x.dtype)
        if needs[1]:
            gw = (xmat @ gcols.T).reshape(w.shape).astype(w.dtype)
        if needs[2]:
            gb = g.sum(axis=(0, 2, 3), dtype=np.float64).astype(bias.dtype)
        return gx, gw, gb

    return _record(out, (x, w, bias), bw, "deconv2d")


def batch_norm(x: Tensor, p: BatchNormParams, mode: str = "train", update_stats: bool = True) -> Tensor:
    """Per-channel normalization of ``[B, C]`` or ``[B, C, H, W]`` input.

    Train mode normalizes with batch statistics and, when ``update_stats``,
    folds them into the running averages
    (``running = momentum * running + (1 - momentum) * batch``, unbiased
    variance).  Infer mode uses the running statistics only.
    """
    if x.ndim not in (2, 4):
        raise ShapeError(f"batch_norm expects [B, C] or [B, C, H, W], got {list(x.shape)}")
    C = x.shape[1]
    if p.gamma.shape != (C,) or p.beta.shape != (C,):
        raise ShapeError(f"batch_norm: {C} channels but gamma {list(p.gamma.shape)}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, C) if x.ndim == 2 else (1, C, 1, 1)
    gamma = p.gamma.data.astype(np.float64).reshape(bshape)
    beta = p.beta.data.astype(np.float64).reshape(bshape)
    x64 = x.data.astype(np.float64)

    if mode == "train":
        if x.shape[0] < 2:
            raise DegenerateBatchError("batch_norm in train mode needs a batch of at least 2")
        n = x.size // C
        mean = x64.mean(axis=axes, keepdims=True)
        centered = x64 - mean
        var = (centered * centered).mean(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + p.epsilon)
        xhat = centered * inv_std
        out = (gamma * xhat + beta).astype(x.dtype)
        if update_stats:
            m = p.momentum
            unbiased = var.reshape(C) * (n / (n - 1))
            p.running_mean.data = (
                m * p.running_mean.data.astype(np.float64) + (1 - m) * mean.reshape(C)
            ).astype(p.running_mean.dtype)
            p.running_var.data = (
                m * p.running_var.data.astype(np.float64) + (1 - m) * unbiased
            ).astype(p.running_var.dtype)

        def bw(g, needs):
            g64 = g.astype(np.float64)
            gx = ggamma = gbeta = None
            if needs[0]:
                gxhat = g64 * gamma
                gx = inv_std * (
                    gxhat
                    - gxhat.mean(axis=axes, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True)
                )
                gx = gx.astype(x.dtype)
            if needs[1]:
                ggamma = (g64 * xhat).sum(axis=axes).astype(p.gamma.dtype)
            if needs[2]:
                gbeta = g64.sum(axis=axes).astype(p.beta.dtype)
            return gx, ggamma, gbeta
    elif mode == "infer":
        rm = p.running_mean.data.astype(np.float64).reshape(bshape)
        rv = p.running_var.data.astype(np.float64).reshape(bshape)
        inv_std = 1.0 / np.sqrt(rv + p.epsilon)
        xhat = (x64 - rm) * inv_std
        out = (gamma * xhat + beta).astype(x.dtype)

        def bw(g, needs):
            g64 = g.astype(np.float64)
            gx = (g64 * gamma * inv_std).astype(x.dtype) if needs[0] else None
            ggamma = (g64 * xhat).sum(axis=axes).astype(p.gamma.dtype) if needs[1] else None
            gbeta = g64.sum(axis=axes).astype(p.beta.dtype) if needs[2] else None
            return gx, ggamma, gbeta
    else:
        raise ValidationError(f"mode must be 'train' or 'infer', got {mode!r}")

    return _record(out, (x, p.gamma, p.beta), bw, "batch_norm")


def relu(x: Tensor) -> Tensor:
    # subgradient at 0 is the negative-side slope (0)
    pos = x.data > 0
    out = np.where(pos, x.data, 0).astype(x.dtype)
    return _record(out, (x,), lambda g, needs: (g * pos,), "relu")


def leaky_relu(x: Tensor, alpha: float = LEAKY_SLOPE) -> Tensor:
    if not 0 < alpha < 1:
        raise ValidationError(f"leaky_relu slope must lie in (0, 1), got {alpha}")
    slope = np.where(x.data > 0, 1.0, alpha).astype(x.dtype)
    out = x.data * slope
    return _record(out, (x,), lambda g, needs: (g * slope,), "leaky_relu")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _record(out, (x,), lambda g, needs: (g * (1 - out * out),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, clamped so float32 outputs stay inside (0, 1)."""
    x64 = x.data.astype(np.float64)
    e = np.exp(-np.abs(x64))
    s = np.where(x64 >= 0, 1.0, e) / (1.0 + e)
    out = np.clip(s.astype(x.dtype), _SIG_LO, _SIG_HI)
    deriv = (s * (1.0 - s)).astype(x.dtype)
    return _record(out, (x,), lambda g, needs: (g * deriv,), "sigmoid")


def activation(kind: str, x: Tensor, alpha: float = LEAKY_SLOPE) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValidationError(f"unknown activation {kind!r}")
