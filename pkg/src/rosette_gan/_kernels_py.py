"""Pure numpy patch extraction / scatter kernels (fallback backend)."""
import numpy as np


def _pad_after(size, out, k, stride, pad):
    return max(0, (out - 1) * stride + k - pad - size)


def im2col(x, k, stride, pad, out_h, out_w):
    B, C, H, W = x.shape
    ph = _pad_after(H, out_h, k, stride, pad)
    pw = _pad_after(W, out_w, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, ph), (pad, pw)))
    cols = np.empty((C, k, k, B, out_h, out_w), dtype=np.float64)
    hs, ws = stride * out_h, stride * out_w
    for ki in range(k):
        for kj in range(k):
            patch = xp[:, :, ki:ki + hs:stride, kj:kj + ws:stride]
            cols[:, ki, kj] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(C * k * k, B * out_h * out_w)


def col2im(cols, B, C, H, W, k, stride, pad, out_h, out_w):
    ph = _pad_after(H, out_h, k, stride, pad)
    pw = _pad_after(W, out_w, k, stride, pad)
    img = np.zeros((B, C, H + pad + ph, W + pad + pw), dtype=np.float64)
    cols6 = cols.reshape(C, k, k, B, out_h, out_w)
    hs, ws = stride * out_h, stride * out_w
    for ki in range(k):
        for kj in range(k):
            img[:, :, ki:ki + hs:stride, kj:kj + ws:stride] += cols6[:, ki, kj].transpose(1, 0, 2, 3)
    return np.ascontiguousarray(img[:, :, pad:pad + H, pad:pad + W])
