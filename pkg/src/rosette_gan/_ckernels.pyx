# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled patch extraction / scatter kernels for strided convolution.

Layouts match :mod:`rosette_gan._kernels_py`: the patch matrix has one row
per ``(channel, kernel_row, kernel_col)`` and one column per
``(batch, out_row, out_col)``.
"""
import numpy as np

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int k, int stride, int pad, int out_h, int out_w):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    result = np.zeros((C * k * k, B * out_h * out_w), dtype=np.float64)
    cdef double[:, ::1] cols = result
    cdef Py_ssize_t b, c, ki, kj, oh, ow, ih, iw, row, col
    with nogil:
        for c in range(C):
            for ki in range(k):
                for kj in range(k):
                    row = (c * k + ki) * k + kj
                    for b in range(B):
                        for oh in range(out_h):
                            ih = oh * stride + ki - pad
                            if ih < 0 or ih >= H:
                                continue
                            col = (b * out_h + oh) * out_w
                            for ow in range(out_w):
                                iw = ow * stride + kj - pad
                                if iw >= 0 and iw < W:
                                    cols[row, col + ow] = x[b, c, ih, iw]
    return result


def col2im(double[:, ::1] cols, int B, int C, int H, int W, int k, int stride, int pad,
           int out_h, int out_w):
    result = np.zeros((B, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] img = result
    cdef Py_ssize_t b, c, ki, kj, oh, ow, ih, iw, row, col
    with nogil:
        for c in range(C):
            for ki in range(k):
                for kj in range(k):
                    row = (c * k + ki) * k + kj
                    for b in range(B):
                        for oh in range(out_h):
                            ih = oh * stride + ki - pad
                            if ih < 0 or ih >= H:
                                continue
                            col = (b * out_h + oh) * out_w
                            for ow in range(out_w):
                                iw = ow * stride + kj - pad
                                if iw >= 0 and iw < W:
                                    img[b, c, ih, iw] += cols[row, col + ow]
    return result
