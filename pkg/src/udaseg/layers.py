"""Convolution, activation and resampling layers with explicit backward passes.

All tensors are NHWC. Convolution kernels are stored as ``(C_out, C_in, kh, kw)``.
"""

from __future__ import annotations

import numpy as np


def conv2d_forward(x, w, b, stride=1):
    """Same-padded 2D convolution with zero borders.

    Returns ``(out, cols)``; ``cols`` is the im2col matrix kept for backward.
    """
    n, h, wd, cin = x.shape
    cout, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    ho = (h + stride - 1) // stride
    wo = (wd + stride - 1) // stride
    if ph or pw:
        xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    else:
        xp = x
    if kh == 1 and kw == 1:
        cols = xp[:, ::stride, ::stride, :]
    else:
        # column order is (kh, kw, C_in); the kernel is permuted to match
        cols = np.concatenate(
            [
                xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :]
                for i in range(kh)
                for j in range(kw)
            ],
            axis=-1,
        )
    cols = cols.reshape(n * ho * wo, kh * kw * cin)
    wm = w.transpose(2, 3, 1, 0).reshape(kh * kw * cin, cout)
    out = (cols @ wm).reshape(n, ho, wo, cout) + b
    return out, cols


def conv2d_backward(grad_out, x_shape, w, cols, stride=1, need_input_grad=True):
    """Gradients of a same-padded convolution.

    Returns ``(dx, dw, db)``; ``dx`` is None when ``need_input_grad`` is False.
    """
    n, h, wd, cin = x_shape
    cout, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    _, ho, wo, _ = grad_out.shape
    g = grad_out.reshape(-1, cout)
    dwm = cols.T @ g
    dw = dwm.reshape(kh, kw, cin, cout).transpose(3, 2, 0, 1)
    db = g.sum(axis=0)
    if not need_input_grad:
        return None, dw, db
    wm = w.transpose(2, 3, 1, 0).reshape(kh * kw * cin, cout)
    dcols = (g @ wm.T).reshape(n, ho, wo, kh * kw, cin)
    dxp = np.zeros((n, h + 2 * ph, wd + 2 * pw, cin), dtype=grad_out.dtype)
    t = 0
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += dcols[:, :, :, t, :]
            t += 1
    dx = dxp[:, ph : ph + h, pw : pw + wd, :]
    return dx, dw, db


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, out):
    return grad_out * (out > 0)


def upsample2x_forward(x, out_hw):
    """Nearest-neighbour 2x upsampling cropped to ``out_hw``."""
    h, w = out_hw
    return x.repeat(2, axis=1).repeat(2, axis=2)[:, :h, :w, :]


def upsample2x_backward(grad_out, in_shape):
    n, h, w, c = in_shape
    g = np.zeros((n, 2 * h, 2 * w, c), dtype=grad_out.dtype)
    g[:, : grad_out.shape[1], : grad_out.shape[2], :] = grad_out
    return g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4))
