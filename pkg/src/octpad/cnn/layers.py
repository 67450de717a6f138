"""Forward/backward primitives for the patch classifier.

All functions operate on NCHW batches.  Convolutions go through im2col so the
heavy lifting lands in BLAS matmuls; pooling records its argmax for backward
and for evidence backtracking.  Everything is deterministic for fixed inputs.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x: np.ndarray, kernel: int, stride: int, padding: int):
    """(N,C,H,W) -> (N, OH*OW, C*k*k) patch matrix plus output dims."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, oh, ow, _, _ = win.shape
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh * ow, c * kernel * kernel)
    return np.ascontiguousarray(cols), oh, ow


def col2im(gcols: np.ndarray, x_shape, kernel: int, stride: int, padding: int,
           oh: int, ow: int) -> np.ndarray:
    """Scatter-add column gradients back to (N,C,H,W)."""
    n, c, h, w = x_shape
    gx = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=gcols.dtype)
    g = gcols.reshape(n, oh, ow, c, kernel, kernel).transpose(0, 3, 1, 2, 4, 5)
    for ty in range(kernel):
        for tx in range(kernel):
            gx[:, :, ty : ty + oh * stride : stride, tx : tx + ow * stride : stride] += g[
                ..., ty, tx
            ]
    if padding:
        gx = gx[:, :, padding:-padding, padding:-padding]
    return gx


def conv_forward(x, w, b, stride: int, padding: int):
    oc, ic, k, _ = w.shape
    cols, oh, ow = im2col(x, k, stride, padding)
    wmat = w.reshape(oc, ic * k * k)
    y = cols @ wmat.T + b
    y = y.transpose(0, 2, 1).reshape(x.shape[0], oc, oh, ow)
    return y, (x.shape, cols, w, stride, padding, oh, ow)


def conv_backward(gy, cache):
    x_shape, cols, w, stride, padding, oh, ow = cache
    n = gy.shape[0]
    oc = w.shape[0]
    gmat = gy.reshape(n, oc, oh * ow).transpose(0, 2, 1)
    wmat = w.reshape(oc, -1)
    gw = np.tensordot(gmat, cols, axes=([0, 1], [0, 1])).reshape(w.shape)
    gb = gmat.sum(axis=(0, 1))
    gcols = gmat @ wmat
    gx = col2im(gcols, x_shape, w.shape[2], stride, padding, oh, ow)
    return gx, gw, gb


def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(gy, cache):
    return gy * (cache > 0)


def maxpool_forward(x, kernel: int, stride: int):
    if kernel == 2 and stride == 2:
        return _maxpool2_forward(x)
    win = sliding_window_view(x, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, oh, ow, _, _ = win.shape
    flat = win.reshape(n, c, oh, ow, kernel * kernel)
    idx = flat.argmax(axis=-1)  # first max wins on ties (row-major in window)
    y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), (x.shape, idx, kernel, stride, oh, ow)


def _maxpool2_forward(x):
    """2x2/stride-2 pooling via pairwise comparisons; same first-max-wins
    argmax as the generic path, without materializing windows."""
    n, c, h, w = x.shape
    h2, w2 = (h // 2) * 2, (w // 2) * 2
    a = x[:, :, 0:h2:2, 0:w2:2]
    b = x[:, :, 0:h2:2, 1:w2:2]
    cc = x[:, :, 1:h2:2, 0:w2:2]
    d = x[:, :, 1:h2:2, 1:w2:2]
    top_right = b > a
    m_top = np.where(top_right, b, a)
    i_top = top_right.astype(np.int64)
    bot_right = d > cc
    m_bot = np.where(bot_right, d, cc)
    i_bot = bot_right.astype(np.int64) + 2
    lower = m_bot > m_top
    y = np.where(lower, m_bot, m_top)
    idx = np.where(lower, i_bot, i_top)
    return y, (x.shape, idx, 2, 2, h2 // 2, w2 // 2)


def maxpool_backward(gy, cache):
    x_shape, idx, kernel, stride, oh, ow = cache
    n, c, h, w = x_shape
    gx = np.zeros(x_shape, dtype=gy.dtype)
    ohg, owg = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    hi = ohg[None, None] * stride + idx // kernel
    wi = owg[None, None] * stride + idx % kernel
    ni = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    if stride >= kernel:  # non-overlapping windows: targets unique
        gx[ni, ci, hi, wi] = gy
    else:
        np.add.at(gx, (ni, ci, hi, wi), gy)
    return gx


def fc_forward(x, w, b):
    return x @ w.T + b, (x, w)


def fc_backward(gy, cache):
    x, w = cache
    return gy @ w, gy.T @ x, gy.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of integer ``labels``; returns (loss, probs, dlogits)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    probs = np.exp(logp)
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return float(loss), probs, dlogits
