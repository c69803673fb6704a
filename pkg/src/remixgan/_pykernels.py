"""Pure numpy im2col / col2im.

Used when the compiled extension is missing or disabled via
``REMIXGAN_PURE_PYTHON=1``.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, kh, kw, stride):
    """(N, C, H, W) -> (N*OH*OW, C*KH*KW), rows ordered (n, p, q)."""
    n, c = x.shape[:2]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    # (N, C, OH, OW, KH, KW) -> (N, OH, OW, C, KH, KW)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, c * kh * kw)


def col2im(cols, n, c, h, w, kh, kw, stride):
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    blocks = cols.reshape(n, oh, ow, c, kh, kw)
    x = np.zeros((n, c, h, w))
    for i in range(kh):
        for j in range(kw):
            x[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += blocks[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return x
