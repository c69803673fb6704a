"""Convolution kernels with a selectable im2col backend.

The compiled extension is preferred; set ``REMIXGAN_PURE_PYTHON=1`` to force
the numpy fallback. Both backends produce identical column matrices, so the
BLAS products downstream see the same inputs.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
if os.environ.get("REMIXGAN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl
        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels


def use_backend(name):
    """Switch backend at runtime ("compiled" or "python"); used by the benchmark."""
    global _impl, BACKEND
    if name == "compiled":
        from . import _ckernels
        _impl = _ckernels
    elif name == "python":
        _impl = _pykernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name


def conv2d_forward(x, w, stride):
    """Valid convolution of padded ``x`` (N, C, H, W) with ``w`` (O, C, KH, KW).

    Returns the output (N, O, OH, OW) and the column matrix for reuse in the
    backward pass.
    """
    n = x.shape[0]
    o, _, kh, kw = w.shape
    oh = (x.shape[2] - kh) // stride + 1
    ow = (x.shape[3] - kw) // stride + 1
    cols = _impl.im2col(np.ascontiguousarray(x), kh, kw, stride)
    out = cols @ w.reshape(o, -1).T
    return np.ascontiguousarray(out.reshape(n, oh, ow, o).transpose(0, 3, 1, 2)), cols


def conv2d_backward(x_shape, w, cols, gout, stride):
    """Gradients w.r.t. the padded input and the weight."""
    n, c, h, wd = x_shape
    o, _, kh, kw = w.shape
    g = gout.transpose(0, 2, 3, 1).reshape(-1, o)
    gw = (g.T @ cols).reshape(w.shape)
    gcols = np.ascontiguousarray(g @ w.reshape(o, -1))
    gx = _impl.col2im(gcols, n, c, h, wd, kh, kw, stride)
    return gx, gw
