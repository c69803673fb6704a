"""A small dense tensor with reverse-mode differentiation.

Everything is float64. Broadcasting is limited to scalar-with-tensor; any
other shape change has to go through ``reshape``. Kinks (abs, hinge, leaky
relu) use the right derivative.
"""
from __future__ import annotations

import itertools
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import kernels

_seq = itertools.count()
_grad_enabled = True
_kink_log = None  # list of boolean side masks while a grad check is probing


class ShapeError(ValueError):
    pass


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextmanager
def _record_kinks():
    global _kink_log
    prev, _kink_log = _kink_log, []
    try:
        yield _kink_log
    finally:
        _kink_log = prev


def _note_kink(mask):
    if _kink_log is not None:
        _kink_log.append(mask)


class Tensor:
    """Dense float64 array with an optional gradient.

    ``grad`` is only populated on leaves created with ``requires_grad=True``.
    Non-leaf tensors keep a reference to their parents and a closure mapping
    the output gradient to parent gradients.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_seq", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=""):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._seq = next(_seq)
        self.name = name

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _make(cls, data, parents, backward, op):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = ""
        out._op = op
        out._seq = next(_seq)
        out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeError(f"expected a scalar tensor, got shape {self.shape}")

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg}, op={self._op})"

    # -- operators ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def abs(self):
        return tabs(self)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _is_scalar_operand(x):
    return not isinstance(x, Tensor) and np.ndim(x) == 0


def _reduce_to(g, shape):
    """Collapse a broadcast gradient back onto a scalar operand."""
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def _check_binary(a, b, op):
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise ---------------------------------------------------------------
def add(a, b):
    if _is_scalar_operand(b):
        return shift(as_tensor(a), float(b))
    if _is_scalar_operand(a):
        return shift(b, float(a))
    _check_binary(a, b, "add")
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data + b.data, (a, b),
                        lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)), "add")


def sub(a, b):
    if _is_scalar_operand(b):
        return shift(a, -float(b))
    if _is_scalar_operand(a):
        return shift(scale(b, -1.0), float(a))
    _check_binary(a, b, "sub")
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data - b.data, (a, b),
                        lambda g: (_reduce_to(g, sa), -_reduce_to(g, sb)), "sub")


def mul(a, b):
    if _is_scalar_operand(b):
        return scale(a, float(b))
    if _is_scalar_operand(a):
        return scale(b, float(a))
    _check_binary(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor._make(ad * bd, (a, b),
                        lambda g: (_reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)), "mul")


def scale(a, c):
    c = float(c)
    return Tensor._make(a.data * c, (a,), lambda g: (g * c,), "scale")


def shift(a, c):
    return Tensor._make(a.data + float(c), (a,), lambda g: (g,), "shift")


def tabs(a):
    x = a.data
    side = x >= 0.0
    _note_kink(side)
    sign = np.where(side, 1.0, -1.0)
    return Tensor._make(np.abs(x), (a,), lambda g: (g * sign,), "abs")


def maximum(a, c=0.0):
    """Elementwise max(a, c) against a constant; the hinge."""
    x = a.data
    side = x >= c
    _note_kink(side)
    return Tensor._make(np.where(side, x, c), (a,), lambda g: (g * side,), "maximum")


def leaky_relu(a, slope=0.2):
    x = a.data
    side = x >= 0.0
    _note_kink(side)
    factor = np.where(side, 1.0, slope)
    return Tensor._make(x * factor, (a,), lambda g: (g * factor,), "leaky_relu")


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    s = _stable_sigmoid(a.data)
    return Tensor._make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softplus(a):
    """log(1 + exp(a)), computed without overflow."""
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    s = _stable_sigmoid(x)
    return Tensor._make(out, (a,), lambda g: (g * s,), "softplus")


# -- linear algebra / reductions ---------------------------------------------
def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return Tensor._make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None):
    axes = _norm_axis(axis, a.data.ndim)
    shape = a.shape
    kept = tuple(1 if i in axes else s for i, s in enumerate(shape))

    def back(g):
        return (np.broadcast_to(np.reshape(g, kept), shape).copy(),)

    return Tensor._make(np.asarray(a.data.sum(axis=axes)), (a,), back, "sum")


def mean(a, axis=None):
    axes = _norm_axis(axis, a.data.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return scale(tsum(a, axes), 1.0 / count)


def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    old = a.shape
    return Tensor._make(data, (a,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ShapeError(f"concat: shape mismatch {ref} vs {t.shape}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=ax))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=ax), tensors, back, "concat")


def index_rows(a, idx):
    """Gather along the leading axis, e.g. a batch permutation."""
    idx = np.asarray(idx, dtype=np.intp)
    n = a.shape[0]

    def back(g):
        out = np.zeros((n,) + g.shape[1:])
        np.add.at(out, idx, g)
        return (out,)

    return Tensor._make(a.data[idx], (a,), back, "index_rows")


# -- image ops ----------------------------------------------------------------
def conv2d(x, w, b=None, stride=1, padding=0):
    """2-D cross-correlation, NCHW input and OIHW weight, optional bias (O,)."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input channels {x.shape} do not match weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias shape {b.shape} does not match weight {w.shape}")
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    if xp.shape[2] < w.shape[2] or xp.shape[3] < w.shape[3]:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than padded input {xp.shape}")
    out, cols = kernels.conv2d_forward(xp, w.data, stride)
    if b is not None:
        out += b.data.reshape(1, -1, 1, 1)
    xshape, wd = xp.shape, w.data

    def back(g):
        gx, gw = kernels.conv2d_backward(xshape, wd, cols, g, stride)
        if padding:
            gx = gx[:, :, padding:-padding, padding:-padding]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._make(out, parents, back, "conv2d")


def upsample2x(x):
    """Nearest-neighbour 2x upsampling of an NCHW tensor."""
    if x.data.ndim != 4:
        raise ShapeError(f"upsample2x: expected 4-D input, got {x.shape}")
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = x.shape

    def back(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return Tensor._make(out, (x,), back, "upsample2x")


# -- backward -----------------------------------------------------------------
class ComputationTape:
    """Operations reachable from a root, in execution order.

    Sequence numbers increase monotonically at creation, so sorting by them is
    a topological order; replaying the list backwards visits consumers before
    producers.
    """

    def __init__(self, root):
        seen = {id(root): root}
        stack = [root]
        while stack:
            node = stack.pop()
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    seen[id(p)] = p
                    stack.append(p)
        self.nodes = sorted(seen.values(), key=lambda t: t._seq)

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable leaf."""
    if loss.size != 1 or loss.data.ndim > 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = ComputationTape(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# -- finite-difference checking ---------------------------------------------
@dataclass
class GradCheckResult:
    max_error: float
    checked: int
    skipped: int


def _eval_scalar(f, data):
    with no_grad():
        return float(np.asarray(f(Tensor(data)).data).reshape(-1)[0])


def _side_pattern(f, data):
    with no_grad(), _record_kinks() as log:
        f(Tensor(data))
    return log


def _same_pattern(p, q):
    return len(p) == len(q) and all(np.array_equal(a, b) for a, b in zip(p, q))


def grad_check_detail(f, x, step=1e-5):
    """Compare reverse-mode and central-difference gradients of scalar ``f`` at ``x``.

    Coordinates whose +-10*step neighbourhood crosses a kink of any abs/hinge/
    leaky-relu op in ``f`` are skipped and counted.
    """
    x0 = np.array(as_tensor(x).data, dtype=np.float64)
    leaf = Tensor(x0.copy(), requires_grad=True)
    out = f(leaf)
    backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x0)

    base = _side_pattern(f, x0)
    has_kinks = len(base) > 0
    worst, checked, skipped = 0.0, 0, 0
    flat = x0.reshape(-1)
    for i in range(flat.size):
        if has_kinks:
            probe = []
            for d in (10 * step, -10 * step):
                xp = flat.copy()
                xp[i] += d
                probe.append(_side_pattern(f, xp.reshape(x0.shape)))
            if not all(_same_pattern(base, p) for p in probe):
                skipped += 1
                continue
        xp = flat.copy()
        xp[i] += step
        xm = flat.copy()
        xm[i] -= step
        numeric = (_eval_scalar(f, xp.reshape(x0.shape)) - _eval_scalar(f, xm.reshape(x0.shape))) / (2 * step)
        err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
        checked += 1
    return GradCheckResult(worst, checked, skipped)


def grad_check(f, x, step=1e-5):
    """Max over coordinates of |analytic - numeric| / max(1, |numeric|)."""
    return grad_check_detail(f, x, step).max_error


def grad_check_params(loss_fn, params, step=1e-5):
    """``grad_check`` over every coordinate of a list of parameter tensors.

    ``loss_fn()`` takes no arguments and reads the parameters it closes over.
    Parameters are restored afterwards.
    """
    params = list(params)
    originals = [p.data.copy() for p in params]
    for p in params:
        p.grad = None
    backward(loss_fn())
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    for p in params:
        p.grad = None

    def value():
        with no_grad():
            return loss_fn().item()

    def pattern():
        with no_grad(), _record_kinks() as log:
            loss_fn()
        return log

    base = pattern()
    worst, checked, skipped = 0.0, 0, 0
    try:
        for p, orig, ga in zip(params, originals, analytic):
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                if base:
                    kinked = False
                    for d in (10 * step, -10 * step):
                        flat[i] = orig.reshape(-1)[i] + d
                        kinked |= not _same_pattern(base, pattern())
                    flat[i] = orig.reshape(-1)[i]
                    if kinked:
                        skipped += 1
                        continue
                flat[i] = orig.reshape(-1)[i] + step
                fp = value()
                flat[i] = orig.reshape(-1)[i] - step
                fm = value()
                flat[i] = orig.reshape(-1)[i]
                numeric = (fp - fm) / (2 * step)
                worst = max(worst, abs(ga.reshape(-1)[i] - numeric) / max(1.0, abs(numeric)))
                checked += 1
    finally:
        for p, orig in zip(params, originals):
            p.data[...] = orig
    return GradCheckResult(worst, checked, skipped)
