"""Adversarial objectives, content distances, the relative content loss and
the running margin it is bounded by."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, maximum, mean, softplus, tabs

MARGIN_RULES = ("paper", "ema")


def adversarial_loss_generator(d_fake):
    """Non-saturating logistic loss: mean softplus(-d_fake)."""
    return mean(softplus(-as_tensor(d_fake)))


def adversarial_loss_discriminator(d_real, d_fake):
    return mean(softplus(-as_tensor(d_real))) + mean(softplus(as_tensor(d_fake)))


def content_distance(fa, fb):
    """Mean absolute difference over all elements."""
    fa, fb = as_tensor(fa), as_tensor(fb)
    if fa.shape != fb.shape:
        raise ShapeError(f"content_distance: shape mismatch {fa.shape} vs {fb.shape}")
    return mean(tabs(fa - fb))


def content_distance_per_item(fa, fb):
    """Mean absolute difference per batch item; (N, ...) x (N, ...) -> (N,)."""
    fa, fb = as_tensor(fa), as_tensor(fb)
    if fa.shape != fb.shape:
        raise ShapeError(f"content_distance_per_item: shape mismatch {fa.shape} vs {fb.shape}")
    axes = tuple(range(1, len(fa.shape)))
    return mean(tabs(fa - fb), axes) if axes else tabs(fa - fb)


def relative_content_loss(d1, d2, a_bar):
    """Hinge losses (L_p, L_n) on per-item content distances.

    ``d1`` is the distance to the heavier endpoint's target, ``d2`` to the
    lighter one's. L_p penalises d1 > d2, L_n penalises d2 > a_bar. Both are
    batch means.
    """
    d1, d2 = as_tensor(d1), as_tensor(d2)
    if d1.shape != d2.shape:
        raise ShapeError(f"relative_content_loss: length mismatch {d1.shape} vs {d2.shape}")
    if d1.size < 1:
        raise ShapeError("relative_content_loss: empty batch")
    if a_bar < 0:
        raise ValueError(f"margin must be nonnegative, got {a_bar}")
    l_p = mean(maximum(d1 - d2, 0.0))
    l_n = mean(maximum(d2 - float(a_bar), 0.0))
    return l_p, l_n


def margin_batch_statistic(s_prime_feats, t2_feats, perm):
    """Mean content distance of unrelated pairs (s'_i, t2_perm(i)); a plain float."""
    s = as_tensor(s_prime_feats).data
    t = as_tensor(t2_feats).data
    n = s.shape[0]
    if n < 2:
        raise ValueError(f"margin statistic needs at least 2 items, got {n}")
    perm = np.asarray(perm)
    if perm.shape != (n,) or np.any(perm == np.arange(n)):
        raise ValueError("perm must be a fixed-point-free permutation of the batch")
    if s.shape != t.shape:
        raise ShapeError(f"margin_batch_statistic: shape mismatch {s.shape} vs {t.shape}")
    diff = np.abs(s - t[perm]).reshape(n, -1)
    return float(diff.mean(axis=1).mean())


@dataclass
class MarginTracker:
    """Running margin with momentum; ``a_bar`` starts at 0.

    ``paper`` applies a_bar <- m*a_bar + (1-m)*(a - a_bar), whose fixed point is
    a/2. ``ema`` is the usual exponential average with fixed point a.
    """
    a_bar: float = 0.0
    momentum: float = 0.99
    update_rule: str = "paper"

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.update_rule not in MARGIN_RULES:
            raise ValueError(f"update_rule must be one of {MARGIN_RULES}, got {self.update_rule!r}")

    def state(self):
        return {"a_bar": self.a_bar, "momentum": self.momentum, "update_rule": self.update_rule}


def margin_update(tracker, a):
    """Return a new tracker after one momentum step with statistic ``a``."""
    a = float(a)
    if a < 0:
        raise ValueError(f"margin statistic must be nonnegative, got {a}")
    m = tracker.momentum
    if tracker.update_rule == "paper":
        a_bar = m * tracker.a_bar + (1.0 - m) * (a - tracker.a_bar)
    else:
        a_bar = m * tracker.a_bar + (1.0 - m) * a
    return MarginTracker(a_bar, m, tracker.update_rule)


def margin_closed_form(a_bar0, stats, momentum):
    """Non-recursive value of the ``paper`` rule after consuming ``stats``.

    The rule is affine, a' = r*a + (1-m)*s with r = 2m - 1, so after k steps
    a_k = r**k * a_0 + (1-m) * sum_j r**(k-1-j) * s_j.
    """
    s = np.asarray(list(stats), dtype=np.float64)
    r = 2.0 * momentum - 1.0
    k = s.size
    powers = r ** np.arange(k - 1, -1, -1, dtype=np.float64)
    return float(r ** k * a_bar0 + (1.0 - momentum) * np.dot(powers, s))


@dataclass
class LossBundle:
    gan: Tensor
    content: Tensor
    total: Tensor

    @classmethod
    def combine(cls, gan, content, w_gan=1.0, w_content=1.0):
        return cls(gan, content, gan * w_gan + content * w_content)

    def values(self):
        return {"gan": self.gan.item(), "content": self.content.item(), "total": self.total.item()}


