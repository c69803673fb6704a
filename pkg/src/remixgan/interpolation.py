"""Feature mixing and the target estimators that ReMix is compared against."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, mul

SCHEMES = ("none", "remix", "mixup", "wm", "lsr")
ESTIMATING_SCHEMES = ("mixup", "wm", "lsr")


@dataclass
class MixPlan:
    """One augmentation event.

    ``index_a``/``index_b`` are the dataset indices of the two source batches;
    ``lam`` is either a scalar or one weight per item.
    """
    index_a: np.ndarray
    index_b: np.ndarray
    lam: float | np.ndarray
    unrelated_perm: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam)
        if np.any(lam < 0.5) or np.any(lam > 1.0):
            raise ValueError(f"mixing weight must lie in [0.5, 1], got {self.lam}")
        perm = np.asarray(self.unrelated_perm)
        if np.any(perm == np.arange(perm.size)):
            raise ValueError("unrelated_perm has a fixed point")


@dataclass
class TargetEstimate:
    scheme: str
    value: Optional[Tensor] = None

    def __post_init__(self):
        if self.scheme not in ("remix",) + ESTIMATING_SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if (self.value is None) != (self.scheme == "remix"):
            raise ValueError("a target value is present exactly when the scheme estimates one")


def _weight(lam, like):
    """Scalar weight, or a per-item weight broadcast over the trailing axes."""
    lam_arr = np.asarray(lam, dtype=np.float64)
    if lam_arr.ndim == 0:
        return float(lam_arr), 1.0 - float(lam_arr)
    if lam_arr.shape != (like.shape[0],):
        raise ShapeError(f"per-item weights {lam_arr.shape} do not match batch {like.shape}")
    shape = (-1,) + (1,) * (len(like.shape) - 1)
    w = np.broadcast_to(lam_arr.reshape(shape), like.shape)
    return Tensor(w), Tensor(1.0 - w)


def _convex(a, b, lam, what):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    wa, wb = _weight(lam, a)
    return mul(a, wa) + mul(b, wb)


def mix_features(e1, e2, lam):
    """lam * e1 + (1 - lam) * e2, differentiable in both inputs."""
    if np.any(np.asarray(lam) < 0) or np.any(np.asarray(lam) > 1):
        raise ValueError(f"mixing weight must lie in [0, 1], got {lam}")
    return _convex(e1, e2, lam, "mix_features")


def estimate_target_mixup(t1, t2, lam):
    return _convex(t1, t2, lam, "estimate_target_mixup")


def estimate_target_wm(t1, t2, lam):
    """Target of whichever endpoint weighs more; ties go to ``t1``."""
    t1, t2 = as_tensor(t1), as_tensor(t2)
    if t1.shape != t2.shape:
        raise ShapeError(f"estimate_target_wm: shape mismatch {t1.shape} vs {t2.shape}")
    lam_arr = np.asarray(lam)
    if lam_arr.ndim == 0:
        return t1 if lam_arr >= 0.5 else t2
    pick = (lam_arr >= 0.5).astype(np.float64)
    return _convex(t1, t2, pick, "estimate_target_wm")


def clamp_weight_lsr(lam, lo=0.1, hi=0.9):
    if not 0.0 <= lo <= hi <= 1.0:
        raise ValueError(f"clamp range must satisfy 0 <= lo <= hi <= 1, got [{lo}, {hi}]")
    if np.ndim(lam) == 0:
        return min(hi, max(lo, float(lam)))
    return np.clip(lam, lo, hi)


def estimate_target_lsr(t1, t2, lam, lo=0.1, hi=0.9):
    return estimate_target_mixup(t1, t2, clamp_weight_lsr(lam, lo, hi))


def estimate_target(scheme, t1, t2, lam, lsr_range=(0.1, 0.9)):
    """Dispatch on the scheme name; ``remix`` carries no estimate."""
    if scheme == "remix":
        return TargetEstimate("remix")
    if scheme == "mixup":
        return TargetEstimate(scheme, estimate_target_mixup(t1, t2, lam))
    if scheme == "wm":
        return TargetEstimate(scheme, estimate_target_wm(t1, t2, lam))
    if scheme == "lsr":
        return TargetEstimate(scheme, estimate_target_lsr(t1, t2, lam, *lsr_range))
    raise ValueError(f"unknown scheme {scheme!r}")
