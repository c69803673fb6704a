"""Evaluation metrics over a fixed featurizer."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)


@dataclass
class FeatureStats:
    mean: np.ndarray
    covariance: np.ndarray
    count: int

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=np.float64))
        d = self.mean.size
        if cov.shape != (d, d):
            raise ValueError(f"covariance shape {cov.shape} does not match mean dimension {d}")
        if not np.allclose(cov, cov.T, atol=1e-10, rtol=0):
            raise ValueError("covariance is not symmetric")
        self.covariance = 0.5 * (cov + cov.T)

    @property
    def dim(self):
        return self.mean.size

    @classmethod
    def from_features(cls, feats):
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 2:
            raise ValueError(f"need an (n >= 2, d) feature matrix, got {feats.shape}")
        return cls(feats.mean(axis=0), np.cov(feats, rowvar=False), feats.shape[0])


def _psd_sqrt(mat):
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    if vals.min() < -1e-6:
        log.warning("matrix has eigenvalue %.3g < -1e-6; clipping to 0 (rank-deficient statistics?)", vals.min())
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(sa, sb):
    """|mu_a - mu_b|^2 + tr(Ca + Cb - 2 (Ca Cb)^{1/2}).

    tr((Ca Cb)^{1/2}) is evaluated as tr((A Cb A)^{1/2}) with A = Ca^{1/2},
    which is symmetric and so goes through an eigendecomposition.
    """
    if sa.dim != sb.dim:
        raise ValueError(f"dimension mismatch: {sa.dim} vs {sb.dim}")
    diff = sa.mean - sb.mean
    root_a = _psd_sqrt(sa.covariance)
    inner = _psd_sqrt(root_a @ sb.covariance @ root_a)
    value = diff @ diff + np.trace(sa.covariance) + np.trace(sb.covariance) - 2.0 * np.trace(inner)
    return float(max(value, 0.0))


def _features(images, phi):
    if isinstance(images, Tensor):
        images = images.data
    with no_grad():
        return phi(Tensor(np.asarray(images))).data


def diversity_score(outputs, phi):
    """Mean content distance over all unordered pairs of outputs."""
    f = _features(outputs, phi)
    n = f.shape[0]
    if n < 2:
        raise ValueError(f"diversity needs at least 2 outputs, got {n}")
    total = 0.0
    for i in range(n - 1):
        total += np.abs(f[i + 1:] - f[i]).mean(axis=1).sum()
    return float(total / (n * (n - 1) / 2))


def content_error(outputs, targets, phi):
    """Mean over items of the content distance between phi(output) and phi(target)."""
    fo, ft = _features(outputs, phi), _features(targets, phi)
    if fo.shape[0] != ft.shape[0]:
        raise ValueError(f"batch size mismatch: {fo.shape[0]} outputs vs {ft.shape[0]} targets")
    return float(np.abs(fo - ft).mean(axis=1).mean())
