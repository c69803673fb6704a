"""Toy translation networks.

Images are (N, 1, 16, 16) in [-1, 1]. The encoder halves resolution twice
(16 -> 8 -> 4), the decoder mirrors it with nearest upsampling, and the
discriminator scores each image with a single logit.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .sampling import RngStream
from .tensor import (
    ShapeError, Tensor, conv2d, leaky_relu, mean, no_grad, reshape, scale, shift, sigmoid, upsample2x,
)

IMAGE_SHAPE = (1, 16, 16)
SLOPE = 0.2


def _conv_param(rng, out_c, in_c, k, gain=1.0):
    std = gain * np.sqrt(2.0 / (in_c * k * k))
    return rng.normal((out_c, in_c, k, k)) * std


def _check_images(x, shape, what):
    if len(x.shape) != 4 or tuple(x.shape[1:]) != tuple(shape):
        raise ShapeError(f"{what}: expected (n, {', '.join(map(str, shape))}), got {x.shape}")


class Module:
    """Named parameter container; subclasses fill ``self.params`` in order."""

    def __init__(self):
        self.params = OrderedDict()

    def _add(self, name, value, trainable=True):
        self.params[name] = Tensor(value, requires_grad=trainable, name=name)

    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def num_parameters(self):
        return sum(p.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def __getitem__(self, name):
        return self.params[name]


class Generator(Module):
    """G = decode . encode with a (n, feat_c, 4, 4) bottleneck."""

    def __init__(self, rng, width=8):
        super().__init__()
        w1, w2 = width, 2 * width
        self.feature_shape = (w2, 4, 4)
        self._add("enc1.w", _conv_param(rng, w1, 1, 4))
        self._add("enc1.b", np.zeros(w1))
        self._add("enc2.w", _conv_param(rng, w2, w1, 4))
        self._add("enc2.b", np.zeros(w2))
        self._add("dec1.w", _conv_param(rng, w2, w2, 3))
        self._add("dec1.b", np.zeros(w2))
        self._add("dec2.w", _conv_param(rng, w1, w2, 3))
        self._add("dec2.b", np.zeros(w1))
        self._add("dec3.w", _conv_param(rng, 1, w1, 3, gain=0.5))
        self._add("dec3.b", np.zeros(1))

    def encode(self, x):
        _check_images(x, IMAGE_SHAPE, "encode")
        p = self.params
        h = leaky_relu(conv2d(x, p["enc1.w"], p["enc1.b"], stride=2, padding=1), SLOPE)
        return leaky_relu(conv2d(h, p["enc2.w"], p["enc2.b"], stride=2, padding=1), SLOPE)

    def decode(self, e):
        _check_images(e, self.feature_shape, "decode")
        p = self.params
        h = leaky_relu(conv2d(upsample2x(e), p["dec1.w"], p["dec1.b"], padding=1), SLOPE)
        h = leaky_relu(conv2d(upsample2x(h), p["dec2.w"], p["dec2.b"], padding=1), SLOPE)
        out = conv2d(h, p["dec3.w"], p["dec3.b"], padding=1)
        # 2*sigmoid(z) - 1 saturates into (-1, 1)
        return shift(scale(sigmoid(out), 2.0), -1.0)

    def __call__(self, x):
        return self.decode(self.encode(x))


class Discriminator(Module):
    """Three convolutions and a spatial mean: image -> one logit per sample."""

    def __init__(self, rng, width=8):
        super().__init__()
        w1, w2 = width, 2 * width
        self._add("c1.w", _conv_param(rng, w1, 1, 4))
        self._add("c1.b", np.zeros(w1))
        self._add("c2.w", _conv_param(rng, w2, w1, 4))
        self._add("c2.b", np.zeros(w2))
        self._add("c3.w", _conv_param(rng, 1, w2, 3, gain=0.5))
        self._add("c3.b", np.zeros(1))

    def __call__(self, y):
        _check_images(y, IMAGE_SHAPE, "discriminate")
        p = self.params
        h = leaky_relu(conv2d(y, p["c1.w"], p["c1.b"], stride=2, padding=1), SLOPE)
        h = leaky_relu(conv2d(h, p["c2.w"], p["c2.b"], stride=2, padding=1), SLOPE)
        h = conv2d(h, p["c3.w"], p["c3.b"], padding=1)
        return mean(h, (1, 2, 3))


def encode(gen, x):
    return gen.encode(x)


def decode(gen, e):
    return gen.decode(e)


def discriminate(disc, y):
    return disc(y)


PHI_MODES = ("pixel", "fixed_random_features")


@dataclass
class ContentExtractor:
    """Content representation phi.

    ``pixel`` flattens the image; ``fixed_random_features`` runs two frozen
    random convolutions (seeded, never trained) and flattens the result.
    """
    mode: str = "fixed_random_features"
    seed: int = 0
    width: int = 8

    def __post_init__(self):
        if self.mode not in PHI_MODES:
            raise ValueError(f"phi mode must be one of {PHI_MODES}, got {self.mode!r}")
        rng = RngStream(self.seed).substream("phi")
        w1, w2 = self.width, 2 * self.width
        self.w1 = Tensor(_conv_param(rng, w1, 1, 3))
        self.b1 = Tensor(rng.normal(w1) * 0.1)
        self.w2 = Tensor(_conv_param(rng, w2, w1, 4))
        self.b2 = Tensor(rng.normal(w2) * 0.1)

    def feature_maps(self, img):
        _check_images(img, IMAGE_SHAPE, "extract_content")
        h = leaky_relu(conv2d(img, self.w1, self.b1, padding=1), SLOPE)
        return leaky_relu(conv2d(h, self.w2, self.b2, stride=2, padding=1), SLOPE)

    def __call__(self, img):
        if self.mode == "pixel":
            _check_images(img, IMAGE_SHAPE, "extract_content")
            return reshape(img, (img.shape[0], -1))
        h = self.feature_maps(img)
        return reshape(h, (h.shape[0], -1))

    def pooled(self, img):
        """Global-average-pooled frozen features, (N, 2*width); the Frechet featurizer."""
        if isinstance(img, Tensor):
            img = img.data
        with no_grad():
            h = self.feature_maps(Tensor(img))
        return h.data.mean(axis=(2, 3))

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]


def extract_content(img, phi):
    return phi(img)
