"""Random draws for the augmentation step: mixing weight, gate, derangement.

Streams are built on numpy's Philox counter-based generator, whose output is
specified independently of the platform. Independent substreams are keyed by
name through ``SeedSequence`` spawn keys.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np


class RngStream:
    """Seeded, serializable random stream.

    ``counter`` counts calls made through this wrapper; the full generator
    state (including Philox's own 256-bit counter) is what ``state()`` saves.
    """

    def __init__(self, seed, key=()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.Philox(ss))
        self.counter = 0

    def substream(self, name):
        """Independent child stream identified by ``name``."""
        return RngStream(self.seed, self.key + (zlib.crc32(name.encode("utf-8")),))

    @property
    def generator(self):
        return self._gen

    def uniform(self, size=None):
        self.counter += 1
        return self._gen.random(size)

    def normal(self, size=None):
        self.counter += 1
        return self._gen.standard_normal(size)

    def integers(self, low, high, size=None):
        self.counter += 1
        return self._gen.integers(low, high, size=size)

    def choice(self, n, size, replace=False):
        self.counter += 1
        return self._gen.choice(n, size=size, replace=replace)

    def state(self):
        return {"seed": self.seed, "key": list(self.key), "counter": self.counter,
                "bit_generator": self._gen.bit_generator.state}

    @classmethod
    def from_state(cls, state):
        out = cls(state["seed"], state["key"])
        out._gen.bit_generator.state = state["bit_generator"]
        out.counter = state["counter"]
        return out


@dataclass(frozen=True)
class MixWeightConfig:
    alpha: float = 0.2
    augment_probability: float = 0.25

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 <= self.augment_probability <= 1.0:
            raise ValueError(f"augment_probability must lie in [0, 1], got {self.augment_probability}")


def _log_gamma_marsaglia_tsang(shape, size, rng):
    """log of Gamma(shape, 1) draws for shape >= 1 (Marsaglia & Tsang squeeze/rejection)."""
    d = shape - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty(size)
    todo = np.arange(size)
    while todo.size:
        m = todo.size
        z = rng.normal(m)
        u = rng.uniform(m)
        v = 1.0 + c * z
        ok = v > 0
        v3 = np.where(ok, v, 1.0) ** 3
        with np.errstate(divide="ignore"):
            logu = np.log(u)
        accept = ok & (
            (u < 1.0 - 0.0331 * z ** 4)
            | (logu < 0.5 * z * z + d * (1.0 - v3 + np.log(v3)))
        )
        out[todo[accept]] = np.log(d) + np.log(v3[accept])
        todo = todo[~accept]
    return out


def log_gamma_sample(shape, size, rng):
    """log of Gamma(shape, 1) draws, valid for any shape > 0.

    Below 1 the boost Gamma(a) = Gamma(a + 1) * U**(1/a) is applied in log
    space so tiny shapes (U**5 at a = 0.2) cannot underflow to zero.
    """
    if shape <= 0:
        raise ValueError(f"gamma shape must be positive, got {shape}")
    if shape >= 1.0:
        return _log_gamma_marsaglia_tsang(shape, size, rng)
    base = _log_gamma_marsaglia_tsang(shape + 1.0, size, rng)
    u = rng.uniform(size)
    # 1 - u lies in (0, 1], keeping the log finite
    return base + np.log1p(-u) / shape


def beta_sample(alpha, beta, size, rng):
    """Beta(alpha, beta) via the ratio of two gamma variates."""
    lx = log_gamma_sample(alpha, size, rng)
    ly = log_gamma_sample(beta, size, rng)
    # x / (x + y) = 1 / (1 + exp(ly - lx))
    return 1.0 / (1.0 + np.exp(ly - lx))


def mix_weight_from_mu(mu):
    return max(mu, 1.0 - mu)


def draw_mix_weight(cfg, rng, size=None):
    """Return (mu, lambda) with mu ~ Beta(alpha, alpha) and lambda = max(mu, 1 - mu).

    With ``size`` given, returns arrays of that length instead.
    """
    mu = beta_sample(cfg.alpha, cfg.alpha, 1 if size is None else size, rng)
    lam = np.maximum(mu, 1.0 - mu)
    if size is None:
        return float(mu[0]), float(lam[0])
    return mu, lam


def should_augment(p, rng):
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"augment probability must lie in [0, 1], got {p}")
    return bool(rng.uniform() < p)


def derangement_permutation(n, rng):
    """Fixed-point-free permutation of range(n): a random cyclic shift by 1..n-1."""
    if n < 2:
        raise ValueError(f"no fixed-point-free permutation exists for n={n}; need n >= 2")
    k = int(rng.integers(1, n))
    return (np.arange(n) + k) % n
