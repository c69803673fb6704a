"""Procedural two-domain dataset: filled ellipses and their outlines.

Both domains draw scene parameters from the same per-index stream, so the
i-th ``filled`` image and the i-th ``outline`` image show the same ellipse.
Training samples the domains independently; the pairing is only used by the
evaluation oracle.
"""
from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sampling import RngStream
from .tensor import Tensor

SIZE = 16
DOMAINS = ("filled", "outline")
_SUPERSAMPLE = 4
_SCENE_KEY = zlib.crc32(b"scene")


@dataclass(frozen=True)
class SceneParams:
    center: tuple[float, float]
    radii: tuple[float, float]
    intensity: float

    def __post_init__(self):
        for c, r in zip(self.center, self.radii):
            if c - r < 1.0 - 1e-12 or c + r > SIZE - 2 + 1e-12:
                raise ValueError(f"ellipse {self} leaves the canvas interior [1, {SIZE - 2}]")
        if not 0.4 <= self.intensity <= 1.0:
            raise ValueError(f"intensity must lie in [0.4, 1], got {self.intensity}")


@dataclass
class DomainSample:
    image: Tensor
    content_target: Tensor
    params: SceneParams
    index: int
    domain: str


def scene_params(seed, index):
    rng = RngStream(seed, key=(_SCENE_KEY, index))
    u = rng.uniform(5)
    radii = (2.0 + 3.0 * u[0], 2.0 + 3.0 * u[1])
    lo = [1.0 + r for r in radii]
    hi = [SIZE - 2 - r for r in radii]
    center = (lo[0] + (hi[0] - lo[0]) * u[2], lo[1] + (hi[1] - lo[1]) * u[3])
    return SceneParams(center, radii, 0.4 + 0.6 * u[4])


def _coverage(center, radii):
    """Fraction of each pixel inside the ellipse, by regular supersampling."""
    if min(radii) <= 0:
        return np.zeros((SIZE, SIZE))
    k = _SUPERSAMPLE
    offs = (np.arange(k) + 0.5) / k - 0.5
    coords = (np.arange(SIZE)[:, None] + offs[None, :]).reshape(-1)
    rr = ((coords - center[0]) / radii[0]) ** 2
    cc = ((coords - center[1]) / radii[1]) ** 2
    inside = (rr[:, None] + cc[None, :]) <= 1.0
    return inside.reshape(SIZE, k, SIZE, k).mean(axis=(1, 3))


def render(params, domain):
    """(16, 16) array in [-1, 1]; background is -1."""
    cov = _coverage(params.center, params.radii)
    if domain == "outline":
        inner = _coverage(params.center, (params.radii[0] - 1.0, params.radii[1] - 1.0))
        cov = cov - inner
    elif domain != "filled":
        raise ValueError(f"unknown domain {domain!r}; expected one of {DOMAINS}")
    return -1.0 + 2.0 * params.intensity * cov


def generate_domain(domain, n, seed, start=0):
    """Samples ``start .. start+n-1`` of a domain; content target is the image itself."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    out = []
    for i in range(start, start + n):
        p = scene_params(seed, i)
        img = Tensor(render(p, domain)[None])
        out.append(DomainSample(img, img, p, i, domain))
    return out


def data_budget(samples, fraction, seed):
    """Deterministic subsample of round(fraction * n) items, original order kept."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    n = len(samples)
    k = int(round(fraction * n))
    if k == 0:
        raise ValueError(f"fraction {fraction} of {n} samples leaves nothing to train on")
    if k == n:
        return list(samples)
    idx = np.sort(RngStream(seed).substream("budget").choice(n, k, replace=False))
    return [samples[i] for i in idx]


def stack_images(samples, attr="image"):
    return np.stack([getattr(s, attr).data for s in samples])


def to_uint8(img):
    """Affine map [-1, 1] -> [0, 255], rounded and clipped."""
    return np.clip(np.rint((np.asarray(img) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def write_pgm(path, img):
    """Binary PGM (P5) of a 2-D image in [-1, 1]."""
    arr = to_uint8(img)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def export_dataset(out_dir, n, seed, start=0):
    """Write both domains as PGM files plus ``manifest.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for domain in DOMAINS:
        for s in generate_domain(domain, n, seed, start) if n > 0 else []:
            name = f"{domain}_{s.index:05d}.pgm"
            write_pgm(out / name, s.image.data[0])
            p = s.params
            rows.append([s.index, domain, name, repr(p.center[0]), repr(p.center[1]),
                         repr(p.radii[0]), repr(p.radii[1]), repr(p.intensity)])
    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "domain", "file", "center_row", "center_col", "radius_row", "radius_col", "intensity"])
        w.writerows(rows)
    return out / "manifest.csv"
