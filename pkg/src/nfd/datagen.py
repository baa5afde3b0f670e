"""Procedural desk-scale data: Gaussian class blobs, textured shapes, smooth images and gratings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .grid import GridTensor, LabeledDataset, axis_coordinates

SHAPE_KINDS = ("circle", "square", "stripes", "cross", "ring", "checker")


def _lattice(size: int) -> tuple[np.ndarray, np.ndarray]:
    ax = axis_coordinates(size)
    return np.meshgrid(ax, ax, indexing="ij")


def blob_image(rng: np.random.Generator, label: int, classes: int, size: int, channels: int) -> np.ndarray:
    """A Gaussian bump whose mean position is set by the class; per-sample jitter and noise."""
    yy, xx = _lattice(size)
    angle = 2 * np.pi * label / classes
    cy, cx = 0.5 * np.sin(angle), 0.5 * np.cos(angle)
    cy += rng.normal(0, 0.08)
    cx += rng.normal(0, 0.08)
    width = rng.uniform(0.25, 0.35)
    bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
    img = np.stack([bump * rng.uniform(0.7, 1.0) for _ in range(channels)])
    img += rng.normal(0, 0.03, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _soft(t: np.ndarray, sharpness: float) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-sharpness * t))


def shape_mask(kind: str, rng: np.random.Generator, size: int) -> np.ndarray:
    """Soft-edged foreground mask in [0, 1] for one procedural shape."""
    yy, xx = _lattice(size)
    cy, cx = rng.uniform(-0.2, 0.2, size=2)
    r = rng.uniform(0.45, 0.65)
    sharp = size * 0.8
    dy, dx = yy - cy, xx - cx
    if kind == "circle":
        return _soft(r - np.hypot(dy, dx), sharp)
    if kind == "square":
        return _soft(r * 0.9 - np.maximum(np.abs(dy), np.abs(dx)), sharp)
    if kind == "stripes":
        theta = rng.uniform(-0.3, 0.3)
        freq = rng.uniform(2.6, 3.4)
        phase = rng.uniform(0, 2 * np.pi)
        u = np.cos(theta) * yy + np.sin(theta) * xx
        return 0.5 + 0.5 * np.sin(np.pi * freq * u + phase)
    if kind == "cross":
        arm = r * 0.35
        return np.maximum(_soft(arm - np.abs(dy), sharp) * _soft(r - np.abs(dx), sharp),
                          _soft(arm - np.abs(dx), sharp) * _soft(r - np.abs(dy), sharp))
    if kind == "ring":
        return _soft(0.18 - np.abs(np.hypot(dy, dx) - r * 0.8), sharp)
    if kind == "checker":
        f = rng.uniform(1.8, 2.2)
        return 0.5 + 0.5 * np.sign(np.sin(np.pi * f * dy)) * np.sign(np.sin(np.pi * f * dx)) * 0.9
    raise InvalidArgument(f"unknown shape kind {kind!r}")


def shape_image(rng: np.random.Generator, label: int, size: int, channels: int) -> np.ndarray:
    mask = shape_mask(SHAPE_KINDS[label], rng, size)
    yy, xx = _lattice(size)
    fg = rng.uniform(0.6, 0.95, size=channels)
    bg = rng.uniform(0.05, 0.3, size=channels)
    # low-frequency texture so instances of a class are not identical
    tex = 0.06 * np.sin(rng.uniform(1, 3) * yy + rng.uniform(0, 6)) * np.cos(rng.uniform(1, 3) * xx)
    img = bg[:, None, None] + (fg - bg)[:, None, None] * mask[None] + tex[None]
    return np.clip(img, 0.0, 1.0)


def generate(kind: str, classes: int, per_class: int, size: int, channels: int, seed: int) -> LabeledDataset:
    """Deterministic class-balanced dataset, instances ordered by class."""
    if classes < 1 or per_class < 1 or size < 2 or channels < 1:
        raise InvalidArgument("classes, per_class, channels must be >= 1 and size >= 2")
    rng = np.random.default_rng(seed)
    if kind == "blobs":
        make = lambda y: blob_image(rng, y, classes, size, channels)  # noqa: E731
    elif kind == "shapes":
        if classes > len(SHAPE_KINDS):
            raise InvalidArgument(f"shapes supports at most {len(SHAPE_KINDS)} classes")
        make = lambda y: shape_image(rng, y, size, channels)  # noqa: E731
    else:
        raise InvalidArgument(f"unknown generator {kind!r}")
    instances, labels = [], []
    for y in range(classes):
        for _ in range(per_class):
            instances.append(GridTensor(make(y)))
            labels.append(y)
    return LabeledDataset(instances, labels, classes)


def smooth_image(rng: np.random.Generator, size: int, channels: int, terms: int = 3) -> np.ndarray:
    """Sum of a few random low-frequency plane waves, scaled into [0, 1]."""
    yy, xx = _lattice(size)
    img = np.zeros((channels, size, size))
    for c in range(channels):
        acc = np.zeros((size, size))
        for _ in range(terms):
            ky, kx = rng.uniform(-3.0, 3.0, size=2)
            acc += rng.uniform(0.5, 1.0) * np.sin(ky * yy + kx * xx + rng.uniform(0, 2 * np.pi))
        img[c] = 0.5 + 0.45 * acc / terms
    return img


@dataclass(frozen=True)
class Grating:
    """A few superposed plane waves shared by all channels, with per-channel offset and gain.

    Being a closed-form function on [-1, 1]^2, it can be sampled at any
    lattice, which gives exact high-resolution ground truth.
    """

    wavenumbers: tuple[float, ...]
    angles: tuple[float, ...]
    amplitudes: tuple[float, ...]
    phases: tuple[float, ...]
    base: tuple[float, ...]
    gain: tuple[float, ...]

    def sample(self, size: int) -> np.ndarray:
        yy, xx = _lattice(size)
        pat = np.zeros((size, size))
        for k, th, a, ph in zip(self.wavenumbers, self.angles, self.amplitudes, self.phases):
            pat += a * np.sin(k * (np.cos(th) * yy + np.sin(th) * xx) + ph)
        pat /= len(self.wavenumbers)
        return np.asarray(self.base)[:, None, None] + np.asarray(self.gain)[:, None, None] * pat[None]


def random_grating(rng: np.random.Generator, channels: int, kmin: float = 3.0, kmax: float = 9.0,
                   waves: int = 2) -> Grating:
    """Wavenumbers in radians per unit coordinate; values stay inside [0, 1]."""
    ks, ths, amps, phs = [], [], [], []
    for _ in range(waves):
        ks.append(float(rng.uniform(kmin, kmax)))
        ths.append(float(rng.uniform(0, np.pi)))
        amps.append(float(rng.uniform(0.5, 1.0)))
        phs.append(float(rng.uniform(0, 2 * np.pi)))
    base = tuple(float(v) for v in rng.uniform(0.3, 0.7, size=channels))
    gain = tuple(float(v) for v in rng.uniform(0.15, 0.3, size=channels))
    return Grating(tuple(ks), tuple(ths), tuple(amps), tuple(phs), base, gain)


def gratings(count: int, channels: int, seed: int, **kwargs) -> list[Grating]:
    rng = np.random.default_rng(seed)
    return [random_grating(rng, channels, **kwargs) for _ in range(count)]
