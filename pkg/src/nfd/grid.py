"""Dense grid tensors, normalized coordinate lattices, resampling, DCT and metrics.

A grid instance is stored channel-major as a float64 array of shape
``(m, N1, ..., Nn)``.  Coordinates live on ``[-1, 1]^n`` with inclusive
endpoints, so resampling uses the matching align-corners convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import InvalidArgument, UnsupportedRank

RESAMPLE_METHODS = ("nearest", "bilinear", "bicubic")


@dataclass(frozen=True, eq=False)
class GridTensor:
    """An ``m``-channel grid over an ``n``-dimensional lattice."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim < 2:
            raise InvalidArgument(f"grid needs a channel axis and >= 1 spatial axis, got shape {arr.shape}")
        if arr.size == 0:
            raise InvalidArgument("grid dimensions must be positive")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_values(cls, channels: int, shape: Sequence[int], values) -> "GridTensor":
        values = np.asarray(values, dtype=np.float64).ravel()
        expected = channels * math.prod(shape)
        if values.size != expected:
            raise InvalidArgument(f"expected {expected} values, got {values.size}")
        return cls(values.reshape((channels, *shape)))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape[1:])

    @property
    def rank(self) -> int:
        return self.data.ndim - 1

    @property
    def size(self) -> int:
        """Scalar count ``D = m * prod(N_k)``."""
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        return self.data.ravel()

    def __eq__(self, other):
        if not isinstance(other, GridTensor):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"GridTensor(channels={self.channels}, shape={self.shape})"


@dataclass(frozen=True, eq=False)
class CoordinateSet:
    """Lattice points in lexicographic order (first axis slowest)."""

    dims: tuple[int, ...]
    points: np.ndarray

    @property
    def n(self) -> int:
        return len(self.dims)

    def __len__(self):
        return self.points.shape[0]


@dataclass(eq=False)
class LabeledDataset:
    instances: list[GridTensor]
    labels: list[int]
    class_count: int

    def __post_init__(self):
        self.labels = [int(y) for y in self.labels]
        if len(self.instances) != len(self.labels):
            raise InvalidArgument("instances and labels differ in length")
        if self.class_count < 1:
            raise InvalidArgument("class_count must be >= 1")
        for y in self.labels:
            if not 0 <= y < self.class_count:
                raise InvalidArgument(f"label {y} outside [0, {self.class_count})")
        if self.instances:
            key = (self.instances[0].channels, self.instances[0].shape)
            for g in self.instances[1:]:
                if (g.channels, g.shape) != key:
                    raise InvalidArgument("instances must share channels and shape")

    def __len__(self):
        return len(self.instances)

    @property
    def channels(self) -> int:
        return self.instances[0].channels

    @property
    def shape(self) -> tuple[int, ...]:
        return self.instances[0].shape

    def array(self) -> np.ndarray:
        """Stacked ``(count, m, N1, ..., Nn)`` view of all instances."""
        return np.stack([g.data for g in self.instances])

    def indices_of(self, label: int) -> list[int]:
        return [i for i, y in enumerate(self.labels) if y == label]

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        return LabeledDataset([self.instances[i] for i in indices],
                              [self.labels[i] for i in indices], self.class_count)

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (self.class_count == other.class_count and self.labels == other.labels
                and all(a == b for a, b in zip(self.instances, other.instances))
                and len(self) == len(other))


def axis_coordinates(size: int) -> np.ndarray:
    """Evenly spaced points on [-1, 1] with inclusive endpoints; a single point sits at 0."""
    if size < 1:
        raise InvalidArgument(f"lattice size must be >= 1, got {size}")
    if size == 1:
        return np.zeros(1)
    # integer numerator keeps the lattice exactly antisymmetric
    return (2.0 * np.arange(size) - (size - 1)) / (size - 1)


def make_coordinate_set(dims: Sequence[int]) -> CoordinateSet:
    dims = tuple(int(d) for d in dims)
    if not dims:
        raise InvalidArgument("dims must be non-empty")
    axes = [axis_coordinates(d) for d in dims]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    points.setflags(write=False)
    return CoordinateSet(dims, points)


# -- resampling ---------------------------------------------------------------

def _cubic_kernel(t: np.ndarray, a: float = -0.75) -> np.ndarray:
    t = np.abs(t)
    out = np.zeros_like(t)
    near = t <= 1
    far = (t > 1) & (t < 2)
    out[near] = ((a + 2) * t[near] - (a + 3)) * t[near] ** 2 + 1
    out[far] = ((a * t[far] - 5 * a) * t[far] + 8 * a) * t[far] - 4 * a
    return out


@lru_cache(maxsize=256)
def interpolation_matrix(n_in: int, n_out: int, method: str) -> np.ndarray:
    """``(n_out, n_in)`` matrix mapping samples on one lattice to another.

    Source position of output ``i`` follows the shared coordinate convention:
    ``(c_i + 1) / 2 * (n_in - 1)`` with ``c_i`` the output lattice coordinate.
    Out-of-range taps are clamped to the border.
    """
    if method not in RESAMPLE_METHODS:
        raise InvalidArgument(f"unknown method {method!r}")
    pos = (axis_coordinates(n_out) + 1.0) / 2.0 * (n_in - 1)
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    if method == "nearest":
        mat[rows, np.clip(np.floor(pos + 0.5).astype(int), 0, n_in - 1)] = 1.0
    elif method == "bilinear":
        lo = np.clip(np.floor(pos).astype(int), 0, max(n_in - 2, 0))
        frac = pos - lo
        hi = np.minimum(lo + 1, n_in - 1)
        np.add.at(mat, (rows, lo), 1.0 - frac)
        np.add.at(mat, (rows, hi), frac)
    else:
        base = np.floor(pos).astype(int)
        frac = pos - base
        for off in (-1, 0, 1, 2):
            idx = np.clip(base + off, 0, n_in - 1)
            np.add.at(mat, (rows, idx), _cubic_kernel(frac - off))
    mat.setflags(write=False)
    return mat


def apply_separable(data: np.ndarray, mats: Sequence[np.ndarray]) -> np.ndarray:
    """Apply one matrix per spatial axis of a ``(m, N1, ..., Nn)`` array."""
    out = data
    for axis, mat in enumerate(mats, start=1):
        out = np.moveaxis(np.tensordot(mat, out, axes=([1], [axis])), 0, axis)
    return out


def _check_rank(rank: int):
    if rank not in (1, 2, 3):
        raise UnsupportedRank(f"rank {rank} not supported (need 1, 2 or 3)")


def resample(g: GridTensor, target: Sequence[int], method: str = "bilinear") -> GridTensor:
    _check_rank(g.rank)
    target = tuple(int(t) for t in target)
    if len(target) != g.rank:
        raise InvalidArgument(f"target rank {len(target)} != grid rank {g.rank}")
    if any(t < 1 for t in target):
        raise InvalidArgument("target dims must be positive")
    mats = [interpolation_matrix(n_in, n_out, method) for n_in, n_out in zip(g.shape, target)]
    return GridTensor(apply_separable(g.data, mats))


# -- orthonormal DCT-II -------------------------------------------------------

@lru_cache(maxsize=256)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis; row ``k`` is frequency ``k``."""
    k = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    mat = np.cos(np.pi * k * (2 * j + 1) / (2 * n)) * np.sqrt(2.0 / n)
    mat[0] /= np.sqrt(2.0)
    mat.setflags(write=False)
    return mat


def dct_array(data: np.ndarray) -> np.ndarray:
    return apply_separable(data, [dct_matrix(n) for n in data.shape[1:]])


def idct_array(coeffs: np.ndarray) -> np.ndarray:
    return apply_separable(coeffs, [dct_matrix(n).T for n in coeffs.shape[1:]])


def dct(g: GridTensor) -> GridTensor:
    _check_rank(g.rank)
    return GridTensor(dct_array(g.data))


def idct(c: GridTensor) -> GridTensor:
    _check_rank(c.rank)
    return GridTensor(idct_array(c.data))


# -- metrics ------------------------------------------------------------------

def _same_layout(a: GridTensor, b: GridTensor):
    if a.data.shape != b.data.shape:
        raise InvalidArgument(f"shape mismatch: {a.data.shape} vs {b.data.shape}")


def mse(a: GridTensor, b: GridTensor) -> float:
    _same_layout(a, b)
    return float(np.mean((a.data - b.data) ** 2))


def psnr(a: GridTensor, b: GridTensor, peak: float = 1.0) -> float:
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)
