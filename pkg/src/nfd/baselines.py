"""Competing parameterizations under one budget ledger.

* vanilla: the grid itself is the parameter set.
* idc: a low-resolution grid, decoded by deterministic upsampling.
* fred: DCT coefficients on a shared frequency mask, decoded by inverse DCT.
* ddif: a sine field (see :mod:`nfd.field`).

``storage_cost`` is the single accounting function used by every comparison.
FreD's mask is shared across the dataset and is not charged per instance.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .codec import WARMUP_ITERS, WARMUP_LR, decode, fit_fields
from .errors import BudgetTooSmall, FormatError, InvalidArgument
from .field import FieldConfig, param_count
from .grid import (GridTensor, LabeledDataset, apply_separable, dct_array, idct_array, interpolation_matrix,
                   resample)
from .gridio import Reader

FRED_MAGIC = b"FRD1"
METHODS = ("ddif", "fred", "idc", "vanilla")


@dataclass
class VanillaParam:
    grids: list[GridTensor]
    labels: list[int]


@dataclass
class IdcParam:
    grids: list[GridTensor]
    factor: int
    method: str
    labels: list[int]
    target: tuple[int, ...] | None = None

    def decode_shape(self) -> tuple[int, ...]:
        if self.target is not None:
            return tuple(self.target)
        return tuple(self.factor * n for n in self.grids[0].shape)


@dataclass
class FredParam:
    mask: np.ndarray            # boolean, shape = native dims
    coefficients: list[np.ndarray]   # per instance, shape (m, |U|)
    labels: list[int]

    @property
    def dims(self) -> tuple[int, ...]:
        return self.mask.shape


def storage_cost(method: str, *, channels: int = 1, dims: Sequence[int] = (), factor: int = 1,
                 mask_size: int = 0, config: FieldConfig | None = None) -> int:
    """Scalars one synthetic instance occupies under ``method``."""
    if method == "vanilla":
        return channels * math.prod(dims)
    if method == "idc":
        return channels * math.prod(math.ceil(n / factor) for n in dims)
    if method == "fred":
        return channels * mask_size
    if method == "ddif":
        if config is None:
            raise InvalidArgument("ddif cost needs a field config")
        return param_count(config)
    raise InvalidArgument(f"unknown method {method!r}")


# -- FreD -----------------------------------------------------------------------

def _instances_array(real: LabeledDataset | Sequence[GridTensor]) -> np.ndarray:
    grids = real.instances if isinstance(real, LabeledDataset) else list(real)
    return np.stack([g.data for g in grids])


def fred_select_mask(real: LabeledDataset | Sequence[GridTensor], k: int) -> np.ndarray:
    """Boolean mask over DCT indices keeping the ``k`` highest-variance frequencies.

    Variance is taken over all instances with channels pooled; ties go to the
    lexicographically smaller index.
    """
    data = _instances_array(real)
    dims = data.shape[2:]
    total = math.prod(dims)
    if k <= 0:
        raise InvalidArgument("k must be positive")
    if k > total:
        raise InvalidArgument(f"k={k} exceeds {total} frequencies")
    coeffs = np.stack([dct_array(x) for x in data]).reshape(-1, total)
    variance = coeffs.var(axis=0)
    ratio = variance / variance.sum() if variance.sum() > 0 else variance
    order = np.argsort(-ratio, kind="stable")
    mask = np.zeros(total, dtype=bool)
    mask[order[:k]] = True
    return mask.reshape(dims)


def _check_mask(mask: np.ndarray, dims: Sequence[int]):
    if mask.dtype != bool or mask.shape != tuple(dims):
        raise InvalidArgument(f"mask shape {mask.shape} does not match grid dims {tuple(dims)}")


def fred_encode(g: GridTensor, mask: np.ndarray) -> np.ndarray:
    """Orthonormal DCT restricted to ``mask``: the least-squares optimum on that support."""
    _check_mask(mask, g.shape)
    return dct_array(g.data)[:, mask]


def _scatter(coeffs: np.ndarray, mask: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 2 or coeffs.shape[1] != mask.sum():
        raise InvalidArgument(f"coefficients {coeffs.shape} do not match a mask of size {mask.sum()}")
    full = np.zeros((coeffs.shape[0], *mask.shape))
    full[:, mask] = coeffs
    return full


def fred_decode(coeffs: np.ndarray, mask: np.ndarray, dims: Sequence[int] | None = None) -> GridTensor:
    if dims is not None:
        _check_mask(mask, dims)
    return GridTensor(idct_array(_scatter(coeffs, mask)))


def _unnormalized_scale(n: int) -> np.ndarray:
    """Per-index factor turning orthonormal DCT-II coefficients into ``2 * sum x cos(...)`` ones."""
    s = np.full(n, math.sqrt(2.0 / n))
    s[0] = math.sqrt(1.0 / n)
    return 2.0 / s


def fred_upsample_zero_pad(coeffs: np.ndarray, mask: np.ndarray, native: Sequence[int],
                           target: Sequence[int]) -> GridTensor:
    """Frequency-domain upsampling: zero-fill high frequencies, scale by ``(M/N)^n``, inverse DCT at ``M``.

    The scale applies to the unnormalized DCT convention, in which it preserves
    the physical amplitude of every retained cosine.
    """
    native, target = tuple(native), tuple(target)
    _check_mask(mask, native)
    if len(target) != len(native) or any(m <= n for m, n in zip(target, native)):
        raise InvalidArgument(f"target {target} must exceed native {native} on every axis")
    ortho = _scatter(coeffs, mask)
    raw = apply_separable(ortho, [np.diag(_unnormalized_scale(n)) for n in native])
    lam = math.prod(m / n for m, n in zip(target, native))
    padded = np.zeros((ortho.shape[0], *target))
    padded[(slice(None), *(slice(0, n) for n in native))] = lam * raw
    back = apply_separable(padded, [np.diag(1.0 / _unnormalized_scale(m)) for m in target])
    return GridTensor(idct_array(back))


# -- IDC ------------------------------------------------------------------------

def idc_decode(p: IdcParam) -> list[GridTensor]:
    shape = p.decode_shape()
    return [resample(g, shape, p.method) for g in p.grids]


def idc_encode(g: GridTensor, stored: Sequence[int], method: str = "bilinear") -> GridTensor:
    """Least-squares low-resolution grid whose upsampling to ``g.shape`` best matches ``g``."""
    mats = [np.linalg.pinv(interpolation_matrix(n_lo, n_hi, method)) for n_lo, n_hi in zip(stored, g.shape)]
    return GridTensor(apply_separable(g.data, mats))


def idc_factor_for_budget(channels: int, dims: Sequence[int], budget: int) -> int:
    """Smallest factor >= 2 whose stored grid fits in ``budget``."""
    f = 2
    while storage_cost("idc", channels=channels, dims=dims, factor=f) > budget:
        if all(math.ceil(n / f) == 1 for n in dims):
            raise BudgetTooSmall(f"idc cannot fit {channels} channels into {budget} scalars")
        f += 1
    return f


# -- DDiF config search -----------------------------------------------------------

def ddif_config_for_budget(n: int, m: int, budget: int, layers: int | Sequence[int] = (1, 2, 3),
                           omega0: float = 30.0) -> FieldConfig:
    """Uniform-width field with the most parameters not exceeding ``budget``.

    Ties between depths go to the deeper network.
    """
    candidates = [layers] if isinstance(layers, int) else list(layers)
    best = None
    for L in candidates:
        d = 0
        while param_count(FieldConfig.uniform(n, m, L, d + 1, omega0)) <= budget:
            d += 1
        if d == 0:
            continue
        cfg = FieldConfig.uniform(n, m, L, d, omega0)
        if best is None or param_count(cfg) >= param_count(best):
            best = cfg
    if best is None:
        raise BudgetTooSmall(f"no field with n={n}, m={m} fits in {budget} parameters")
    return best


# -- reconstruction at a fixed budget ---------------------------------------------

@dataclass
class Reconstruction:
    grid: GridTensor
    budget: int
    method: str
    detail: object = None


def reconstruct_at_budget(instance: GridTensor, budget: int, method: str, *, mask: np.ndarray | None = None,
                          idc_method: str = "bilinear", layers: int | Sequence[int] = (1, 2, 3),
                          iters: int = WARMUP_ITERS, lr: float = WARMUP_LR, seed: int = 0,
                          omega0: float = 30.0, restarts: int = 1) -> Reconstruction:
    """Best reconstruction of ``instance`` that ``method`` can store in ``budget`` scalars.

    For FreD a shared ``mask`` may be supplied (its size must fit the budget);
    otherwise the instance's own top-``budget/m`` coefficients are used.
    DDiF keeps the best of ``restarts`` fits (seeds ``seed, seed+1, ...``).
    """
    m, dims = instance.channels, instance.shape
    if method == "vanilla":
        cost = storage_cost("vanilla", channels=m, dims=dims)
        if budget < cost:
            raise BudgetTooSmall(f"vanilla needs {cost} scalars, budget is {budget}")
        return Reconstruction(instance, cost, method)
    if method == "fred":
        k = budget // m
        if k < 1:
            raise BudgetTooSmall(f"fred needs at least {m} scalars")
        if mask is None:
            mask = fred_select_mask([instance], k)
        elif mask.sum() * m > budget:
            raise BudgetTooSmall(f"mask of {mask.sum()} frequencies exceeds budget {budget}")
        coeffs = fred_encode(instance, mask)
        return Reconstruction(fred_decode(coeffs, mask), storage_cost("fred", channels=m, mask_size=int(mask.sum())),
                              method, mask)
    if method == "idc":
        f = idc_factor_for_budget(m, dims, budget)
        stored = tuple(math.ceil(n / f) for n in dims)
        low = idc_encode(instance, stored, idc_method)
        p = IdcParam([low], f, idc_method, [0], target=dims)
        return Reconstruction(idc_decode(p)[0], storage_cost("idc", channels=m, dims=dims, factor=f), method, p)
    if method == "ddif":
        return reconstruct_ddif_many([instance], budget, layers=layers, iters=iters, lr=lr, seed=seed,
                                     omega0=omega0, restarts=restarts)[0]
    raise InvalidArgument(f"unknown method {method!r}")


def reconstruct_ddif_many(instances: Sequence[GridTensor], budget: int, *, layers: int | Sequence[int] = (1, 2, 3),
                          iters: int = WARMUP_ITERS, lr: float = WARMUP_LR, seed: int = 0, omega0: float = 30.0,
                          restarts: int = 1, decode_dims: Sequence[int] | None = None) -> list[Reconstruction]:
    """DDiF reconstructions of same-layout instances, fitted together in one stack.

    Instance ``i`` restart ``r`` uses seed ``seed + r``, so each result
    matches a single-instance call.  ``decode_dims`` decodes at another lattice.
    """
    if restarts < 1:
        raise InvalidArgument("restarts must be >= 1")
    first = instances[0]
    if any(g.data.shape != first.data.shape for g in instances):
        raise InvalidArgument("instances must share one layout")
    cfg = ddif_config_for_budget(first.rank, first.channels, budget, layers, omega0)
    targets = np.repeat(np.stack([g.data for g in instances]), restarts, axis=0)
    seeds = [seed + r for _ in instances for r in range(restarts)]
    fields, reports = fit_fields(targets, cfg, seeds, iters, lr)
    dims = first.shape if decode_dims is None else tuple(decode_dims)
    out = []
    for i in range(len(instances)):
        objs = [reports[i * restarts + r].objective for r in range(restarts)]
        best = fields[i * restarts + int(np.argmin(objs))]
        out.append(Reconstruction(decode(best, dims), param_count(cfg), "ddif", best))
    return out


# -- FRD1 container -------------------------------------------------------------

def fred_to_bytes(p: FredParam) -> bytes:
    """``FRD1 | u8 n | u8 0 | u16 m | n x u32 dims | u32 count | mask bitmap | count x (u32 label | f32 coeffs)``.

    The bitmap covers the dims in lexicographic order, least significant bit first.
    """
    dims = p.dims
    m = p.coefficients[0].shape[0] if p.coefficients else 0
    parts = [FRED_MAGIC, struct.pack("<BBH", len(dims), 0, m), struct.pack(f"<{len(dims)}I", *dims),
             struct.pack("<I", len(p.coefficients)),
             np.packbits(p.mask.ravel(), bitorder="little").tobytes()]
    for coeffs, y in zip(p.coefficients, p.labels):
        parts.append(struct.pack("<I", y))
        parts.append(np.asarray(coeffs).astype("<f4").tobytes())
    return b"".join(parts)


def fred_from_bytes(buf: bytes) -> FredParam:
    reader = Reader(buf)
    reader.expect_magic(FRED_MAGIC)
    n, _reserved, m = reader.unpack("<BBH", "FRD1 header")
    dims_at = reader.pos
    dims = reader.unpack(f"<{n}I", "FRD1 dims")
    total = math.prod(dims)
    if n == 0 or total == 0 or total > 1 << 31:
        raise FormatError(f"invalid FRD1 dims {dims}", dims_at)
    (count,) = reader.unpack("<I", "FRD1 count")
    bitmap = reader.take((total + 7) // 8, "mask bitmap")
    mask = np.unpackbits(np.frombuffer(bitmap, dtype=np.uint8), bitorder="little")[:total].astype(bool)
    k = int(mask.sum())
    coeffs, labels = [], []
    for _ in range(count):
        (y,) = reader.unpack("<I", "label")
        payload = reader.take(4 * m * k, "coefficients")
        labels.append(y)
        coeffs.append(np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(m, k))
    if reader.pos != len(buf):
        raise FormatError("trailing bytes after FRD1 payload", reader.pos)
    return FredParam(mask.reshape(dims), coeffs, labels)


def save_fred(p: FredParam, path: str | os.PathLike):
    Path(path).write_bytes(fred_to_bytes(p))


def load_fred(path: str | os.PathLike) -> FredParam:
    return fred_from_bytes(Path(path).read_bytes())
