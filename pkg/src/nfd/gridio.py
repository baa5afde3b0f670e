"""Binary containers for grids and labeled datasets, plus CIFAR-10 / IDX loaders.

Layouts (all little-endian unless noted)::

    GRD1  magic "GRD1" | u8 n | u8 reserved | u16 m | n x u32 dims | f32 payload
    LDS1  magic "LDS1" | u32 C | u32 count | count x (u32 label | GRD1 block)

The payload is channel-major, row-major within each channel.
"""

from __future__ import annotations

import math
import os
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgument
from .grid import GridTensor, LabeledDataset

GRID_MAGIC = b"GRD1"
DATASET_MAGIC = b"LDS1"
MAX_SCALARS = 1 << 31

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)


class Reader:
    """Cursor over a byte buffer that reports offsets on failure."""

    def __init__(self, buf: bytes, offset: int = 0):
        self.buf = memoryview(buf)
        self.pos = offset

    def take(self, count: int, what: str) -> bytes:
        if self.pos + count > len(self.buf):
            raise FormatError(f"truncated {what}: need {count} bytes, {len(self.buf) - self.pos} left", self.pos)
        out = self.buf[self.pos:self.pos + count].tobytes()
        self.pos += count
        return out

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))

    def expect_magic(self, magic: bytes):
        start = self.pos
        got = self.take(len(magic), "magic")
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}", start)


def pack_grid(g: GridTensor) -> bytes:
    if g.rank > 255 or g.channels > 0xFFFF:
        raise InvalidArgument("grid rank or channel count exceeds container limits")
    if any(n > 0xFFFFFFFF for n in g.shape):
        raise InvalidArgument("grid dimension exceeds u32")
    header = GRID_MAGIC + struct.pack("<BBH", g.rank, 0, g.channels)
    header += struct.pack(f"<{g.rank}I", *g.shape)
    return header + g.data.astype("<f4").tobytes()


def unpack_grid(reader: Reader) -> GridTensor:
    reader.expect_magic(GRID_MAGIC)
    n, _reserved, m = reader.unpack("<BBH", "grid header")
    if n == 0 or m == 0:
        raise FormatError("grid rank and channel count must be positive", reader.pos - 4)
    dims_at = reader.pos
    dims = reader.unpack(f"<{n}I", "grid dims")
    if any(d == 0 for d in dims):
        raise FormatError("zero grid dimension", dims_at)
    count = m * math.prod(dims)
    if count > MAX_SCALARS:
        raise FormatError(f"dim overflow: {count} scalars", dims_at)
    payload = reader.take(4 * count, "grid payload")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return GridTensor(values.reshape((m, *dims)))


def grid_to_bytes(g: GridTensor) -> bytes:
    return pack_grid(g)


def grid_from_bytes(buf: bytes) -> GridTensor:
    reader = Reader(buf)
    g = unpack_grid(reader)
    if reader.pos != len(buf):
        raise FormatError("trailing bytes after grid", reader.pos)
    return g


def write_grid(g: GridTensor, path: str | os.PathLike):
    Path(path).write_bytes(grid_to_bytes(g))


def read_grid(path: str | os.PathLike) -> GridTensor:
    return grid_from_bytes(Path(path).read_bytes())


def dataset_to_bytes(ds: LabeledDataset) -> bytes:
    parts = [DATASET_MAGIC, struct.pack("<II", ds.class_count, len(ds))]
    for g, y in zip(ds.instances, ds.labels):
        parts.append(struct.pack("<I", y))
        parts.append(pack_grid(g))
    return b"".join(parts)


def dataset_from_bytes(buf: bytes) -> LabeledDataset:
    reader = Reader(buf)
    reader.expect_magic(DATASET_MAGIC)
    class_count, count = reader.unpack("<II", "dataset header")
    instances, labels = [], []
    for _ in range(count):
        label_at = reader.pos
        (label,) = reader.unpack("<I", "label")
        if label >= class_count:
            raise FormatError(f"label {label} >= class count {class_count}", label_at)
        labels.append(label)
        instances.append(unpack_grid(reader))
    if reader.pos != len(buf):
        raise FormatError("trailing bytes after dataset", reader.pos)
    try:
        return LabeledDataset(instances, labels, class_count)
    except InvalidArgument as exc:
        raise FormatError(str(exc)) from exc


def write_dataset(ds: LabeledDataset, path: str | os.PathLike):
    Path(path).write_bytes(dataset_to_bytes(ds))


def read_dataset(path: str | os.PathLike) -> LabeledDataset:
    return dataset_from_bytes(Path(path).read_bytes())


# -- external formats ---------------------------------------------------------

def parse_cifar10(buf: bytes) -> LabeledDataset:
    """CIFAR-10 binary batch: 1 label byte + 3072 channel-major pixel bytes per record."""
    if len(buf) % CIFAR_RECORD:
        whole = len(buf) // CIFAR_RECORD * CIFAR_RECORD
        raise FormatError(f"truncated CIFAR-10 record ({len(buf)} bytes is not a multiple of {CIFAR_RECORD})", whole)
    records = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(int)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        raise FormatError(f"CIFAR-10 label {labels[bad[0]]} out of range", int(bad[0]) * CIFAR_RECORD)
    pixels = records[:, 1:].reshape(-1, *CIFAR_SHAPE) / 255.0
    return LabeledDataset([GridTensor(p) for p in pixels], labels.tolist(), 10)


IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def parse_idx(buf: bytes) -> np.ndarray:
    """Decode an IDX file into an array with its declared (big-endian) dims."""
    reader = Reader(buf)
    zero0, zero1, type_code, ndim = reader.unpack(">BBBB", "IDX magic")
    if zero0 or zero1 or type_code not in IDX_TYPES:
        raise FormatError(f"bad IDX magic 0x{zero0:02x}{zero1:02x}{type_code:02x}{ndim:02x}", 0)
    dims = reader.unpack(f">{ndim}I", "IDX dims")
    dtype = np.dtype(IDX_TYPES[type_code])
    count = math.prod(dims)
    if count * dtype.itemsize > len(buf):
        raise FormatError(f"dim overflow: {dims} exceeds file size", 4)
    payload = reader.take(count * dtype.itemsize, "IDX payload")
    return np.frombuffer(payload, dtype=dtype).reshape(dims)


def load_external(path: str | os.PathLike, format: str, labels_path: str | os.PathLike | None = None,
                  class_count: int | None = None) -> LabeledDataset:
    """Load a dataset in a public format (``cifar10`` or ``idx``)."""
    buf = Path(path).read_bytes()
    if format == "cifar10":
        return parse_cifar10(buf)
    if format != "idx":
        raise InvalidArgument(f"unknown external format {format!r}")
    images = parse_idx(buf)
    if images.ndim < 2:
        raise FormatError("IDX image file needs a leading count axis and >= 1 spatial axis", 3)
    if images.dtype == np.uint8:
        images = images / 255.0
    if labels_path is None:
        labels = np.zeros(images.shape[0], dtype=int)
    else:
        labels = parse_idx(Path(labels_path).read_bytes()).astype(int).ravel()
        if labels.size != images.shape[0]:
            raise FormatError(f"{labels.size} labels for {images.shape[0]} images")
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels.size else 1
    return LabeledDataset([GridTensor(img[None]) for img in images], labels.tolist(), class_count)
