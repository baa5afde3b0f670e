"""Sine-activated coordinate networks: configuration, budget arithmetic, init, evaluation, bundles.

A field with hidden widths ``d_0 .. d_{L-1}`` maps ``n`` coordinates to ``m`` quantities::

    h_0 = sin(omega0 * (W_0 c + b_0))
    h_l = sin(omega0 * (W_l h_{l-1} + b_l))      1 <= l <= L-1
    F(c) = W_L h_{L-1} + b_L

Its storage cost never depends on the resolution it is decoded at.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .errors import BudgetTooSmall, FormatError, InvalidArgument
from .grid import CoordinateSet, GridTensor, make_coordinate_set
from .gridio import Reader

BUNDLE_MAGIC = b"NFB1"
DEFAULT_OMEGA0 = 30.0


@dataclass(frozen=True)
class FieldConfig:
    input_dim: int
    output_dim: int
    widths: tuple[int, ...]
    omega0: float = DEFAULT_OMEGA0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.input_dim < 1 or self.output_dim < 1:
            raise InvalidArgument("input_dim and output_dim must be >= 1")
        if not self.widths or min(self.widths) < 1:
            raise InvalidArgument("need at least one hidden layer, every width >= 1")
        if not self.omega0 > 0:
            raise InvalidArgument("omega0 must be positive")

    @classmethod
    def uniform(cls, n: int, m: int, layers: int, width: int, omega0: float = DEFAULT_OMEGA0) -> "FieldConfig":
        return cls(n, m, (width,) * layers, omega0)

    @property
    def hidden_layers(self) -> int:
        return len(self.widths)

    def layer_shapes(self) -> list[tuple[tuple[int, int], tuple[int]]]:
        """(weight shape, bias shape) for layers 0..L."""
        fan_in = [self.input_dim, *self.widths]
        fan_out = [*self.widths, self.output_dim]
        return [((o, i), (o,)) for i, o in zip(fan_in, fan_out)]


def param_count(cfg: FieldConfig) -> int:
    """Scalars stored by one field: ``d0(n+1) + sum_l d_l(d_{l-1}+1) + m(d_{L-1}+1)``."""
    d = cfg.widths
    total = d[0] * (cfg.input_dim + 1)
    total += sum(d[l] * (d[l - 1] + 1) for l in range(1, len(d)))
    total += cfg.output_dim * (d[-1] + 1)
    return total


def plan_budget(total_budget: int, cfg: FieldConfig) -> int:
    """Largest number of fields whose combined storage fits in ``total_budget``."""
    b = param_count(cfg)
    if total_budget < b:
        raise BudgetTooSmall(f"budget {total_budget} cannot hold one field of {b} parameters")
    return total_budget // b


def max_uniform_width(n: int, m: int, layers: int, budget: int) -> int:
    """Largest uniform width whose field fits in ``budget``; 0 when even width 1 does not."""
    best = 0
    d = 1
    while param_count(FieldConfig.uniform(n, m, layers, d)) <= budget:
        best = d
        d += 1
    return best


@dataclass(eq=False)
class NeuralField:
    config: FieldConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        shapes = self.config.layer_shapes()
        if len(self.weights) != len(shapes) or len(self.biases) != len(shapes):
            raise InvalidArgument(f"expected {len(shapes)} layers")
        self.weights = [np.array(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.array(b, dtype=np.float64) for b in self.biases]
        for l, ((ws, bs), w, b) in enumerate(zip(shapes, self.weights, self.biases)):
            if w.shape != ws or b.shape != bs:
                raise InvalidArgument(f"layer {l}: got W{w.shape} b{b.shape}, expected W{ws} b{bs}")

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{l}"] = w
            out[f"b{l}"] = b
        return out

    @classmethod
    def from_params(cls, cfg: FieldConfig, params: dict[str, np.ndarray]) -> "NeuralField":
        layers = cfg.hidden_layers + 1
        return cls(cfg, [params[f"W{l}"] for l in range(layers)], [params[f"b{l}"] for l in range(layers)])

    def flat(self) -> np.ndarray:
        """Parameters in storage order: W then b for each layer."""
        return np.concatenate([a.ravel() for w, b in zip(self.weights, self.biases) for a in (w, b)])

    @classmethod
    def from_flat(cls, cfg: FieldConfig, flat: np.ndarray) -> "NeuralField":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != param_count(cfg):
            raise InvalidArgument(f"{flat.size} values for a {param_count(cfg)}-parameter field")
        weights, biases, pos = [], [], 0
        for ws, bs in cfg.layer_shapes():
            weights.append(flat[pos:pos + math.prod(ws)].reshape(ws))
            pos += math.prod(ws)
            biases.append(flat[pos:pos + bs[0]].copy())
            pos += bs[0]
        return cls(cfg, weights, biases)

    def copy(self) -> "NeuralField":
        return NeuralField(self.config, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def __eq__(self, other):
        if not isinstance(other, NeuralField):
            return NotImplemented
        return self.config == other.config and np.array_equal(self.flat(), other.flat())


@dataclass(eq=False)
class SyntheticDataset:
    fields: list[NeuralField]
    labels: list[int]
    decode_dims: tuple[int, ...]

    def __post_init__(self):
        self.labels = [int(y) for y in self.labels]
        self.decode_dims = tuple(int(d) for d in self.decode_dims)
        if len(self.fields) != len(self.labels):
            raise InvalidArgument("fields and labels differ in length")
        if self.fields:
            cfg = self.fields[0].config
            if any(f.config != cfg for f in self.fields):
                raise InvalidArgument("all fields must share one configuration")
            if len(self.decode_dims) != cfg.input_dim:
                raise InvalidArgument("decode_dims rank must equal the field input dimension")

    def __len__(self):
        return len(self.fields)

    @property
    def config(self) -> FieldConfig:
        return self.fields[0].config

    @property
    def channels(self) -> int:
        return self.config.output_dim

    def budget(self) -> int:
        return len(self.fields) * param_count(self.config) if self.fields else 0

    def __eq__(self, other):
        if not isinstance(other, SyntheticDataset):
            return NotImplemented
        return (self.labels == other.labels and self.decode_dims == other.decode_dims
                and len(self.fields) == len(other.fields)
                and all(a == b for a, b in zip(self.fields, other.fields)))


def init_siren(cfg: FieldConfig, seed: int) -> NeuralField:
    """SIREN initialization; biases start at zero."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for l, (ws, bs) in enumerate(cfg.layer_shapes()):
        bound = 1.0 / cfg.input_dim if l == 0 else math.sqrt(6.0 / ws[1]) / cfg.omega0
        weights.append(rng.uniform(-bound, bound, size=ws))
        biases.append(np.zeros(bs))
    return NeuralField(cfg, weights, biases)


def _check_coords(cfg: FieldConfig, coords: CoordinateSet):
    if coords.n != cfg.input_dim:
        raise InvalidArgument(f"coordinate dimension {coords.n} != field input dimension {cfg.input_dim}")


def evaluate_points(f: NeuralField, points: np.ndarray) -> np.ndarray:
    """Field values at ``(P, n)`` points, returned as ``(P, m)``."""
    w0 = f.config.omega0
    h = np.asarray(points, dtype=np.float64)
    for w, b in zip(f.weights[:-1], f.biases[:-1]):
        h = np.sin(w0 * (h @ w.T + b))
    return h @ f.weights[-1].T + f.biases[-1]


def forward(f: NeuralField, coords: CoordinateSet) -> GridTensor:
    _check_coords(f.config, coords)
    out = evaluate_points(f, coords.points)
    return GridTensor(out.T.reshape((f.config.output_dim, *coords.dims)))


def forward_graph(cfg: FieldConfig, params: dict[str, ag.Tensor], coords: CoordinateSet) -> ag.Tensor:
    """Differentiable full-batch decode; result has shape ``(m, N1, ..., Nn)``."""
    _check_coords(cfg, coords)
    h = ag.const(coords.points)
    layers = cfg.hidden_layers
    for l in range(layers):
        z = ag.add_bias(ag.matmul(h, ag.transpose(params[f"W{l}"])), params[f"b{l}"])
        h = ag.sin(ag.scale(z, cfg.omega0))
    out = ag.add_bias(ag.matmul(h, ag.transpose(params[f"W{layers}"])), params[f"b{layers}"])
    return ag.reshape(ag.transpose(out), (cfg.output_dim, *coords.dims))


def decode_many(fields: Sequence[NeuralField], dims: Sequence[int]) -> np.ndarray:
    """Decode a list of fields to a stacked ``(count, m, *dims)`` array."""
    coords = make_coordinate_set(dims)
    return np.stack([forward(f, coords).data for f in fields])


# -- NFB1 bundles ---------------------------------------------------------------

def _omega_code(omega0: float) -> int:
    code = omega0 * 256
    if code != int(code) or not 0 < code <= 0xFFFF:
        raise InvalidArgument(f"omega0={omega0} is not representable as u16 fixed point /256")
    return int(code)


def bundle_to_bytes(ds: SyntheticDataset) -> bytes:
    """Serialize as NFB1; the decode dims follow the width table (n x u32)."""
    if not ds.fields:
        raise InvalidArgument("cannot serialize an empty synthetic dataset")
    cfg = ds.config
    if cfg.hidden_layers > 255 or cfg.input_dim > 255 or cfg.output_dim > 0xFFFF or max(cfg.widths) > 0xFFFF:
        raise InvalidArgument("configuration exceeds bundle header limits")
    parts = [BUNDLE_MAGIC,
             struct.pack("<IBBHH", len(ds.fields), cfg.input_dim, cfg.hidden_layers, cfg.output_dim,
                         _omega_code(cfg.omega0)),
             struct.pack(f"<{cfg.hidden_layers}H", *cfg.widths),
             struct.pack(f"<{cfg.input_dim}I", *ds.decode_dims)]
    for f, y in zip(ds.fields, ds.labels):
        parts.append(struct.pack("<I", y))
        parts.append(f.flat().astype("<f4").tobytes())
    return b"".join(parts)


def bundle_from_bytes(buf: bytes) -> SyntheticDataset:
    reader = Reader(buf)
    reader.expect_magic(BUNDLE_MAGIC)
    head_at = reader.pos
    count, n, layers, m, omega_code = reader.unpack("<IBBHH", "bundle header")
    if n == 0 or layers == 0 or m == 0 or omega_code == 0:
        raise FormatError("bundle header has a zero field", head_at)
    widths_at = reader.pos
    widths = reader.unpack(f"<{layers}H", "width table")
    if min(widths) == 0:
        raise FormatError("zero layer width", widths_at)
    dims = reader.unpack(f"<{n}I", "decode dims")
    cfg = FieldConfig(n, m, widths, omega_code / 256.0)
    size = param_count(cfg)
    fields, labels = [], []
    for _ in range(count):
        (label,) = reader.unpack("<I", "field label")
        payload = reader.take(4 * size, "field payload")
        labels.append(label)
        fields.append(NeuralField.from_flat(cfg, np.frombuffer(payload, dtype="<f4").astype(np.float64)))
    if reader.pos != len(buf):
        raise FormatError("trailing bytes after bundle", reader.pos)
    return SyntheticDataset(fields, labels, dims)


def save_bundle(ds: SyntheticDataset, path: str | os.PathLike):
    Path(path).write_bytes(bundle_to_bytes(ds))


def load_bundle(path: str | os.PathLike) -> SyntheticDataset:
    return bundle_from_bytes(Path(path).read_bytes())


def bundle_header_size(cfg: FieldConfig) -> int:
    return 4 + struct.calcsize("<IBBHH") + 2 * cfg.hidden_layers + 4 * cfg.input_dim
