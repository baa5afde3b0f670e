"""Distilling a labeled dataset into sine fields by distribution or gradient matching.

Each outer iteration decodes the synthetic fields on their native lattice,
compares them with a fresh real minibatch through a randomly initialized
network, and takes one Adam step on every field's parameters.  Labels are
fixed one-hot targets throughout.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .errors import InvalidArgument
from .field import NeuralField, SyntheticDataset, decode_many, forward_graph
from .grid import LabeledDataset, make_coordinate_set
from .nets import (ConvNetConfig, accuracy, embed, init_params, param_grads, param_grads_graph,
                   train_classifier)

LOSS_KINDS = ("dm", "dc")


# -- paired augmentation --------------------------------------------------------

@dataclass(frozen=True)
class AugFlags:
    flip: bool = False
    crop: bool = False
    cutout: bool = False
    crop_pad: int = 2
    cutout_size: int = 4

    @property
    def any(self) -> bool:
        return self.flip or self.crop or self.cutout


@dataclass(frozen=True)
class AugParams:
    """One transform, applied identically to every image it touches."""

    flip: bool = False
    shift: tuple[int, int] = (0, 0)
    cutout: tuple[int, int, int] | None = None   # (top, left, size)


def draw_aug_params(flags: AugFlags, rng: np.random.Generator, size: Sequence[int]) -> AugParams:
    """Draw a transform; the number of RNG calls depends only on ``flags``."""
    h, w = size
    flip = bool(rng.integers(2)) if flags.flip else False
    shift = tuple(int(v) for v in rng.integers(-flags.crop_pad, flags.crop_pad + 1, size=2)) if flags.crop else (0, 0)
    cut = None
    if flags.cutout:
        s = min(flags.cutout_size, h, w)
        cut = (int(rng.integers(0, h - s + 1)), int(rng.integers(0, w - s + 1)), s)
    return AugParams(flip, shift, cut)


def apply_aug(x, params: AugParams):
    """Apply ``params`` to a ``(B, C, H, W)`` tensor or array; arrays come back as arrays."""
    as_array = not isinstance(x, ag.Tensor)
    t = ag.const(x) if as_array else x
    if params.flip:
        t = ag.flip(t, 3)
    if params.shift != (0, 0):
        t = ag.shift2d(t, *params.shift)
    if params.cutout is not None:
        top, left, s = params.cutout
        mask = np.ones(t.shape)
        mask[..., top:top + s, left:left + s] = 0.0
        t = ag.mul_const(t, mask)
    return t.value if as_array else t


def augment(batch: np.ndarray, flags: AugFlags, seed: int | np.random.Generator) -> np.ndarray:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return apply_aug(np.asarray(batch, dtype=np.float64), draw_aug_params(flags, rng, batch.shape[2:]))


# -- matching losses --------------------------------------------------------------

def _class_mean(t: ag.Tensor) -> ag.Tensor:
    return ag.scale(ag.sum(t, axis=0), 1.0 / t.shape[0])


def loss_dm(real: Sequence[np.ndarray], synth: Sequence[ag.Tensor],
            embed_fn: Callable[[ag.Tensor], ag.Tensor]) -> ag.Tensor:
    """Sum over classes of the squared distance between mean real and mean synthetic embeddings."""
    if len(real) != len(synth):
        raise InvalidArgument("real and synthetic batches must cover the same classes")
    total = None
    for xr, xs in zip(real, synth):
        if len(xr) == 0 or xs.shape[0] == 0:
            raise InvalidArgument("empty class batch")
        emb = embed_fn(ag.const(xr)).value
        mu_real = emb.sum(axis=0) * (1.0 / emb.shape[0])   # same arithmetic as the synthetic side
        diff = ag.subtract(_class_mean(embed_fn(xs)), ag.const(mu_real))
        term = ag.sum(ag.square(diff))
        total = term if total is None else ag.add(total, term)
    return total


def _rows(a):
    """Group a gradient by output row: weights become (out, -1), biases one row."""
    if isinstance(a, ag.Tensor):
        return ag.reshape(a, (a.shape[0], -1)) if a.value.ndim > 1 else ag.reshape(a, (1, -1))
    a = np.asarray(a)
    return a.reshape(a.shape[0], -1) if a.ndim > 1 else a.reshape(1, -1)


def gradient_distance(real_grads: dict[str, np.ndarray], synth_grads: dict[str, ag.Tensor]) -> ag.Tensor:
    """Sum over parameter tensors of the row-averaged ``1 - cos`` between two gradient sets.

    Each term lies in [0, 2]; rows where either gradient vanishes contribute 0.
    """
    total = None
    for name, g_syn in synth_grads.items():
        syn = g_syn if isinstance(g_syn, ag.Tensor) else ag.const(g_syn)
        cos = ag.cosine_similarity(ag.const(_rows(real_grads[name])), _rows(syn))
        term = ag.subtract(ag.const(1.0), ag.mean(cos))
        total = term if total is None else ag.add(total, term)
    return total


def loss_dc(real: Sequence[np.ndarray], synth: Sequence[ag.Tensor], labels: Sequence[int],
            net: ConvNetConfig, params: dict[str, np.ndarray]) -> ag.Tensor:
    """Gradient matching summed over classes; differentiable in the synthetic batches."""
    if not (len(real) == len(synth) == len(labels)):
        raise InvalidArgument("real, synthetic and label lists must align")
    total = None
    for xr, xs, c in zip(real, synth, labels):
        if len(xr) == 0 or xs.shape[0] == 0:
            raise InvalidArgument("empty class batch")
        _, g_real = param_grads(net, xr, np.full(len(xr), c), params)
        g_syn = param_grads_graph(net, xs, np.full(xs.shape[0], c), params)
        term = gradient_distance(g_real, g_syn)
        total = term if total is None else ag.add(total, term)
    return total


# -- distillation loop --------------------------------------------------------------

@dataclass
class DistillConfig:
    loss: str = "dm"
    iterations: int = 500
    real_batch: int = 32
    synth_batch: int | None = None
    field_lr: float = 1e-3
    seed: int = 0
    augment: AugFlags = field(default_factory=AugFlags)
    net: ConvNetConfig | None = None
    dc_loops: int = 2
    dc_inner_steps: int = 5
    dc_lr: float = 0.01

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise InvalidArgument(f"loss must be one of {LOSS_KINDS}")
        if self.iterations < 0 or self.real_batch < 1 or (self.synth_batch is not None and self.synth_batch < 1):
            raise InvalidArgument("iteration and batch counts must be positive")


def default_net(real: LabeledDataset, loss: str) -> ConvNetConfig:
    h, w = real.shape
    depth = 3 if min(h, w) >= 16 else 2
    return ConvNetConfig(real.channels, (h, w), real.class_count, depth=depth, width=32,
                         norm="instance" if loss == "dm" else "none")


def _pick(rng: np.random.Generator, pool: Sequence[int], count: int) -> np.ndarray:
    pool = np.asarray(pool)
    return rng.choice(pool, size=min(count, len(pool)), replace=False)


def _decode_graph(fields: Sequence[NeuralField], leaves: Sequence[dict], coords) -> ag.Tensor:
    outs = []
    for f, p in zip(fields, leaves):
        out = forward_graph(f.config, p, coords)
        outs.append(ag.reshape(out, (1, *out.shape)))
    return outs[0] if len(outs) == 1 else ag.concat(outs, axis=0)


def matching_loss(real: LabeledDataset, real_arr: np.ndarray, synth: SyntheticDataset, values: list[dict],
                  cfg: DistillConfig, net: ConvNetConfig, rng: np.random.Generator, coords,
                  net_params: dict[str, np.ndarray] | None = None):
    """Build one step's loss graph; returns ``(loss, leaves, active field indices)``."""
    classes = sorted(set(synth.labels))
    by_class = {c: [j for j, y in enumerate(synth.labels) if y == c] for c in classes}
    if cfg.synth_batch is not None:
        by_class = {c: sorted(_pick(rng, js, cfg.synth_batch).tolist()) for c, js in by_class.items()}
    if net_params is None:
        net_params = init_params(net, rng)
    consts = {k: ag.const(v) for k, v in net_params.items()}
    leaves: dict[int, dict[str, ag.Tensor]] = {}
    reals, synths = [], []
    for c in classes:
        xr = real_arr[_pick(rng, real.indices_of(c), cfg.real_batch)]
        for j in by_class[c]:
            leaves[j] = {k: ag.param(v) for k, v in values[j].items()}
        xs = _decode_graph([synth.fields[j] for j in by_class[c]], [leaves[j] for j in by_class[c]], coords)
        aug = draw_aug_params(cfg.augment, rng, real.shape)
        reals.append(apply_aug(xr, aug))
        synths.append(apply_aug(xs, aug))
    if cfg.loss == "dm":
        loss = loss_dm(reals, synths, lambda t: embed(net, t, consts))
    else:
        loss = loss_dc(reals, synths, classes, net, net_params)
    return loss, leaves


def distill(real: LabeledDataset, init: SyntheticDataset, cfg: DistillConfig,
            on_step: Callable[[int, float, float], None] | None = None) -> SyntheticDataset:
    """Optimize every field of ``init`` against ``real``; ``on_step(iteration, loss, wall_ms)`` logs progress."""
    if tuple(init.decode_dims) != tuple(real.shape) or init.channels != real.channels:
        raise InvalidArgument("synthetic decode layout must match the real instances")
    net = cfg.net or default_net(real, cfg.loss)
    real_arr = real.array()
    coords = make_coordinate_set(init.decode_dims)
    values = [f.params() for f in init.fields]
    states = [ag.AdamState() for _ in init.fields]
    current = init
    for it in range(cfg.iterations):
        start = time.perf_counter()
        rng = np.random.default_rng([cfg.seed, it])
        net_params = init_params(net, rng)
        loops = cfg.dc_loops if cfg.loss == "dc" else 1
        for loop in range(loops):
            loss, leaves = matching_loss(real, real_arr, current, values, cfg, net, rng, coords, net_params)
            ag.backward(loss)
            for j, lv in leaves.items():
                grads = {k: t.grad for k, t in lv.items()}
                values[j], states[j] = ag.adam_step(values[j], grads, states[j], cfg.field_lr)
            current = _rebuild(current, values)
            if cfg.loss == "dc" and loop < loops - 1:
                net_params = _train_on_synthetic(net, current, net_params, cfg, rng)
        if on_step is not None:
            on_step(it, float(loss.value), 1000.0 * (time.perf_counter() - start))
    return _rebuild(init, values)


def _rebuild(template: SyntheticDataset, values: list[dict]) -> SyntheticDataset:
    fields = [NeuralField.from_params(f.config, {k: v.copy() for k, v in vals.items()})
              for f, vals in zip(template.fields, values)]
    return SyntheticDataset(fields, list(template.labels), template.decode_dims)


def _train_on_synthetic(net: ConvNetConfig, synth: SyntheticDataset, params: dict[str, np.ndarray],
                        cfg: DistillConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    x = decode_many(synth.fields, synth.decode_dims)
    y = np.asarray(synth.labels)
    for _ in range(cfg.dc_inner_steps):
        xb = augment(x, cfg.augment, rng) if cfg.augment.any else x
        _, grads = param_grads(net, xb, y, params)
        params = {k: v - cfg.dc_lr * grads[k] for k, v in params.items()}
    return params


def matching_value(real: LabeledDataset, synth: SyntheticDataset, cfg: DistillConfig, seed: int) -> float:
    """Loss of ``synth`` under one seeded draw of network and real batch (no update)."""
    net = cfg.net or default_net(real, cfg.loss)
    rng = np.random.default_rng(seed)
    coords = make_coordinate_set(synth.decode_dims)
    values = [f.params() for f in synth.fields]
    loss, _ = matching_loss(real, real.array(), synth, values, replace(cfg, synth_batch=None), net, rng, coords)
    return float(loss.value)


# -- evaluation protocol -------------------------------------------------------------

@dataclass
class TrainConfig:
    net: ConvNetConfig | None = None
    epochs: int = 300
    lr: float = 1e-3
    batch: int = 256
    augment: AugFlags = field(default_factory=AugFlags)


def synthetic_arrays(synth) -> tuple[np.ndarray, np.ndarray]:
    """Decoded instances and labels of a field dataset, or the arrays of a labeled dataset."""
    if isinstance(synth, SyntheticDataset):
        return decode_many(synth.fields, synth.decode_dims), np.asarray(synth.labels)
    if isinstance(synth, LabeledDataset):
        return synth.array(), np.asarray(synth.labels)
    x, y = synth
    return np.asarray(x, dtype=np.float64), np.asarray(y)


def evaluate(synth, test: LabeledDataset, train_cfg: TrainConfig | None = None, repeats: int = 5,
             seed: int = 0) -> tuple[float, float, list[float]]:
    """Train ``repeats`` fresh classifiers on the decoded synthetic set; mean/std test accuracy."""
    train_cfg = train_cfg or TrainConfig()
    x, y = synthetic_arrays(synth)
    net = train_cfg.net or ConvNetConfig(test.channels, test.shape, test.class_count,
                                         depth=3 if min(test.shape) >= 16 else 2)
    if x.shape[1:] != (net.channels, *net.size):
        raise InvalidArgument(f"synthetic instances {x.shape[1:]} do not match classifier input")
    test_x, test_y = test.array(), np.asarray(test.labels)
    aug = (lambda xb, r: augment(xb, train_cfg.augment, r)) if train_cfg.augment.any else None
    accs = []
    for r in range(repeats):
        rng = np.random.default_rng([seed, r])
        params = train_classifier(net, x, y, rng, epochs=train_cfg.epochs, lr=train_cfg.lr,
                                  batch=train_cfg.batch, augment_fn=aug)
        accs.append(accuracy(net, params, test_x, test_y))
    return float(np.mean(accs)), float(np.std(accs)), accs
