"""Fit fields to grids by full-batch Adam on the summed squared error, and decode them."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .errors import InvalidArgument
from .field import FieldConfig, NeuralField, SyntheticDataset, forward, forward_graph, init_siren
from .grid import GridTensor, LabeledDataset, make_coordinate_set

WARMUP_ITERS = 5000
WARMUP_LR = 5e-4


@dataclass
class FitReport:
    iterations: int
    objective: float
    wall_time: float
    seed: int
    history: list[float] | None = None


def field_objective(cfg: FieldConfig, params: dict[str, ag.Tensor], coords, target: np.ndarray) -> ag.Tensor:
    """Sum over lattice points of the squared error between decode and target."""
    out = forward_graph(cfg, params, coords)
    return ag.sum(ag.square(ag.subtract(out, ag.const(target))))


def siren_value_grad(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], points: np.ndarray,
                     targets: np.ndarray, omega0: float):
    """Summed squared error and its exact gradient for a stack of fields sharing one shape.

    ``weights[l]`` has shape ``(R, out, in)``, ``points`` is ``(P, n)`` and
    ``targets`` is ``(R, P, m)``.  Returns ``(loss (R,), dW list, db list)``.
    This is the hand-derived backward pass of :func:`field_objective`.
    """
    acts = [np.broadcast_to(points, (weights[0].shape[0], *points.shape))]
    pre = []
    for w, b in zip(weights[:-1], biases[:-1]):
        z = omega0 * (acts[-1] @ w.transpose(0, 2, 1) + b[:, None, :])
        pre.append(z)
        acts.append(np.sin(z))
    out = acts[-1] @ weights[-1].transpose(0, 2, 1) + biases[-1][:, None, :]
    r = out - targets
    loss = np.einsum("rpm,rpm->r", r, r)
    g = 2.0 * r
    dw = [None] * len(weights)
    db = [None] * len(weights)
    dw[-1] = g.transpose(0, 2, 1) @ acts[-1]
    db[-1] = g.sum(axis=1)
    ga = g @ weights[-1]
    for l in range(len(weights) - 2, -1, -1):
        gz = ga * np.cos(pre[l]) * omega0
        dw[l] = gz.transpose(0, 2, 1) @ acts[l]
        db[l] = gz.sum(axis=1)
        if l:
            ga = gz @ weights[l]
    return loss, dw, db


def fit_fields(targets: np.ndarray, cfg: FieldConfig, seeds: Sequence[int], iters: int = WARMUP_ITERS,
               lr: float = WARMUP_LR, tol: float | None = None, inits: Sequence[NeuralField] | None = None,
               record: bool = False) -> tuple[list[NeuralField], list[FitReport]]:
    """Fit ``R`` fields of one configuration at once; ``targets`` is ``(R, m, *dims)``.

    The stack only vectorizes independent Adam runs; no state is shared
    between fields.  A field whose objective
    drops below ``tol`` is frozen from then on.
    """
    targets = np.asarray(targets, dtype=np.float64)
    seeds = [int(s) for s in seeds]
    count = len(seeds)
    if targets.ndim != cfg.input_dim + 2 or targets.shape[0] != count:
        raise InvalidArgument(f"targets {targets.shape} do not match {count} fields of rank {cfg.input_dim}")
    if targets.shape[1] != cfg.output_dim:
        raise InvalidArgument(f"field maps R^{cfg.input_dim}->R^{cfg.output_dim}, "
                              f"targets have {targets.shape[1]} channels")
    if iters < 0:
        raise InvalidArgument("iters must be >= 0")
    start = time.perf_counter()
    coords = make_coordinate_set(targets.shape[2:])
    flat_t = targets.reshape(count, cfg.output_dim, -1).transpose(0, 2, 1)
    fields = list(inits) if inits is not None else [init_siren(cfg, s) for s in seeds]
    layers = cfg.hidden_layers + 1
    params = [np.stack([f.weights[l] for f in fields]) for l in range(layers)]
    params += [np.stack([f.biases[l] for f in fields]) for l in range(layers)]
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    active = np.ones(count, dtype=bool)
    done = np.zeros(count, dtype=int)
    history = [[] for _ in range(count)] if record else None
    for t in range(1, iters + 1):
        loss, dw, db = siren_value_grad(params[:layers], params[layers:], coords.points, flat_t, cfg.omega0)
        if history is not None:
            for r in range(count):
                if active[r]:
                    history[r].append(float(loss[r]))
        if tol is not None:
            active &= loss >= tol
            if not active.any():
                break
        done += active
        for i, g in enumerate(dw + db):
            m1[i] = b1 * m1[i] + (1 - b1) * g
            m2[i] = b2 * m2[i] + (1 - b2) * g * g
            step = lr * (m1[i] / (1 - b1 ** t)) / (np.sqrt(m2[i] / (1 - b2 ** t)) + eps)
            if active.all():
                params[i] = params[i] - step
            else:
                params[i] = params[i] - step * active.reshape((-1,) + (1,) * (step.ndim - 1))
    elapsed = time.perf_counter() - start
    out = [NeuralField(cfg, [params[l][r] for l in range(layers)], [params[layers + l][r] for l in range(layers)])
           for r in range(count)]
    final, _, _ = siren_value_grad(params[:layers], params[layers:], coords.points, flat_t, cfg.omega0)
    reports = [FitReport(int(done[r]), float(final[r]), elapsed, seeds[r], history[r] if record else None)
               for r in range(count)]
    return out, reports


def fit_field(target: GridTensor, cfg: FieldConfig, iters: int = WARMUP_ITERS, lr: float = WARMUP_LR,
              seed: int = 0, tol: float | None = None, init: NeuralField | None = None,
              record: bool = False, engine: str = "fused") -> tuple[NeuralField, FitReport]:
    """Encode ``target`` into a field of configuration ``cfg``.

    ``tol`` enables early stopping once the objective drops below it;
    ``record`` keeps the per-iteration objective in the report.  The
    ``"graph"`` engine runs the same optimization through the autograd tape.
    """
    if cfg.input_dim != target.rank or cfg.output_dim != target.channels:
        raise InvalidArgument(f"field maps R^{cfg.input_dim}->R^{cfg.output_dim}, "
                              f"target has rank {target.rank} and {target.channels} channels")
    if engine == "fused":
        fields, reports = fit_fields(target.data[None], cfg, [seed], iters, lr, tol,
                                     None if init is None else [init], record)
        return fields[0], reports[0]
    if engine != "graph":
        raise InvalidArgument(f"unknown engine {engine!r}")
    start = time.perf_counter()
    field = init.copy() if init is not None else init_siren(cfg, seed)
    coords = make_coordinate_set(target.shape)
    values = field.params()
    state = ag.AdamState()
    history = [] if record else None
    done = 0
    for _ in range(iters):
        leaves = {k: ag.param(v) for k, v in values.items()}
        loss = field_objective(cfg, leaves, coords, target.data)
        obj = float(loss.value)
        if history is not None:
            history.append(obj)
        if tol is not None and obj < tol:
            break
        ag.backward(loss)
        values, state = ag.adam_step(values, {k: t.grad for k, t in leaves.items()}, state, lr)
        done += 1
    field = NeuralField.from_params(cfg, values)
    final = float(np.sum((forward(field, coords).data - target.data) ** 2))
    return field, FitReport(done, final, time.perf_counter() - start, seed, history)


def fit_best_of(target: GridTensor, cfg: FieldConfig, restarts: int = 1, iters: int = WARMUP_ITERS,
                lr: float = WARMUP_LR, seed: int = 0) -> tuple[NeuralField, FitReport]:
    """Fit from ``restarts`` initializations (seeds ``seed .. seed+restarts-1``), keep the lowest objective."""
    if restarts < 1:
        raise InvalidArgument("restarts must be >= 1")
    fields, reports = fit_fields(np.repeat(target.data[None], restarts, axis=0), cfg,
                                 range(seed, seed + restarts), iters, lr)
    best = int(np.argmin([r.objective for r in reports]))
    return fields[best], reports[best]


def decode(f: NeuralField, dims: Sequence[int]) -> GridTensor:
    dims = tuple(dims)
    if len(dims) != f.config.input_dim:
        raise InvalidArgument(f"decode rank {len(dims)} != field input dimension {f.config.input_dim}")
    return forward(f, make_coordinate_set(dims))


def decode_cross_resolution(f: NeuralField, target_dims: Sequence[int]) -> GridTensor:
    """Decode on a lattice other than the one the field was fitted on."""
    return decode(f, target_dims)


def sample_per_class(real: LabeledDataset, per_class: int, rng: np.random.Generator) -> list[int]:
    """Indices of ``per_class`` instances per class, drawn without replacement, class-major order."""
    chosen = []
    for c in range(real.class_count):
        pool = real.indices_of(c)
        if len(pool) < per_class:
            raise InvalidArgument(f"class {c} has {len(pool)} instances, {per_class} requested")
        chosen.extend(int(i) for i in rng.choice(pool, size=per_class, replace=False))
    return chosen


def warmup_dataset(real: LabeledDataset, per_class: int, cfg: FieldConfig, seed: int,
                   iters: int = WARMUP_ITERS, lr: float = WARMUP_LR, threads: int = 1) -> SyntheticDataset:
    """Fit one field per sampled real instance; field ``j`` uses seed ``seed + j``."""
    if per_class < 1:
        raise InvalidArgument("per_class must be >= 1")
    picks = sample_per_class(real, per_class, np.random.default_rng(seed))

    targets = np.stack([real.instances[i].data for i in picks])
    seeds = [seed + j for j in range(len(picks))]
    chunks = np.array_split(np.arange(len(picks)), max(1, min(threads, len(picks))))

    def fit(idx):
        return fit_fields(targets[idx], cfg, [seeds[i] for i in idx], iters=iters, lr=lr)[0]

    if len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            fields = [f for part in pool.map(fit, chunks) for f in part]
    else:
        fields = fit(chunks[0])
    return SyntheticDataset(fields, [real.labels[i] for i in picks], real.shape)
