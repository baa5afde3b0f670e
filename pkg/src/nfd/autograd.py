"""Small reverse-mode autodiff over dense float64 numpy arrays.

Every primitive returns a new :class:`Tensor` holding its value, its parent
tensors and a vector-Jacobian product closure.  :func:`backward` walks the
graph in reverse topological order and accumulates gradients into the leaves
that were created with ``requires_grad=True``.

There is no general broadcasting: each primitive documents the shapes it
accepts.  Higher-order derivatives are not supported; losses that need the
gradient of a gradient (gradient matching) build the inner gradient as an
explicit graph from the ``im2col`` / ``col2im`` / ``softmax`` / mask
primitives instead.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgument

_ids = itertools.count()


class Tensor:
    __slots__ = ("value", "grad", "parents", "vjp", "op", "requires_grad", "id", "name")

    def __init__(self, value, requires_grad: bool = False, *, parents: tuple = (), vjp=None,
                 op: str = "leaf", name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.vjp = vjp
        self.op = op
        self.requires_grad = requires_grad
        self.id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor<{self.op}{tag}>{self.shape}"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return subtract(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        if np.ndim(other) == 0:
            return scale(self, float(other))
        return mul_const(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def const(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def param(value, name: str | None = None) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def _node(value, parents: Sequence[Tensor], vjp, op: str) -> Tensor:
    parents = tuple(parents)
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(value, op=op)
    return Tensor(value, requires_grad=True, parents=parents, vjp=vjp, op=op)


# -- elementwise and linear-algebra primitives --------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product."""
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise InvalidArgument(f"matmul shapes {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _node(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def add_bias(x: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    """Add a 1-D bias along ``axis`` of ``x``."""
    axis = axis % x.value.ndim
    if b.value.ndim != 1 or b.shape[0] != x.shape[axis]:
        raise InvalidArgument(f"bias {b.shape} does not match axis {axis} of {x.shape}")
    view = [1] * x.value.ndim
    view[axis] = -1
    others = tuple(i for i in range(x.value.ndim) if i != axis)
    return _node(x.value + b.value.reshape(view), (x, b), lambda g: (g, g.sum(axis=others)), "add_bias")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _node(a.value + b.value, (a, b), lambda g: (g, g), "add")


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "subtract")
    return _node(a.value - b.value, (a, b), lambda g: (g, -g), "subtract")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    av, bv = a.value, b.value
    return _node(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def mul_const(x: Tensor, c) -> Tensor:
    """Elementwise product with a constant array of the same shape."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != x.shape:
        raise InvalidArgument(f"mul_const shapes {x.shape} vs {c.shape}")
    return _node(x.value * c, (x,), lambda g: (g * c,), "mul_const")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node(x.value * c, (x,), lambda g: (g * c,), "scale")


def sin(x: Tensor) -> Tensor:
    xv = x.value
    return _node(np.sin(xv), (x,), lambda g: (g * np.cos(xv),), "sin")


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0
    return _node(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


def square(x: Tensor) -> Tensor:
    xv = x.value
    return _node(xv * xv, (x,), lambda g: (2.0 * g * xv,), "square")


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise InvalidArgument(f"{op} shapes differ: {a.shape} vs {b.shape}")


# -- reductions ---------------------------------------------------------------

def sum(x: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:  # noqa: A001
    shape = x.shape
    if axis is None:
        return _node(x.value.sum(), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axes), shape).copy(),)

    return _node(x.value.sum(axis=axes), (x,), vjp, "sum")


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.value.size
    return _node(x.value.mean(), (x,), lambda g: (np.full(shape, g / n),), "mean")


# -- shape manipulation -------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return _node(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.value.ndim)))
    inverse = np.argsort(axes)
    return _node(x.value.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = list(xs)
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([x.value for x in xs], axis=axis), xs,
                 lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def flip(x: Tensor, axis: int) -> Tensor:
    return _node(np.flip(x.value, axis).copy(), (x,), lambda g: (np.flip(g, axis).copy(),), "flip")


def _shift(arr: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(arr)
    h, w = arr.shape[-2:]
    src_y = slice(max(0, -dy), min(h, h - dy))
    dst_y = slice(max(0, dy), min(h, h + dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_x = slice(max(0, dx), min(w, w + dx))
    out[..., dst_y, dst_x] = arr[..., src_y, src_x]
    return out


def shift2d(x: Tensor, dy: int, dx: int) -> Tensor:
    """Translate the last two axes by ``(dy, dx)`` with zero fill."""
    return _node(_shift(x.value, dy, dx), (x,), lambda g: (_shift(g, -dy, -dx),), "shift2d")


# -- convolution and pooling --------------------------------------------------

def _im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    b, c = x.shape[:2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    ho, wo = win.shape[2:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * k * k)


def _col2im(cols: np.ndarray, shape: tuple[int, ...], k: int, pad: int) -> np.ndarray:
    b, c, h, w = shape
    ho, wo = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    blocks = cols.reshape(b, ho, wo, c, k, k)
    out = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + ho, j:j + wo] += blocks[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return out


def _padding(kernel: int, padding: str) -> int:
    if padding == "same":
        if kernel % 2 == 0:
            raise InvalidArgument("'same' padding needs an odd kernel")
        return kernel // 2
    if padding == "valid":
        return 0
    raise InvalidArgument(f"unknown padding {padding!r}")


def im2col(x: Tensor, kernel: int, padding: str = "same") -> Tensor:
    """Unfold ``(B, C, H, W)`` into ``(B*Ho*Wo, C*k*k)`` patch rows."""
    pad = _padding(kernel, padding)
    shape = x.shape
    return _node(_im2col(x.value, kernel, pad), (x,), lambda g: (_col2im(g, shape, kernel, pad),), "im2col")


def col2im(cols: Tensor, shape: Sequence[int], kernel: int, padding: str = "same") -> Tensor:
    """Adjoint of :func:`im2col`: scatter-add patch rows back onto a ``shape`` image batch."""
    pad = _padding(kernel, padding)
    shape = tuple(shape)
    return _node(_col2im(cols.value, shape, kernel, pad), (cols,),
                 lambda g: (_im2col(g, kernel, pad),), "col2im")


def conv2d(x: Tensor, w: Tensor, padding: str = "same") -> Tensor:
    """Stride-1 cross-correlation; ``x`` is ``(B, C, H, W)``, ``w`` is ``(O, C, k, k)``."""
    if x.value.ndim != 4 or w.value.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
        raise InvalidArgument(f"conv2d shapes {x.shape} * {w.shape}")
    k = w.shape[2]
    pad = _padding(k, padding)
    cols = _im2col(x.value, k, pad)
    b, h, wd = x.shape[0], x.shape[2], x.shape[3]
    ho, wo = h + 2 * pad - k + 1, wd + 2 * pad - k + 1
    wmat = w.value.reshape(w.shape[0], -1)
    out = (cols @ wmat.T).reshape(b, ho, wo, -1).transpose(0, 3, 1, 2)
    xshape, wshape = x.shape, w.shape

    def vjp(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, wshape[0])
        dw = (gm.T @ cols).reshape(wshape)
        dx = _col2im(gm @ wmat, xshape, k, pad)
        return dx, dw

    return _node(out, (x, w), vjp, "conv2d")


def _pool(arr: np.ndarray) -> np.ndarray:
    h, w = arr.shape[-2] // 2 * 2, arr.shape[-1] // 2 * 2
    a = arr[..., :h, :w]
    return 0.25 * (a[..., 0::2, 0::2] + a[..., 1::2, 0::2] + a[..., 0::2, 1::2] + a[..., 1::2, 1::2])


def _unpool(arr: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    out = np.zeros(shape)
    up = 0.25 * np.repeat(np.repeat(arr, 2, axis=-2), 2, axis=-1)
    out[..., :up.shape[-2], :up.shape[-1]] = up
    return out


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2 over the last two axes (odd edges dropped)."""
    shape = x.shape
    return _node(_pool(x.value), (x,), lambda g: (_unpool(g, shape),), "avg_pool2")


def avg_unpool2(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Adjoint of :func:`avg_pool2`."""
    shape = tuple(shape)
    return _node(_unpool(x.value, shape), (x,), lambda g: (_pool(g),), "avg_unpool2")


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over the spatial axes of ``(B, C, H, W)``."""
    axes = (2, 3)
    mu = x.value.mean(axis=axes, keepdims=True)
    centered = x.value - mu
    inv = 1.0 / np.sqrt((centered ** 2).mean(axis=axes, keepdims=True) + eps)
    xhat = centered * inv

    def vjp(g):
        return (inv * (g - g.mean(axis=axes, keepdims=True) - xhat * (g * xhat).mean(axis=axes, keepdims=True)),)

    return _node(xhat, (x,), vjp, "instance_norm")


# -- classification / similarity ----------------------------------------------

def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax(z: Tensor) -> Tensor:
    """Row-wise softmax of a ``(B, K)`` array."""
    s = _softmax(z.value)
    return _node(s, (z,), lambda g: (s * (g - (g * s).sum(axis=1, keepdims=True)),), "softmax")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of ``(B, K)`` logits against integer labels."""
    labels = np.asarray(labels, dtype=int)
    b = logits.shape[0]
    if labels.shape != (b,):
        raise InvalidArgument(f"labels shape {labels.shape} for logits {logits.shape}")
    z = logits.value
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logsum - shifted[np.arange(b), labels]))
    probs = np.exp(shifted - logsum[:, None])

    def vjp(g):
        d = probs.copy()
        d[np.arange(b), labels] -= 1.0
        return (g * d / b,)

    return _node(np.asarray(loss), (logits,), vjp, "softmax_cross_entropy")


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of matching rows of two ``(R, K)`` arrays, returned as ``(R,)``.

    Rows where either side has zero norm are reported as similarity 1 with a
    zero gradient, so that a vanishing gradient contributes no matching cost.
    """
    _same_shape(a, b, "cosine_similarity")
    if a.value.ndim != 2:
        raise InvalidArgument("cosine_similarity expects (R, K) inputs")
    av, bv = a.value, b.value
    na = np.linalg.norm(av, axis=1)
    nb = np.linalg.norm(bv, axis=1)
    ok = (na > 0) & (nb > 0)
    safe_a = np.where(ok, na, 1.0)
    safe_b = np.where(ok, nb, 1.0)
    dots = (av * bv).sum(axis=1)
    cos = np.where(ok, dots / (safe_a * safe_b), 1.0)

    def vjp(g):
        g = np.where(ok, g, 0.0)[:, None]
        da = g * (bv / (safe_a * safe_b)[:, None] - cos[:, None] * av / (safe_a ** 2)[:, None])
        db = g * (av / (safe_a * safe_b)[:, None] - cos[:, None] * bv / (safe_b ** 2)[:, None])
        return da, db

    return _node(cos, (a, b), vjp, "cosine_similarity")


# -- backward pass ------------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and p.id not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(root)/d(leaf) into every reachable trainable leaf.

    Returns a mapping from leaf tensors to the gradient contributed by this call.
    """
    if root.value.size != 1:
        raise InvalidArgument(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return {}
    grads = {root.id: np.ones_like(root.value)}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(_topological(root)):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        if node.is_leaf:
            leaves[node] = g
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg
    return leaves


def gradients(root: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradient of ``root`` with respect to each of ``wrt`` (zeros when unreachable)."""
    for t in wrt:
        t.zero_grad()
    found = backward(root)
    return [found.get(t, np.zeros(t.shape)) for t in wrt]


def grad_check(f: Callable[[dict[str, Tensor]], Tensor], point: Mapping[str, np.ndarray],
               h: float = 1e-5) -> float:
    """Max over all coordinates of |analytic - central difference| / max(1, |central difference|)."""
    point = {k: np.array(v, dtype=np.float64) for k, v in point.items()}
    leaves = {k: param(v, name=k) for k, v in point.items()}
    root = f(leaves)
    analytic = dict(zip(leaves, gradients(root, list(leaves.values()))))
    worst = 0.0
    for name, base in point.items():
        flat = base.ravel()
        for i in range(flat.size):
            vals = []
            for step in (h, -h):
                probe = flat.copy()
                probe[i] += step
                trial = dict(point)
                trial[name] = probe.reshape(base.shape)
                vals.append(float(f({k: const(v) for k, v in trial.items()}).value))
            numeric = (vals[0] - vals[1]) / (2 * h)
            err = abs(analytic[name].ravel()[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst


# -- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns fresh parameter and state objects."""
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != np.shape(p):
            raise InvalidArgument(f"gradient shape {g.shape} != parameter shape {np.shape(p)} for {name!r}")
        m = beta1 * state.m.get(name, 0.0) + (1 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(t, new_m, new_v)
