"""Small classifiers used for matching losses and evaluation: a ConvNet and an MLP.

Parameters are plain dicts of numpy arrays; forward passes take dicts of
:class:`~nfd.autograd.Tensor` so the same code serves training (parameters
as leaves) and matching (inputs as leaves).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import InvalidArgument


@dataclass(frozen=True)
class ConvNetConfig:
    channels: int
    size: tuple[int, int]
    classes: int
    depth: int = 3
    width: int = 32
    norm: str = "instance"    # "instance" | "none"
    kind: str = "convnet"     # "convnet" | "mlp"

    def __post_init__(self):
        object.__setattr__(self, "size", tuple(int(s) for s in self.size))
        if self.depth < 1 or self.width < 1 or self.classes < 1 or self.channels < 1:
            raise InvalidArgument("depth, width, classes and channels must be >= 1")
        if self.norm not in ("instance", "none"):
            raise InvalidArgument(f"unknown norm {self.norm!r}")
        if self.kind not in ("convnet", "mlp"):
            raise InvalidArgument(f"unknown network kind {self.kind!r}")
        if len(self.size) != 2:
            raise InvalidArgument("classifiers take 2-D inputs")
        if self.kind == "convnet" and min(self.size) < 2 ** self.depth:
            raise InvalidArgument(f"input {self.size} too small for {self.depth} pooling stages")

    def feature_size(self) -> int:
        if self.kind == "mlp":
            return self.width
        h, w = self.size
        for _ in range(self.depth):
            h, w = h // 2, w // 2
        return self.width * h * w

    def param_names(self) -> list[str]:
        if self.kind == "mlp":
            return ["hid_w", "hid_b", "fc_w", "fc_b"]
        names = []
        for l in range(self.depth):
            names += [f"conv{l}_w", f"conv{l}_b"]
        return names + ["fc_w", "fc_b"]


def init_params(cfg: ConvNetConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform(+-1/sqrt(fan_in)) weights and biases."""
    params = {}

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    if cfg.kind == "mlp":
        fan = cfg.channels * cfg.size[0] * cfg.size[1]
        params["hid_w"] = uniform((cfg.width, fan), fan)
        params["hid_b"] = uniform((cfg.width,), fan)
    else:
        in_ch = cfg.channels
        for l in range(cfg.depth):
            fan = in_ch * 9
            params[f"conv{l}_w"] = uniform((cfg.width, in_ch, 3, 3), fan)
            params[f"conv{l}_b"] = uniform((cfg.width,), fan)
            in_ch = cfg.width
    fan = cfg.feature_size()
    params["fc_w"] = uniform((cfg.classes, fan), fan)
    params["fc_b"] = uniform((cfg.classes,), fan)
    return params


def embed(cfg: ConvNetConfig, x: ag.Tensor, params: dict[str, ag.Tensor]) -> ag.Tensor:
    """Feature vector before the final linear layer, shape ``(B, feature_size)``."""
    if x.value.ndim != 4 or x.shape[1:] != (cfg.channels, *cfg.size):
        raise InvalidArgument(f"input {x.shape} does not match network input {(cfg.channels, *cfg.size)}")
    b = x.shape[0]
    if cfg.kind == "mlp":
        flat = ag.reshape(x, (b, -1))
        return ag.relu(ag.add_bias(ag.matmul(flat, ag.transpose(params["hid_w"])), params["hid_b"]))
    h = x
    for l in range(cfg.depth):
        h = ag.add_bias(ag.conv2d(h, params[f"conv{l}_w"]), params[f"conv{l}_b"], axis=1)
        if cfg.norm == "instance":
            h = ag.instance_norm(h)
        h = ag.avg_pool2(ag.relu(h))
    return ag.reshape(h, (b, -1))


def logits(cfg: ConvNetConfig, x: ag.Tensor, params: dict[str, ag.Tensor]) -> ag.Tensor:
    feats = embed(cfg, x, params)
    return ag.add_bias(ag.matmul(feats, ag.transpose(params["fc_w"])), params["fc_b"])


def predict(cfg: ConvNetConfig, x: np.ndarray, params: dict[str, np.ndarray], chunk: int = 512) -> np.ndarray:
    consts = {k: ag.const(v) for k, v in params.items()}
    out = [logits(cfg, ag.const(x[i:i + chunk]), consts).value.argmax(axis=1) for i in range(0, len(x), chunk)]
    return np.concatenate(out)


def param_grads(cfg: ConvNetConfig, x: np.ndarray, labels, params: dict[str, np.ndarray]
                ) -> tuple[float, dict[str, np.ndarray]]:
    """Cross-entropy and its gradient with respect to the network parameters."""
    leaves = {k: ag.param(v) for k, v in params.items()}
    loss = ag.softmax_cross_entropy(logits(cfg, ag.const(x), leaves), labels)
    grads = ag.gradients(loss, list(leaves.values()))
    return float(loss.value), dict(zip(leaves, grads))


def param_grads_graph(cfg: ConvNetConfig, x: ag.Tensor, labels, params: dict[str, np.ndarray]
                      ) -> dict[str, ag.Tensor]:
    """Parameter gradients of the cross-entropy, built as a graph that stays differentiable in ``x``.

    The backward pass is written out with first-order primitives, so the
    result can itself be differentiated with respect to the input batch.
    Instance normalization is not supported here.
    """
    if cfg.kind == "convnet" and cfg.norm != "none":
        raise InvalidArgument("gradient graphs need norm='none'")
    labels = np.asarray(labels, dtype=int)
    b = x.shape[0]
    grads: dict[str, ag.Tensor] = {}
    if cfg.kind == "mlp":
        flat_in = ag.reshape(x, (b, -1))
        pre = ag.add_bias(ag.matmul(flat_in, ag.const(params["hid_w"].T)), ag.const(params["hid_b"]))
        mask = pre.value > 0
        feats = ag.relu(pre)
    else:
        saved = []
        h = x
        for l in range(cfg.depth):
            w = params[f"conv{l}_w"]
            cols = ag.im2col(h, 3)
            z = ag.matmul(cols, ag.const(w.reshape(w.shape[0], -1).T))
            z = ag.transpose(ag.reshape(z, (b, h.shape[2], h.shape[3], w.shape[0])), (0, 3, 1, 2))
            z = ag.add_bias(z, ag.const(params[f"conv{l}_b"]), axis=1)
            saved.append((h.shape, cols, z.value > 0, z.shape))
            h = ag.avg_pool2(ag.relu(z))
        feats = ag.reshape(h, (b, -1))
    out = ag.add_bias(ag.matmul(feats, ag.const(params["fc_w"].T)), ag.const(params["fc_b"]))
    onehot = np.zeros(out.shape)
    onehot[np.arange(b), labels] = 1.0
    g = ag.scale(ag.subtract(ag.softmax(out), ag.const(onehot)), 1.0 / b)
    grads["fc_w"] = ag.matmul(ag.transpose(g), feats)
    grads["fc_b"] = ag.sum(g, axis=0)
    g_feat = ag.matmul(g, ag.const(params["fc_w"]))
    if cfg.kind == "mlp":
        gz = ag.mul_const(g_feat, mask)
        grads["hid_w"] = ag.matmul(ag.transpose(gz), flat_in)
        grads["hid_b"] = ag.sum(gz, axis=0)
        return grads
    ga = ag.reshape(g_feat, h.shape)
    for l in reversed(range(cfg.depth)):
        in_shape, cols, mask, z_shape = saved[l]
        w = params[f"conv{l}_w"]
        gz = ag.mul_const(ag.avg_unpool2(ga, z_shape), mask)
        gz_mat = ag.reshape(ag.transpose(gz, (0, 2, 3, 1)), (-1, w.shape[0]))
        grads[f"conv{l}_w"] = ag.reshape(ag.matmul(ag.transpose(gz_mat), cols), w.shape)
        grads[f"conv{l}_b"] = ag.sum(gz, axis=(0, 2, 3))
        if l:
            ga = ag.col2im(ag.matmul(gz_mat, ag.const(w.reshape(w.shape[0], -1))), in_shape, 3)
    return grads


def train_classifier(cfg: ConvNetConfig, x: np.ndarray, y, rng: np.random.Generator, epochs: int = 300,
                     lr: float = 1e-3, batch: int = 256, augment_fn=None,
                     params: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Adam on mean cross-entropy; ``augment_fn(batch, rng)`` may transform each minibatch."""
    y = np.asarray(y, dtype=int)
    params = init_params(cfg, rng) if params is None else dict(params)
    state = ag.AdamState()
    n = len(x)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            xb = x[idx]
            if augment_fn is not None:
                xb = augment_fn(xb, rng)
            _, grads = param_grads(cfg, xb, y[idx], params)
            params, state = ag.adam_step(params, grads, state, lr)
    return params


def accuracy(cfg: ConvNetConfig, params: dict[str, np.ndarray], x: np.ndarray, y) -> float:
    return float(np.mean(predict(cfg, x, params) == np.asarray(y)))
