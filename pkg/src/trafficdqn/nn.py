"""Small dense ReLU network with hand-written backprop and Adam (float64)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RELU = "relu"
IDENTITY = "identity"


@dataclass
class Mlp:
    """Dense network. ``weights[i]`` has shape ``(out, in)``."""

    weights: list
    biases: list
    activations: list

    def __post_init__(self):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {i}: weight rows {w.shape[0]} != bias length {b.shape[0]}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: input width does not chain")
        if self.activations[-1] != IDENTITY:
            raise ValueError("final layer must be linear")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> Mlp:
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                   list(self.activations))


def init_mlp(dims, seed) -> Mlp:
    """He-normal for ReLU layers, Glorot-normal for the linear output layer."""
    dims = list(dims)
    if len(dims) < 2 or any(int(d) != d or d <= 0 for d in dims):
        raise ValueError(f"need at least two positive layer sizes, got {dims}")
    rng = np.random.default_rng(seed)
    weights, biases, acts = [], [], []
    n_layers = len(dims) - 1
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        last = i == n_layers - 1
        std = np.sqrt(2.0 / (fan_in + fan_out)) if last else np.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, std, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
        acts.append(IDENTITY if last else RELU)
    return Mlp(weights, biases, acts)


def _check_input(net: Mlp, x: np.ndarray):
    if x.shape[-1] != net.input_dim:
        raise ValueError(f"input width {x.shape[-1]} != network input {net.input_dim}")


def forward(net: Mlp, x) -> np.ndarray:
    """Evaluate the network on one vector ``(in,)`` or a batch ``(B, in)``."""
    x = np.asarray(x, dtype=np.float64)
    _check_input(net, x)
    h = x
    for w, b, act in zip(net.weights, net.biases, net.activations):
        h = h @ w.T + b
        if act == RELU:
            h = np.maximum(h, 0.0)
    return h


def _forward_cache(net: Mlp, x: np.ndarray):
    hs = [x]
    h = x
    for w, b, act in zip(net.weights, net.biases, net.activations):
        h = h @ w.T + b
        if act == RELU:
            h = np.maximum(h, 0.0)
        hs.append(h)
    return hs


def masked_loss_and_gradients(net: Mlp, x, targets, mask):
    """Batch squared-difference loss on the masked output coordinates.

    ``loss = mean_b sum_j mask[b, j] * (targets[b, j] - q[b, j])**2``;
    the gradient is that of the per-sample losses averaged over the batch.
    Returns ``(loss, grads)`` with ``grads`` ordered like :meth:`Mlp.params`.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _check_input(net, x)
    targets = np.atleast_2d(targets)
    mask = np.atleast_2d(mask).astype(np.float64)
    batch = x.shape[0]
    hs = _forward_cache(net, x)
    err = (hs[-1] - targets) * mask
    loss = float(np.sum(err * err) / batch)
    return loss, _backward(net, hs, 2.0 * err / batch)


def summed_loss_and_gradients(net: Mlp, x, targets, mask):
    """Squared difference between one target per sample and the sum of its masked outputs.

    ``loss = mean_b (targets[b] - sum_j mask[b, j] * q[b, j])**2``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _check_input(net, x)
    mask = np.atleast_2d(mask).astype(np.float64)
    batch = x.shape[0]
    hs = _forward_cache(net, x)
    err = np.sum(hs[-1] * mask, axis=1) - np.asarray(targets, dtype=np.float64).reshape(batch)
    loss = float(np.sum(err * err) / batch)
    return loss, _backward(net, hs, 2.0 * err[:, None] * mask / batch)


def _backward(net: Mlp, hs: list, delta: np.ndarray) -> list:
    """Parameter gradients given the loss gradient ``delta`` with respect to the outputs."""
    grads = [None] * (2 * len(net.weights))
    for i in range(len(net.weights) - 1, -1, -1):
        grads[2 * i] = delta.T @ hs[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i:
            delta = (delta @ net.weights[i]) * (hs[i] > 0.0)
    return grads


def loss_and_gradients(net: Mlp, x, action_index: int, target: float):
    """Single-sample loss ``(target - q[action_index])**2`` and its gradients."""
    if not 0 <= action_index < net.output_dim:
        raise IndexError(f"action index {action_index} outside [0, {net.output_dim})")
    t = np.zeros((1, net.output_dim))
    m = np.zeros((1, net.output_dim))
    t[0, action_index] = target
    m[0, action_index] = 1.0
    return masked_loss_and_gradients(net, x, t, m)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: Mlp, **hyper) -> AdamState:
        params = net.params()
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)

    def hyper(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def adam_step(net: Mlp, opt: AdamState, grads) -> tuple[Mlp, AdamState]:
    """One bias-corrected Adam update, applied in place."""
    params = net.params()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ValueError("gradient shapes do not match network parameters")
    opt.t += 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1 ** opt.t
    c2 = 1.0 - b2 ** opt.t
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return net, opt


def copy_parameters(src: Mlp, dst: Mlp) -> None:
    if src.dims != dst.dims or src.activations != dst.activations:
        raise ValueError(f"architecture mismatch: {src.dims} vs {dst.dims}")
    for p_dst, p_src in zip(dst.params(), src.params()):
        np.copyto(p_dst, p_src)


# ---------------------------------------------------------------------------
# JSON checkpoint helpers; Python's float repr round-trips float64 exactly


def mlp_to_json(net: Mlp) -> dict:
    return {
        "dims": net.dims,
        "activations": list(net.activations),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def mlp_from_json(d: dict) -> Mlp:
    net = Mlp([np.array(w, dtype=np.float64).reshape(o, i)
               for w, o, i in zip(d["weights"], d["dims"][1:], d["dims"][:-1])],
              [np.array(b, dtype=np.float64) for b in d["biases"]],
              list(d["activations"]))
    if net.dims != list(d["dims"]):
        raise ValueError("checkpoint dims do not match stored arrays")
    return net


def adam_to_json(opt: AdamState) -> dict:
    return {"t": opt.t, **opt.hyper(),
            "m": [a.tolist() for a in opt.m], "v": [a.tolist() for a in opt.v]}


def adam_from_json(d: dict, like: Mlp) -> AdamState:
    shapes = [p.shape for p in like.params()]
    return AdamState([np.array(a, dtype=np.float64).reshape(s) for a, s in zip(d["m"], shapes)],
                     [np.array(a, dtype=np.float64).reshape(s) for a, s in zip(d["v"], shapes)],
                     t=d["t"], lr=d["lr"], beta1=d["beta1"], beta2=d["beta2"], eps=d["eps"])
