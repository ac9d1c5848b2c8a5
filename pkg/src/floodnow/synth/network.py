"""
Fully connected networks with hand-written backpropagation, and Adam.

Row-major batches: inputs are ``(batch, features)`` and each layer computes
``a @ W + b``. Hidden layers use the network's activation; the last layer is
linear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAKY_SLOPE = 0.2


def _act(tag: str, z: np.ndarray) -> np.ndarray:
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    raise ValueError(f"unknown activation {tag!r}")


def _act_grad(tag: str, z: np.ndarray) -> np.ndarray:
    if tag == "relu":
        return (z > 0).astype(z.dtype)
    if tag == "leaky_relu":
        return np.where(z > 0, 1.0, LEAKY_SLOPE)
    raise ValueError(f"unknown activation {tag!r}")


@dataclass
class NetworkParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str

    @classmethod
    def init(cls, sizes: list[int], activation: str, rng: np.random.Generator) -> "NetworkParams":
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases, activation)

    @property
    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @property
    def names(self) -> list[str]:
        out = []
        for i in range(len(self.weights)):
            out += [f"layer{i}.weight", f"layer{i}.bias"]
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.activation)

    def to_dict(self) -> dict:
        return {
            "activation": self.activation,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkParams":
        return cls(
            [np.array(W, dtype=np.float64) for W in d["weights"]],
            [np.array(b, dtype=np.float64) for b in d["biases"]],
            d["activation"],
        )


def forward(net: NetworkParams, x: np.ndarray) -> tuple[np.ndarray, tuple]:
    acts, pre = [x], []
    a = x
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ W + b
        pre.append(z)
        a = _act(net.activation, z) if i < last else z
        acts.append(a)
    return a, (acts, pre)


def backward(net: NetworkParams, cache: tuple, dout: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients in ``net.arrays`` order, plus the gradient w.r.t. the input."""
    acts, pre = cache
    last = len(net.weights) - 1
    grads: list[np.ndarray] = [None] * (2 * len(net.weights))  # type: ignore[list-item]
    d = dout
    for i in range(last, -1, -1):
        if i < last:
            d = d * _act_grad(net.activation, pre[i])
        grads[2 * i] = acts[i].T @ d
        grads[2 * i + 1] = d.sum(axis=0)
        d = d @ net.weights[i].T
    return grads, d


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.5,
    beta2: float = 0.9,
    eps: float = 1e-8,
    names: list[str] | None = None,
) -> tuple[list[np.ndarray], AdamState]:
    """Bias-corrected Adam update, applied in place; returns (params, state)."""
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            label = names[i] if names else f"parameter {i}"
            raise FloatingPointError(f"non-finite gradient in {label}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state
