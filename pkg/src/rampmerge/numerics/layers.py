"""Dense layers and multilayer perceptrons with hand-written backward passes.

Inputs may be a single vector ``(in,)`` or a batch of row vectors
``(batch, in)``; outputs follow the same convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, ShapeError
from .rng import Xoshiro256pp

ACTIVATIONS = ("linear", "tanh", "relu", "sigmoid", "softplus")


def sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form is stable for large |z| and avoids overflow warnings
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softplus(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "linear":
        return z
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "softplus":
        return softplus(z)
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(kind: str, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Derivative dy/dz given pre-activation ``z`` and output ``y``."""
    if kind == "linear":
        return np.ones_like(z)
    if kind == "tanh":
        return 1.0 - y * y
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "sigmoid":
        return y * (1.0 - y)
    if kind == "softplus":
        return sigmoid(z)
    raise ValueError(f"unknown activation {kind!r}")


def xavier_uniform(rng: Xoshiro256pp, fan_out: int, fan_in: int) -> np.ndarray:
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return rng.uniform_array(-limit, limit, (fan_out, fan_in))


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "linear"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"weights {self.weights.shape} and bias {self.bias.shape} are inconsistent"
            )

    @classmethod
    def init(cls, rng: Xoshiro256pp, n_in: int, n_out: int, activation: str = "linear") -> DenseLayer:
        return cls(xavier_uniform(rng, n_out, n_in), np.zeros(n_out), activation)

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def params(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + "W": self.weights, prefix + "b": self.bias}

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"layer expects input size {self.n_in}, got {x.shape[-1]}")
        z = x @ self.weights.T + self.bias
        y = activate(self.activation, z)
        return y, (x, z, y)

    def backward(self, cache: tuple, dy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns ``(dW, db, dx)``."""
        x, z, y = cache
        if dy.shape != y.shape:
            raise ContractError(f"upstream gradient shape {dy.shape} != output shape {y.shape}")
        dz = dy if self.activation == "linear" else dy * activation_grad(self.activation, z, y)
        if dz.ndim == 1:
            dW = np.outer(dz, x)
            db = dz.copy()
        else:
            dW = dz.T @ x
            db = dz.sum(axis=0)
        return dW, db, dz @ self.weights


@dataclass
class MlpCache:
    owner: int
    layer_caches: list = field(default_factory=list)


@dataclass
class Mlp:
    layers: list[DenseLayer]

    def __post_init__(self):
        for i in range(1, len(self.layers)):
            if self.layers[i - 1].n_out != self.layers[i].n_in:
                raise ShapeError(
                    f"layer {i - 1} outputs {self.layers[i - 1].n_out} but layer {i} "
                    f"expects {self.layers[i].n_in}"
                )

    @classmethod
    def init(cls, rng: Xoshiro256pp, sizes: list[int], activations: list[str]) -> Mlp:
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        return cls([DenseLayer.init(rng, a, b, act) for a, b, act in zip(sizes[:-1], sizes[1:], activations)])

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def params(self, prefix: str = "") -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"{prefix}{i}."))
        return out

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
        cache = MlpCache(owner=id(self))
        y = x
        for i, layer in enumerate(self.layers):
            if y.shape[-1] != layer.n_in:
                raise ShapeError(f"layer {i} expects input size {layer.n_in}, got {y.shape[-1]}")
            y, c = layer.forward(y)
            cache.layer_caches.append(c)
        return y, cache

    def backward(self, cache: MlpCache, dy: np.ndarray, prefix: str = "") -> tuple[dict[str, np.ndarray], np.ndarray]:
        if cache.owner != id(self) or len(cache.layer_caches) != len(self.layers):
            raise ContractError("cache was not produced by this network")
        grads: dict[str, np.ndarray] = {}
        for i in range(len(self.layers) - 1, -1, -1):
            dW, db, dy = self.layers[i].backward(cache.layer_caches[i], dy)
            grads[f"{prefix}{i}.W"] = dW
            grads[f"{prefix}{i}.b"] = db
        return grads, dy


def mlp_forward(mlp: Mlp, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    return mlp.forward(x)


def mlp_backward(mlp: Mlp, cache: MlpCache, dy: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
    return mlp.backward(cache, dy)
