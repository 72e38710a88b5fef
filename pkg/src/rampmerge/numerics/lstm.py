"""A single LSTM cell with an exact backward pass.

Gate weights are kept in one stacked ``(4H, X+H)`` matrix in gate order
input, forget, output, candidate; ``params()`` exposes per-gate views so the
optimizer and checkpoints see the four matrices by name.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, ShapeError
from .layers import sigmoid, xavier_uniform
from .rng import Xoshiro256pp

GATES = ("i", "f", "o", "g")


@dataclass
class LstmCellParams:
    weights: np.ndarray  # (4H, X+H)
    bias: np.ndarray  # (4H,)

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        rows = self.weights.shape[0]
        if self.weights.ndim != 2 or rows % 4 or self.bias.shape != (rows,):
            raise ShapeError(f"bad LSTM parameter shapes {self.weights.shape}, {self.bias.shape}")
        if self.weights.shape[1] <= rows // 4:
            raise ShapeError("weights must have X+H columns with X >= 1")

    @classmethod
    def init(cls, rng: Xoshiro256pp, n_input: int, n_hidden: int, forget_bias: float = 1.0) -> LstmCellParams:
        blocks = [xavier_uniform(rng, n_hidden, n_input + n_hidden) for _ in GATES]
        bias = np.zeros(4 * n_hidden)
        bias[n_hidden : 2 * n_hidden] = forget_bias
        return cls(np.vstack(blocks), bias)

    @classmethod
    def zeros(cls, n_input: int, n_hidden: int) -> LstmCellParams:
        return cls(np.zeros((4 * n_hidden, n_input + n_hidden)), np.zeros(4 * n_hidden))

    @classmethod
    def from_gates(cls, W: dict[str, np.ndarray], b: dict[str, np.ndarray]) -> LstmCellParams:
        return cls(np.vstack([W[g] for g in GATES]), np.concatenate([b[g] for g in GATES]))

    @property
    def hidden_size(self) -> int:
        return self.weights.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.weights.shape[1] - self.hidden_size

    def params(self, prefix: str = "") -> dict[str, np.ndarray]:
        H = self.hidden_size
        out = {}
        for k, g in enumerate(GATES):
            out[f"{prefix}W_{g}"] = self.weights[k * H : (k + 1) * H]
        for k, g in enumerate(GATES):
            out[f"{prefix}b_{g}"] = self.bias[k * H : (k + 1) * H]
        return out


@dataclass
class LstmCache:
    owner: int
    z: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c_prev: np.ndarray
    tanh_c: np.ndarray


def lstm_forward(
    p: LstmCellParams, x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray
) -> tuple[np.ndarray, np.ndarray, LstmCache]:
    H = p.hidden_size
    if x.shape[-1] != p.input_size:
        raise ShapeError(f"LSTM expects input size {p.input_size}, got {x.shape[-1]}")
    if h_prev.shape[-1] != H or c_prev.shape != h_prev.shape:
        raise ShapeError(f"LSTM expects state size {H}, got {h_prev.shape} / {c_prev.shape}")
    z = np.concatenate([x, h_prev], axis=-1)
    pre = z @ p.weights.T + p.bias
    ifo = sigmoid(pre[..., : 3 * H])
    i = ifo[..., :H]
    f = ifo[..., H : 2 * H]
    o = ifo[..., 2 * H :]
    g = np.tanh(pre[..., 3 * H :])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, LstmCache(id(p), z, i, f, o, g, c_prev, tanh_c)


def lstm_backward(
    p: LstmCellParams, cache: LstmCache, dh: np.ndarray, dc: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray, np.ndarray, np.ndarray]:
    """Backward through one cell step.

    ``dh`` and ``dc`` are the loss gradients with respect to this step's
    outputs ``h`` and ``c``. Returns ``(grads, dx, dh_prev, dc_prev)`` where
    ``grads`` holds the stacked ``"W"`` and ``"b"`` gradients.
    """
    if cache.owner != id(p) or cache.z.shape[-1] != p.weights.shape[1]:
        raise ContractError("cache was not produced by these LSTM parameters")
    if dh.shape != cache.i.shape or dc.shape != cache.i.shape:
        raise ContractError("upstream gradients do not match the cached step")
    X = p.input_size
    i, f, o, g, tanh_c = cache.i, cache.f, cache.o, cache.g, cache.tanh_c
    dc_total = dc + dh * o * (1.0 - tanh_c * tanh_c)
    d_pre = np.concatenate(
        [
            dc_total * g * i * (1.0 - i),
            dc_total * cache.c_prev * f * (1.0 - f),
            dh * tanh_c * o * (1.0 - o),
            dc_total * i * (1.0 - g * g),
        ],
        axis=-1,
    )
    if d_pre.ndim == 1:
        dW = np.outer(d_pre, cache.z)
        db = d_pre.copy()
    else:
        dW = d_pre.T @ cache.z
        db = d_pre.sum(axis=0)
    dz = d_pre @ p.weights
    return {"W": dW, "b": db}, dz[..., :X], dz[..., X:], dc_total * f


def split_gate_grads(p: LstmCellParams, grads: dict[str, np.ndarray], prefix: str = "") -> dict[str, np.ndarray]:
    """Re-key stacked ``W``/``b`` gradients to the per-gate names of ``params()``."""
    H = p.hidden_size
    out = {}
    for k, g in enumerate(GATES):
        out[f"{prefix}W_{g}"] = grads["W"][k * H : (k + 1) * H]
    for k, g in enumerate(GATES):
        out[f"{prefix}b_{g}"] = grads["b"][k * H : (k + 1) * H]
    return out
