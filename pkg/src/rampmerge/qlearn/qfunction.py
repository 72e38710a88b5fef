"""Quadratic Q-function head with a closed-form bounded argmax.

For internal state ``s`` and an action ``a`` normalized to ``[-1, 1]`` per
dimension::

    Q(s, a) = sum_d A_d(s) * (B_d(s) - a_d)**2 + C(s),   A_d(s) = -softplus(raw_d(s)) - eps_A

Every ``A_d`` is strictly negative, so the maximizer over the action box is
``clip(B(s), -1, 1)`` dimension by dimension.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..env import Action
from ..errors import ContractError, NumericError
from ..numerics import Checkpoint, DenseLayer, Mlp, sigmoid, softplus
from ..numerics.rng import Xoshiro256pp

ACTION_DIM = 2


@dataclass
class QParams:
    trunk: Mlp
    head_A: DenseLayer
    head_B: DenseLayer
    head_C: DenseLayer
    accel_bounds: tuple[float, float] = (-4.5, 3.0)
    steering_bounds: tuple[float, float] = (-0.262, 0.262)
    eps_A: float = 1e-3

    def __post_init__(self):
        lo = np.array([self.accel_bounds[0], self.steering_bounds[0]], dtype=np.float64)
        hi = np.array([self.accel_bounds[1], self.steering_bounds[1]], dtype=np.float64)
        self.center = 0.5 * (lo + hi)
        self.half = 0.5 * (hi - lo)
        width = self.trunk.n_out
        if (self.head_A.n_in, self.head_B.n_in, self.head_C.n_in) != (width, width, width):
            raise ContractError("heads must consume the trunk output")
        if (self.head_A.n_out, self.head_B.n_out, self.head_C.n_out) != (ACTION_DIM, ACTION_DIM, 1):
            raise ContractError("heads must produce (2, 2, 1) outputs")

    @classmethod
    def init(
        cls,
        rng: Xoshiro256pp,
        state_dim: int = 64,
        hidden: tuple[int, ...] = (64, 64),
        accel_bounds: tuple[float, float] = (-4.5, 3.0),
        steering_bounds: tuple[float, float] = (-0.262, 0.262),
        eps_A: float = 1e-3,
    ) -> QParams:
        trunk = Mlp.init(rng, [state_dim, *hidden], ["tanh"] * len(hidden))
        width = hidden[-1]
        return cls(
            trunk,
            DenseLayer.init(rng, width, ACTION_DIM),
            DenseLayer.init(rng, width, ACTION_DIM),
            DenseLayer.init(rng, width, 1),
            tuple(accel_bounds),
            tuple(steering_bounds),
            eps_A,
        )

    @property
    def state_dim(self) -> int:
        return self.trunk.n_in

    def params(self) -> dict[str, np.ndarray]:
        return {
            **self.trunk.params("trunk."),
            **self.head_A.params("A."),
            **self.head_B.params("B."),
            **self.head_C.params("C."),
        }

    def copy(self) -> QParams:
        def dup(layer: DenseLayer) -> DenseLayer:
            return DenseLayer(layer.weights.copy(), layer.bias.copy(), layer.activation)

        return QParams(
            Mlp([dup(l) for l in self.trunk.layers]),
            dup(self.head_A),
            dup(self.head_B),
            dup(self.head_C),
            self.accel_bounds,
            self.steering_bounds,
            self.eps_A,
        )

    def load_from(self, other: QParams) -> None:
        """Overwrite this parameter set in place with a bit-exact copy of ``other``."""
        mine = self.params()
        for name, arr in other.params().items():
            mine[name][...] = arr

    def normalize(self, action) -> np.ndarray:
        return (np.asarray(action, dtype=np.float64) - self.center) / self.half

    def denormalize(self, a_norm: np.ndarray) -> np.ndarray:
        return self.center + self.half * a_norm

    def to_checkpoint(self) -> Checkpoint:
        meta = {
            "kind": "qnet",
            "accel_bounds": json.dumps(list(self.accel_bounds)),
            "steering_bounds": json.dumps(list(self.steering_bounds)),
            "eps_A": repr(self.eps_A),
            "trunk_activations": ",".join(l.activation for l in self.trunk.layers),
        }
        return Checkpoint(tensors={k: v.copy() for k, v in self.params().items()}, metadata=meta)

    @classmethod
    def from_checkpoint(cls, ck: Checkpoint) -> QParams:
        if ck.metadata.get("kind") != "qnet":
            raise ContractError("checkpoint does not hold Q-network parameters")
        t = ck.tensors
        acts = ck.metadata["trunk_activations"].split(",")
        trunk = Mlp([DenseLayer(t[f"trunk.{i}.W"], t[f"trunk.{i}.b"], a) for i, a in enumerate(acts)])
        return cls(
            trunk,
            DenseLayer(t["A.W"], t["A.b"]),
            DenseLayer(t["B.W"], t["B.b"]),
            DenseLayer(t["C.W"], t["C.b"]),
            tuple(json.loads(ck.metadata["accel_bounds"])),
            tuple(json.loads(ck.metadata["steering_bounds"])),
            float(ck.metadata["eps_A"]),
        )


def heads(theta: QParams, s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, tuple]:
    """Evaluate ``A(s)``, ``B(s)`` and ``C(s)``; works for one state or a batch."""
    if not np.all(np.isfinite(s)):
        raise NumericError("internal state has non-finite components")
    feat, trunk_cache = theta.trunk.forward(s)
    raw, cache_A = theta.head_A.forward(feat)
    B, cache_B = theta.head_B.forward(feat)
    C, cache_C = theta.head_C.forward(feat)
    A = -softplus(raw) - theta.eps_A
    return A, B, C[..., 0], (trunk_cache, raw, cache_A, cache_B, cache_C)


def quadratic_q(A: np.ndarray, B: np.ndarray, C: np.ndarray, a_norm: np.ndarray) -> np.ndarray:
    d = B - a_norm
    return np.sum(A * d * d, axis=-1) + C


def q_value(theta: QParams, s: np.ndarray, action) -> float:
    A, B, C, _ = heads(theta, s)
    return float(quadratic_q(A, B, C, theta.normalize(action)))


def best_action_normalized(theta: QParams, s: np.ndarray) -> np.ndarray:
    _, B, _, _ = heads(theta, s)
    return np.clip(B, -1.0, 1.0)


def best_action(theta: QParams, s: np.ndarray) -> Action:
    a = theta.denormalize(best_action_normalized(theta, s))
    lo = (theta.accel_bounds[0], theta.steering_bounds[0])
    hi = (theta.accel_bounds[1], theta.steering_bounds[1])
    # guard the affine round trip so the bounds hold bit-exactly
    return Action(min(max(float(a[0]), lo[0]), hi[0]), min(max(float(a[1]), lo[1]), hi[1]))


def max_q(theta: QParams, s: np.ndarray) -> np.ndarray:
    """``max_a Q(s, a)`` over the action box, for one state or a batch."""
    A, B, C, _ = heads(theta, s)
    return quadratic_q(A, B, C, np.clip(B, -1.0, 1.0))


def select_action(theta: QParams, s: np.ndarray, noise_scale: float, rng: Xoshiro256pp) -> Action:
    """Greedy action plus Gaussian exploration noise, clamped to the bounds.

    ``noise_scale`` is the noise standard deviation as a fraction of each
    dimension's half-range.
    """
    if noise_scale < 0:
        raise ValueError("noise_scale must be >= 0")
    a = best_action_normalized(theta, s)
    if noise_scale > 0:
        a = a + noise_scale * np.array([rng.normal(), rng.normal()])
        a = np.clip(a, -1.0, 1.0)
    phys = theta.denormalize(a)
    return Action(
        min(max(float(phys[0]), theta.accel_bounds[0]), theta.accel_bounds[1]),
        min(max(float(phys[1]), theta.steering_bounds[0]), theta.steering_bounds[1]),
    )


def target_value(theta_target: QParams, r: float, s_next: np.ndarray, terminal: bool, gamma: float) -> float:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    if terminal:
        return float(r)
    return float(r + gamma * max_q(theta_target, s_next))


def target_values(theta_target: QParams, r: np.ndarray, s_next: np.ndarray, terminal: np.ndarray, gamma: float) -> np.ndarray:
    bootstrap = max_q(theta_target, s_next)
    return r + gamma * np.where(terminal, 0.0, bootstrap)


def q_loss_from_targets(
    theta: QParams, s: np.ndarray, a_norm: np.ndarray, q_target: np.ndarray
) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Mean squared residual against fixed targets and its gradient over ``theta``."""
    n = s.shape[0]
    if n == 0:
        raise ContractError("empty batch")
    A, B, C, (trunk_cache, raw, cache_A, cache_B, cache_C) = heads(theta, s)
    d = B - a_norm
    q_pred = np.sum(A * d * d, axis=-1) + C
    resid = q_target - q_pred
    loss = float(np.mean(resid * resid))
    dq = (-2.0 / n) * resid[:, None]
    d_raw = dq * d * d * (-sigmoid(raw))
    dB = dq * 2.0 * A * d
    dC = dq
    gA_W, gA_b, dfeat = theta.head_A.backward(cache_A, d_raw)
    gB_W, gB_b, dfeat_B = theta.head_B.backward(cache_B, dB)
    gC_W, gC_b, dfeat_C = theta.head_C.backward(cache_C, dC)
    trunk_grads, _ = theta.trunk.backward(trunk_cache, dfeat + dfeat_B + dfeat_C, prefix="trunk.")
    grads = {**trunk_grads, "A.W": gA_W, "A.b": gA_b, "B.W": gB_W, "B.b": gB_b, "C.W": gC_W, "C.b": gC_b}
    return loss, grads, q_pred


def batch_loss(theta: QParams, theta_target: QParams, batch, gamma: float) -> tuple[float, dict[str, np.ndarray]]:
    """Mean squared TD error of a replay batch; targets come from ``theta_target`` and carry no gradient."""
    if len(batch.r) == 0:
        raise ContractError("empty batch")
    q_target = target_values(theta_target, batch.r, batch.s_next, batch.terminal, gamma)
    loss, grads, _ = q_loss_from_targets(theta, batch.s, theta.normalize(batch.a), q_target)
    return loss, grads
