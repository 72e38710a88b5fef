"""LSTM environment model providing the internal state fed to the Q-network.

The state module is an LSTM cell consuming the normalized observation and the
previously executed action; its hidden vector is the internal state. The
observation module is a small MLP that predicts the next observation from the
internal state and the action taken next. The model is trained by
teacher-forced supervised learning with truncated BPTT and then frozen.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .env import OBS_DIM, OBS_FIELDS, Action
from .errors import ContractError, ShapeError
from .numerics import Adam, Checkpoint, LstmCellParams, Mlp, lstm_backward, lstm_forward
from .numerics.lstm import GATES
from .numerics.rng import Xoshiro256pp, derive_seed
from .scripted import Episode, TrajectoryDataset

log = logging.getLogger(__name__)

ACTION_DIM = 2
STD_FLOOR = 1e-6


@dataclass
class NormStats:
    obs_mean: np.ndarray
    obs_std: np.ndarray
    act_mean: np.ndarray
    act_std: np.ndarray

    @classmethod
    def identity(cls) -> NormStats:
        return cls(np.zeros(OBS_DIM), np.ones(OBS_DIM), np.zeros(ACTION_DIM), np.ones(ACTION_DIM))

    @classmethod
    def fit(cls, episodes: Sequence[Episode]) -> NormStats:
        obs = np.concatenate([e.observations for e in episodes])
        act = np.concatenate([e.actions for e in episodes])
        return cls(
            obs.mean(axis=0),
            np.maximum(obs.std(axis=0), STD_FLOOR),
            act.mean(axis=0),
            np.maximum(act.std(axis=0), STD_FLOOR),
        )

    def norm_obs(self, o: np.ndarray) -> np.ndarray:
        return (o - self.obs_mean) / self.obs_std

    def denorm_obs(self, z: np.ndarray) -> np.ndarray:
        return z * self.obs_std + self.obs_mean

    def norm_action(self, a) -> np.ndarray:
        return (np.asarray(a, dtype=np.float64) - self.act_mean) / self.act_std

    def to_metadata(self) -> dict[str, str]:
        return {k: json.dumps([float(x) for x in getattr(self, k)]) for k in ("obs_mean", "obs_std", "act_mean", "act_std")}

    @classmethod
    def from_metadata(cls, meta: dict[str, str]) -> NormStats:
        return cls(*(np.asarray(json.loads(meta[k]), dtype=np.float64) for k in ("obs_mean", "obs_std", "act_mean", "act_std")))


@dataclass
class BeliefParams:
    lstm: LstmCellParams
    obs_head: Mlp
    norm: NormStats = field(default_factory=NormStats.identity)

    def __post_init__(self):
        if self.lstm.input_size != OBS_DIM + ACTION_DIM:
            raise ShapeError(f"LSTM input must be {OBS_DIM + ACTION_DIM}, got {self.lstm.input_size}")
        if self.obs_head.n_in != self.lstm.hidden_size + ACTION_DIM or self.obs_head.n_out != OBS_DIM:
            raise ShapeError("observation head dimensions do not chain with the LSTM")

    @classmethod
    def init(cls, rng: Xoshiro256pp, hidden: int = 64, head_width: int = 64) -> BeliefParams:
        lstm = LstmCellParams.init(rng, OBS_DIM + ACTION_DIM, hidden)
        head = Mlp.init(rng, [hidden + ACTION_DIM, head_width, OBS_DIM], ["tanh", "linear"])
        return cls(lstm, head)

    @property
    def hidden_size(self) -> int:
        return self.lstm.hidden_size

    def params(self) -> dict[str, np.ndarray]:
        return {**self.lstm.params("lstm."), **self.obs_head.params("head.")}

    def train_params(self) -> dict[str, np.ndarray]:
        # stacked gate matrices: one Adam slot per array instead of eight
        return {"lstm.W": self.lstm.weights, "lstm.b": self.lstm.bias, **self.obs_head.params("head.")}

    def copy(self) -> BeliefParams:
        return BeliefParams(
            LstmCellParams(self.lstm.weights.copy(), self.lstm.bias.copy()),
            Mlp([type(l)(l.weights.copy(), l.bias.copy(), l.activation) for l in self.obs_head.layers]),
            NormStats(*(a.copy() for a in (self.norm.obs_mean, self.norm.obs_std, self.norm.act_mean, self.norm.act_std))),
        )

    def to_checkpoint(self) -> Checkpoint:
        meta = {
            "kind": "belief",
            "hidden_size": str(self.hidden_size),
            "input_size": str(self.lstm.input_size),
            "head_activations": ",".join(l.activation for l in self.obs_head.layers),
            "obs_fields": ",".join(OBS_FIELDS),
            **self.norm.to_metadata(),
        }
        return Checkpoint(tensors={k: v.copy() for k, v in self.params().items()}, metadata=meta)

    @classmethod
    def from_checkpoint(cls, ck: Checkpoint) -> BeliefParams:
        if ck.metadata.get("kind") != "belief":
            raise ContractError("checkpoint does not hold belief parameters")
        t = ck.tensors
        lstm = LstmCellParams.from_gates({g: t[f"lstm.W_{g}"] for g in GATES}, {g: t[f"lstm.b_{g}"] for g in GATES})
        acts = ck.metadata["head_activations"].split(",")
        from .numerics import DenseLayer

        head = Mlp([DenseLayer(t[f"head.{i}.W"], t[f"head.{i}.b"], a) for i, a in enumerate(acts)])
        return cls(lstm, head, NormStats.from_metadata(ck.metadata))


@dataclass
class BeliefState:
    s: np.ndarray
    c: np.ndarray
    a_prev: np.ndarray

    def with_action(self, action) -> BeliefState:
        return BeliefState(self.s, self.c, np.asarray(action, dtype=np.float64).copy())


def belief_init(params: BeliefParams) -> BeliefState:
    H = params.hidden_size
    return BeliefState(np.zeros(H), np.zeros(H), np.zeros(ACTION_DIM))


def belief_step(params: BeliefParams, state: BeliefState, obs: np.ndarray) -> tuple[np.ndarray, BeliefState]:
    """Fold one observation into the internal state.

    The returned state keeps ``state.a_prev``; the caller records the action
    it then executes with :meth:`BeliefState.with_action`.
    """
    if obs.shape != (OBS_DIM,):
        raise ShapeError(f"observation must have shape ({OBS_DIM},), got {obs.shape}")
    norm = params.norm
    x = np.concatenate([norm.norm_obs(obs), norm.norm_action(state.a_prev)])
    h, c, _ = lstm_forward(params.lstm, x, state.s, state.c)
    return h, BeliefState(h, c, state.a_prev)


def predict_observation(params: BeliefParams, state: BeliefState, a_prev) -> np.ndarray:
    """Estimate the next observation (physical units) from the internal state and the action just taken."""
    z = np.concatenate([state.s, params.norm.norm_action(a_prev)])
    y, _ = params.obs_head.forward(z)
    return params.norm.denorm_obs(y)


# ---------------------------------------------------------------------------
# supervised training


@dataclass
class SequenceBatch:
    """Time-major padded arrays for a group of episodes.

    ``inputs[t]`` is ``[norm(o_t); norm(a_{t-1})]``, ``head_actions[t]`` is
    ``norm(a_t)`` and ``targets[t]`` is ``norm(o_{t+1})``; ``mask[t]`` marks
    rows where that target exists.
    """

    inputs: np.ndarray  # (T, B, 11)
    head_actions: np.ndarray  # (T, B, 2)
    targets: np.ndarray  # (T, B, 9)
    mask: np.ndarray  # (T, B)
    persistence: np.ndarray  # (T, B, 9): norm(o_t), the persistence prediction


def make_batch(episodes: Sequence[Episode], norm: NormStats) -> SequenceBatch:
    T = max(len(e) for e in episodes)
    B = len(episodes)
    inputs = np.zeros((T, B, OBS_DIM + ACTION_DIM))
    head_actions = np.zeros((T, B, ACTION_DIM))
    targets = np.zeros((T, B, OBS_DIM))
    mask = np.zeros((T, B))
    persistence = np.zeros((T, B, OBS_DIM))
    a0 = norm.norm_action(np.zeros(ACTION_DIM))
    for b, ep in enumerate(episodes):
        n = len(ep)
        zo = norm.norm_obs(ep.observations)
        za = norm.norm_action(ep.actions)
        inputs[:n, b, :OBS_DIM] = zo
        inputs[0, b, OBS_DIM:] = a0
        inputs[1:n, b, OBS_DIM:] = za[:-1]
        head_actions[:n, b] = za
        targets[: n - 1, b] = zo[1:]
        persistence[:n, b] = zo
        mask[: n - 1, b] = 1.0
    return SequenceBatch(inputs, head_actions, targets, mask, persistence)


def sequence_loss(
    params: BeliefParams,
    inputs: np.ndarray,
    head_actions: np.ndarray,
    targets: np.ndarray,
    mask: np.ndarray,
    h0: np.ndarray,
    c0: np.ndarray,
    denom: float,
    want_grads: bool = True,
) -> tuple[float, dict[str, np.ndarray] | None, np.ndarray, np.ndarray, np.ndarray]:
    """Masked squared prediction error over one unrolled chunk.

    Returns ``(loss, grads, h_last, c_last, predictions)``; ``loss`` is the
    masked sum divided by ``denom`` and ``grads`` are keyed like
    :meth:`BeliefParams.train_params`.
    """
    T, B, _ = inputs.shape
    H = params.hidden_size
    h, c = h0, c0
    caches = []
    hs = np.empty((T, B, H))
    for t in range(T):
        h, c, cache = lstm_forward(params.lstm, inputs[t], h, c)
        hs[t] = h
        caches.append(cache)
    head_in = np.concatenate([hs, head_actions], axis=-1).reshape(T * B, H + ACTION_DIM)
    pred, head_cache = params.obs_head.forward(head_in)
    pred = pred.reshape(T, B, OBS_DIM)
    resid = (pred - targets) * mask[..., None]
    loss = float(np.sum(resid * resid)) / denom
    if not want_grads:
        return loss, None, h, c, pred
    dpred = (2.0 / denom) * resid
    head_grads, dhead_in = params.obs_head.backward(head_cache, dpred.reshape(T * B, OBS_DIM), prefix="head.")
    dhs = dhead_in[:, :H].reshape(T, B, H)
    dW = np.zeros_like(params.lstm.weights)
    db = np.zeros_like(params.lstm.bias)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        g, _, dh_next, dc_next = lstm_backward(params.lstm, caches[t], dhs[t] + dh_next, dc_next)
        dW += g["W"]
        db += g["b"]
    grads = {"lstm.W": dW, "lstm.b": db, **head_grads}
    return loss, grads, h, c, pred


@dataclass
class BeliefHyper:
    epochs: int = 40
    truncation: int = 32
    batch_size: int = 32
    lr: float = 1e-3
    hidden_size: int = 64
    head_width: int = 64
    holdout_fraction: float = 0.1
    grad_clip: float = 5.0

    def validate(self) -> None:
        from .errors import ConfigError

        if self.epochs < 1 or self.truncation < 1 or self.batch_size < 1:
            raise ConfigError("belief epochs, truncation and batch_size must be >= 1")
        if self.lr <= 0 or self.hidden_size < 1 or self.head_width < 1:
            raise ConfigError("belief lr and sizes must be positive")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must lie in (0, 1)")
        if self.grad_clip < 0:
            raise ConfigError("grad_clip must be >= 0 (0 disables clipping)")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    heldout_loss: float


def split_dataset(ds: TrajectoryDataset, holdout_fraction: float, seed: int) -> tuple[list[Episode], list[Episode]]:
    n = len(ds)
    if n < 2:
        raise ContractError("belief training needs at least 2 episodes")
    order = Xoshiro256pp(derive_seed(seed, "belief-split")).permutation(n)
    n_hold = min(max(1, int(round(holdout_fraction * n))), n - 1)
    held = [ds.episodes[i] for i in sorted(order[:n_hold])]
    train = [ds.episodes[i] for i in sorted(order[n_hold:])]
    return train, held


def _clip(grads: dict[str, np.ndarray], max_norm: float) -> None:
    if max_norm <= 0:
        return
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def heldout_mse(params: BeliefParams, episodes: Sequence[Episode], batch_size: int = 256) -> float:
    total, count = 0.0, 0.0
    for k in range(0, len(episodes), batch_size):
        batch = make_batch(episodes[k : k + batch_size], params.norm)
        B = batch.inputs.shape[1]
        n_valid = float(batch.mask.sum())
        if n_valid == 0:
            continue
        H = params.hidden_size
        loss, *_ = sequence_loss(
            params, batch.inputs, batch.head_actions, batch.targets, batch.mask, np.zeros((B, H)), np.zeros((B, H)), 1.0, False
        )
        total += loss
        count += n_valid * OBS_DIM
    return total / count if count else 0.0


def train_belief(
    dataset: TrajectoryDataset, hyper: BeliefHyper | None = None, seed: int = 0
) -> tuple[BeliefParams, list[EpochRecord]]:
    """Fit the environment model; the reported losses are per-feature MSEs in normalized space."""
    hyper = hyper or BeliefHyper()
    if len(dataset) == 0:
        raise ContractError("cannot train the belief model on an empty dataset")
    train, held = split_dataset(dataset, hyper.holdout_fraction, seed)
    params = BeliefParams.init(Xoshiro256pp(derive_seed(seed, "belief-init")), hyper.hidden_size, hyper.head_width)
    params.norm = NormStats.fit(train)
    adam = Adam(lr=hyper.lr)
    shuffle_rng = Xoshiro256pp(derive_seed(seed, "belief-shuffle"))
    tensors = params.train_params()
    H = params.hidden_size
    K = hyper.truncation
    history = []
    for epoch in range(1, hyper.epochs + 1):
        order = shuffle_rng.permutation(len(train))
        total, count = 0.0, 0.0
        for k in range(0, len(order), hyper.batch_size):
            batch = make_batch([train[i] for i in order[k : k + hyper.batch_size]], params.norm)
            T, B, _ = batch.inputs.shape
            h = np.zeros((B, H))
            c = np.zeros((B, H))
            for t0 in range(0, T, K):
                sl = slice(t0, t0 + K)
                n_valid = float(batch.mask[sl].sum())
                if n_valid == 0:
                    break
                loss, grads, h, c, _ = sequence_loss(
                    params, batch.inputs[sl], batch.head_actions[sl], batch.targets[sl], batch.mask[sl], h, c, n_valid * OBS_DIM
                )
                _clip(grads, hyper.grad_clip)
                adam.step(tensors, grads)
                total += loss * n_valid * OBS_DIM
                count += n_valid * OBS_DIM
        rec = EpochRecord(epoch, total / count, heldout_mse(params, held))
        history.append(rec)
        log.info("belief epoch %d train %.6f heldout %.6f", epoch, rec.train_loss, rec.heldout_loss)
    return params, history


@dataclass
class BeliefEval:
    model_mse: float
    persistence_mse: float
    model_mse_per_feature: dict[str, float]
    persistence_mse_per_feature: dict[str, float]
    n_targets: int

    @property
    def ratio(self) -> float:
        return self.model_mse / self.persistence_mse if self.persistence_mse > 0 else float("inf")


def eval_belief(params: BeliefParams, episodes: Sequence[Episode], batch_size: int = 256) -> BeliefEval:
    """One-step prediction error of the model and of the persistence baseline, normalized space."""
    se_model = np.zeros(OBS_DIM)
    se_persist = np.zeros(OBS_DIM)
    count = 0.0
    H = params.hidden_size
    for k in range(0, len(episodes), batch_size):
        batch = make_batch(episodes[k : k + batch_size], params.norm)
        B = batch.inputs.shape[1]
        *_, pred = sequence_loss(
            params, batch.inputs, batch.head_actions, batch.targets, batch.mask, np.zeros((B, H)), np.zeros((B, H)), 1.0, False
        )
        m = batch.mask[..., None]
        se_model += np.sum(((pred - batch.targets) * m) ** 2, axis=(0, 1))
        se_persist += np.sum(((batch.persistence - batch.targets) * m) ** 2, axis=(0, 1))
        count += float(batch.mask.sum())
    if count == 0:
        zeros = {f: 0.0 for f in OBS_FIELDS}
        return BeliefEval(0.0, 0.0, zeros, dict(zeros), 0)
    mf = se_model / count
    pf = se_persist / count
    return BeliefEval(
        float(mf.mean()),
        float(pf.mean()),
        dict(zip(OBS_FIELDS, map(float, mf))),
        dict(zip(OBS_FIELDS, map(float, pf))),
        int(count),
    )


class BeliefTracker:
    """Online wrapper: folds observations in and remembers executed actions."""

    def __init__(self, params: BeliefParams):
        self.params = params
        self.state = belief_init(params)

    def reset(self) -> None:
        self.state = belief_init(self.params)

    def step(self, obs: np.ndarray) -> np.ndarray:
        s, self.state = belief_step(self.params, self.state, obs)
        return s

    def record_action(self, action: Action) -> None:
        self.state = self.state.with_action(action)
