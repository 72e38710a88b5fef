"""Deep Q-learning with experience replay and a periodically synced target network."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from ..belief import BeliefParams, BeliefTracker
from ..env import Action, EnvConfig, MergeEnv, StepResult
from ..errors import ConfigError, ContractError
from ..numerics import Adam
from ..numerics.rng import Xoshiro256pp, derive_seed
from ..scripted import ScriptedController, perturb_action
from .qfunction import QParams, best_action, batch_loss, heads, select_action
from .replay import ReplayMemory, Transition

log = logging.getLogger(__name__)

METRICS_HEADER = (
    "step",
    "episode",
    "loss",
    "mean_abs_q",
    "noise_scale",
    "episode_return",
    "event",
    "eval_success_rate",
    "eval_collision_rate",
    "eval_mean_return",
)


@dataclass
class TrainConfig:
    gamma: float = 0.95
    target_sync: int = 500
    batch_size: int = 32
    episodes: int = 2000
    horizon: int | None = None  # overrides the env horizon when set
    noise_start: float = 1.0
    noise_end: float = 0.05
    noise_decay_fraction: float = 0.8
    warmup: int = 1000
    updates_per_step: int = 4  # minibatch updates after every env step
    lr: float = 1e-3
    replay_capacity: int = 100_000
    hidden: tuple[int, ...] = (64, 64)
    eps_A: float = 1e-3
    eval_every: int = 0  # episodes between periodic evaluations; 0 disables
    eval_episodes: int = 20
    demo_episodes: int = 100  # scripted episodes pushed into replay before training
    demo_noise: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.target_sync < 1 or self.batch_size < 1 or self.episodes < 1:
            raise ConfigError("target_sync, batch_size and episodes must be >= 1")
        if self.horizon is not None and self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.noise_start < 0 or self.noise_end < 0 or not 0.0 < self.noise_decay_fraction <= 1.0:
            raise ConfigError("noise schedule must be non-negative with decay fraction in (0, 1]")
        if self.updates_per_step < 1:
            raise ConfigError("updates_per_step must be >= 1")
        if self.warmup < 0 or self.lr <= 0 or self.replay_capacity < self.batch_size:
            raise ConfigError("invalid warmup, lr or replay capacity")
        if self.eval_every < 0 or self.eval_episodes < 1:
            raise ConfigError("invalid periodic evaluation settings")
        if self.demo_episodes < 0 or self.demo_noise < 0:
            raise ConfigError("demo_episodes and demo_noise must be >= 0")
        if self.eps_A <= 0 or not self.hidden:
            raise ConfigError("eps_A must be positive and hidden non-empty")


def noise_scale(config: TrainConfig, episode: int) -> float:
    """Exploration noise for a 0-based episode index: linear decay, then flat."""
    progress = min(1.0, episode / (config.noise_decay_fraction * config.episodes))
    return config.noise_start + (config.noise_end - config.noise_start) * progress


class Learner:
    """Bundles the live network, its optimizer, the target network and the replay memory."""

    def __init__(self, theta: QParams, config: TrainConfig, rng: Xoshiro256pp):
        self.theta = theta
        self.theta_target = theta.copy()
        self.config = config
        self.adam = Adam(lr=config.lr)
        self.replay = ReplayMemory(config.replay_capacity, theta.state_dim)
        self.rng = rng
        self.iterations = 0
        self._tensors = theta.params()

    def ready(self) -> bool:
        return len(self.replay) >= max(self.config.batch_size, self.config.warmup)

    def train_step(self) -> tuple[float, float] | None:
        """One minibatch descent step; ``None`` while the replay is still warming up."""
        if not self.ready():
            return None
        batch = self.replay.sample(self.config.batch_size, self.rng)
        loss, grads = batch_loss(self.theta, self.theta_target, batch, self.config.gamma)
        A, B, C, _ = heads(self.theta, batch.s)
        d = B - self.theta.normalize(batch.a)
        mean_abs_q = float(np.mean(np.abs(np.sum(A * d * d, axis=-1) + C)))
        self.adam.step(self._tensors, grads)
        self.iterations += 1
        self.sync_target()
        return loss, mean_abs_q

    def sync_target(self) -> bool:
        if self.iterations % self.config.target_sync == 0:
            self.theta_target.load_from(self.theta)
            return True
        return False


def sync_target(theta: QParams, theta_target: QParams, step: int, C: int) -> QParams:
    if C < 1:
        raise ValueError("C must be >= 1")
    if step % C == 0:
        theta_target.load_from(theta)
    return theta_target


class Encoder(Protocol):
    state_dim: int

    def reset(self) -> None: ...

    def step(self, obs: np.ndarray) -> np.ndarray: ...

    def record_action(self, action: Action) -> None: ...


class Environment(Protocol):
    config: EnvConfig

    def reset(self, seed: int) -> np.ndarray: ...

    def step(self, action: Action) -> StepResult: ...


class BeliefEncoder(BeliefTracker):
    @property
    def state_dim(self) -> int:
        return self.params.hidden_size


class Controller(Protocol):
    def reset(self) -> None: ...

    def act(self, obs: np.ndarray) -> Action: ...


class QPolicy:
    """Noiseless greedy controller: belief state in, clamped argmax action out."""

    def __init__(self, theta: QParams, encoder: Encoder):
        self.theta = theta
        self.encoder = encoder

    def reset(self) -> None:
        self.encoder.reset()

    def act(self, obs: np.ndarray) -> Action:
        s = self.encoder.step(obs)
        a = best_action(self.theta, s)
        self.encoder.record_action(a)
        return a


@dataclass
class EvalResult:
    success_rate: float
    collision_rate: float
    timeout_rate: float
    offroad_rate: float
    mean_return: float
    mean_abs_accel: float
    mean_abs_steering: float
    n_episodes: int = 0
    events: list[str] = field(default_factory=list)

    def summary(self) -> dict[str, float]:
        return {
            "success_rate": self.success_rate,
            "collision_rate": self.collision_rate,
            "timeout_rate": self.timeout_rate,
            "offroad_rate": self.offroad_rate,
            "mean_return": self.mean_return,
            "mean_abs_accel": self.mean_abs_accel,
            "mean_abs_steering": self.mean_abs_steering,
        }


def evaluate(env_config: EnvConfig, controller: Controller, n_episodes: int, seed: int, env: Environment | None = None) -> EvalResult:
    """Roll ``controller`` out on seeds ``seed .. seed + n - 1``."""
    if n_episodes < 1:
        raise ContractError("n_episodes must be >= 1")
    env = env or MergeEnv(env_config)
    events, returns = [], []
    abs_accel, abs_steer, n_steps = 0.0, 0.0, 0
    for k in range(n_episodes):
        obs = env.reset(seed + k)
        controller.reset()
        total = 0.0
        while True:
            action = controller.act(obs)
            result = env.step(action)
            applied = env.config.clamp(action)
            abs_accel += abs(applied.accel)
            abs_steer += abs(applied.steering)
            n_steps += 1
            total += result.reward
            obs = result.observation
            if result.terminal:
                break
        events.append(result.event)
        returns.append(total)
    n = float(n_episodes)

    def rate(name: str) -> float:
        return sum(e == name for e in events) / n

    return EvalResult(
        success_rate=rate("merged"),
        collision_rate=rate("collision"),
        timeout_rate=rate("timeout"),
        offroad_rate=rate("off_road"),
        mean_return=float(np.mean(returns)),
        mean_abs_accel=abs_accel / n_steps,
        mean_abs_steering=abs_steer / n_steps,
        n_episodes=n_episodes,
        events=events,
    )


@dataclass
class EpisodeRecord:
    episode: int
    steps: int
    episode_return: float
    event: str
    noise_scale: float
    mean_loss: float | None


@dataclass
class TrainResult:
    theta: QParams
    episodes: list[EpisodeRecord]
    rows: list[dict[str, str]]
    learner: Learner


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def write_metrics(rows: list[dict[str, str]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_HEADER, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def push_demonstrations(replay: ReplayMemory, env: Environment, encoder: Encoder, config: TrainConfig) -> int:
    """Fill replay with noisy scripted-controller transitions; returns how many were pushed."""
    controller = ScriptedController(env.config)
    rng = Xoshiro256pp(derive_seed(config.seed, "demo-noise"))
    seed0 = derive_seed(config.seed, "demo-env") >> 1
    pushed = 0
    for k in range(config.demo_episodes):
        obs = env.reset(seed0 + k)
        encoder.reset()
        controller.reset()
        s = encoder.step(obs)
        while True:
            action = perturb_action(env.config, controller.act(obs), config.demo_noise, rng)
            result = env.step(action)
            encoder.record_action(action)
            obs = result.observation
            s_next = encoder.step(obs)
            replay.push(Transition(s, env.config.clamp(action), result.reward, s_next, result.terminal))
            pushed += 1
            s = s_next
            if result.terminal:
                break
    return pushed


def run_training(
    env_config: EnvConfig,
    belief_params: BeliefParams | None,
    config: TrainConfig,
    *,
    env: Environment | None = None,
    encoder: Encoder | None = None,
    on_train_step: Callable[[Learner], None] | None = None,
) -> TrainResult:
    """Train the Q-network online; every source of randomness derives from ``config.seed``."""
    config.validate()
    if config.horizon is not None:
        env_config = replace(env_config, horizon=config.horizon)
    if env is None:
        env = MergeEnv(env_config)
    if encoder is None:
        if belief_params is None:
            raise ContractError("either belief params or an encoder is required")
        encoder = BeliefEncoder(belief_params)
    bounds = env.config
    theta = QParams.init(
        Xoshiro256pp(derive_seed(config.seed, "q-init")),
        encoder.state_dim,
        tuple(config.hidden),
        bounds.accel_bounds,
        bounds.steering_bounds,
        config.eps_A,
    )
    learner = Learner(theta, config, Xoshiro256pp(derive_seed(config.seed, "replay")))
    if config.demo_episodes:
        if not isinstance(env, MergeEnv):
            raise ContractError("demonstrations need the merge simulator")
        push_demonstrations(learner.replay, env, encoder, config)
    noise_rng = Xoshiro256pp(derive_seed(config.seed, "noise"))
    env_seed0 = derive_seed(config.seed, "train-env") >> 1
    eval_seed0 = derive_seed(config.seed, "eval-env") >> 1

    rows: list[dict[str, str]] = []
    records: list[EpisodeRecord] = []
    step = 0
    for episode in range(config.episodes):
        sigma = noise_scale(config, episode)
        obs = env.reset(env_seed0 + episode)
        encoder.reset()
        s = encoder.step(obs)
        total, losses, n_ep_steps = 0.0, [], 0
        while True:
            action = select_action(theta, s, sigma, noise_rng)
            result = env.step(action)
            encoder.record_action(action)
            s_next = encoder.step(result.observation)
            learner.replay.push(Transition(s, env.config.clamp(action), result.reward, s_next, result.terminal))
            out = None
            for _ in range(config.updates_per_step):
                upd = learner.train_step()
                if upd is None:
                    break
                out = upd
                losses.append(upd[0])
                if on_train_step is not None:
                    on_train_step(learner)
            step += 1
            n_ep_steps += 1
            total += result.reward
            rows.append(
                {
                    "step": str(step),
                    "episode": str(episode + 1),
                    "loss": _fmt(out[0] if out else None),
                    "mean_abs_q": _fmt(out[1] if out else None),
                    "noise_scale": _fmt(sigma),
                    "episode_return": _fmt(total) if result.terminal else "",
                    "event": result.event,
                    "eval_success_rate": "",
                    "eval_collision_rate": "",
                    "eval_mean_return": "",
                }
            )
            s = s_next
            if result.terminal:
                break
        records.append(
            EpisodeRecord(episode + 1, n_ep_steps, total, result.event, sigma, float(np.mean(losses)) if losses else None)
        )
        if config.eval_every and (episode + 1) % config.eval_every == 0 and isinstance(env, MergeEnv):
            ev_encoder = BeliefEncoder(belief_params) if belief_params is not None else encoder
            ev = evaluate(env.config, QPolicy(theta, ev_encoder), config.eval_episodes, eval_seed0)
            rows[-1]["eval_success_rate"] = _fmt(ev.success_rate)
            rows[-1]["eval_collision_rate"] = _fmt(ev.collision_rate)
            rows[-1]["eval_mean_return"] = _fmt(ev.mean_return)
            log.info("episode %d eval success %.2f collision %.2f return %.2f", episode + 1, ev.success_rate, ev.collision_rate, ev.mean_return)
        if (episode + 1) % 100 == 0:
            recent = records[-100:]
            log.info(
                "episode %d noise %.3f mean return %.2f merged %.2f",
                episode + 1,
                sigma,
                float(np.mean([r.episode_return for r in recent])),
                float(np.mean([r.event == "merged" for r in recent])),
            )
    return TrainResult(theta, records, rows, learner)
