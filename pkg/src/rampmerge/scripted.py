"""Scripted gap-acceptance merge controller and the synthetic trajectory corpus.

The controller sees only observations, so it tracks which lane it is in by
watching for the jump in ``l_m`` that happens when the vehicle crosses the
marking between the ramp and the mainline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import (
    BEHAVIOR_MODES,
    L_M,
    OBS_DIM,
    P_F,
    P_L,
    P_M,
    PHI_M,
    V_F,
    V_L,
    V_M,
    Action,
    EnvConfig,
    MergeEnv,
    with_mode,
)
from .errors import ConfigError, ContractError, DatasetParseError
from .numerics.rng import Xoshiro256pp, derive_seed


@dataclass
class ScriptedPolicyParams:
    gap_min: float = 15.0
    k_v: float = 0.5
    k_y: float = 0.05
    k_phi: float = 0.6
    engage_margin: float = 5.0

    def validate(self) -> None:
        for name in ("gap_min", "k_v", "k_y", "k_phi", "engage_margin"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"scripted.{name} must be positive")


@dataclass
class PhaseState:
    engaged: bool = False
    on_mainline: bool = False
    prev_l: float | None = None


def estimate_lateral(obs: np.ndarray, phase: PhaseState, lane_width: float) -> float:
    """Update the lane estimate from ``obs`` and return the lateral offset."""
    l = float(obs[L_M])
    if phase.prev_l is not None:
        if l - phase.prev_l < -lane_width / 2:
            phase.on_mainline = True
        elif l - phase.prev_l > lane_width / 2:
            phase.on_mainline = False
    phase.prev_l = l
    center = 0.0 if phase.on_mainline else -lane_width
    return l + center - lane_width / 2


def scripted_policy(obs: np.ndarray, params: ScriptedPolicyParams, phase: PhaseState, config: EnvConfig) -> Action:
    """Speed-match the gap and steer to the ramp centre until the gap is accepted, then to the mainline centre."""
    w = config.lane_width
    L = config.vehicle_length
    y = estimate_lateral(obs, phase, w)
    if not phase.engaged:
        gap = obs[P_F] - obs[P_L] - L
        lag_room = obs[P_M] - obs[P_L] - L
        front_room = obs[P_F] - obs[P_M] - L
        on_accel_lane = obs[P_M] >= 0.0
        if on_accel_lane and gap >= params.gap_min and min(lag_room, front_room) >= params.engage_margin:
            phase.engaged = True
    v_target = 0.5 * (obs[V_L] + obs[V_F])
    accel = params.k_v * (v_target - obs[V_M])
    target_y = 0.0 if phase.engaged else -w
    steering = -params.k_y * (y - target_y) - params.k_phi * obs[PHI_M]
    return config.clamp(Action(float(accel), float(steering)))


class ScriptedController:
    """Stateful wrapper with the ``reset``/``act`` interface used by rollouts."""

    def __init__(self, config: EnvConfig, params: ScriptedPolicyParams | None = None):
        self.config = config
        self.params = params or ScriptedPolicyParams()
        self.phase = PhaseState()

    def reset(self) -> None:
        self.phase = PhaseState()

    def act(self, obs: np.ndarray) -> Action:
        return scripted_policy(obs, self.params, self.phase, self.config)

    def observe_action(self, action: Action) -> None:
        pass


@dataclass
class Episode:
    observations: np.ndarray  # (n, 9); observation before each action
    actions: np.ndarray  # (n, 2)
    event: str
    mode: str = ""

    def __len__(self) -> int:
        return self.observations.shape[0]


@dataclass
class TrajectoryDataset:
    episodes: list[Episode] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def n_steps(self) -> int:
        return sum(len(e) for e in self.episodes)

    def success_rate(self) -> float:
        if not self.episodes:
            return 0.0
        return sum(e.event == "merged" for e in self.episodes) / len(self.episodes)


def perturb_action(config: EnvConfig, action: Action, noise: float, rng: Xoshiro256pp) -> Action:
    """Add Gaussian noise with std = ``noise`` times each half-range, then clamp."""
    if noise <= 0:
        return action
    half_a = (config.accel_bounds[1] - config.accel_bounds[0]) / 2
    half_s = (config.steering_bounds[1] - config.steering_bounds[0]) / 2
    return config.clamp(Action(action.accel + noise * half_a * rng.normal(), action.steering + noise * half_s * rng.normal()))


def run_scripted_episode(config: EnvConfig, params: ScriptedPolicyParams, seed: int, action_noise: float = 0.0) -> Episode:
    """Roll out one episode; ``action_noise`` adds Gaussian noise with std = that fraction of each half-range."""
    env = MergeEnv(config)
    obs = env.reset(seed)
    controller = ScriptedController(config, params)
    rng = Xoshiro256pp(derive_seed(seed, "scripted-noise"))
    observations, actions = [], []
    while True:
        action = perturb_action(config, controller.act(obs), action_noise, rng)
        observations.append(obs)
        actions.append(action)
        result = env.step(action)
        obs = result.observation
        if result.terminal:
            break
    return Episode(np.array(observations), np.array(actions, dtype=np.float64), result.event, config.behavior_mode)


def generate_dataset(
    config: EnvConfig,
    n_episodes: int,
    seed: int,
    params: ScriptedPolicyParams | None = None,
    modes: tuple[str, ...] = BEHAVIOR_MODES,
    action_noise: float = 0.0,
) -> TrajectoryDataset:
    """Roll out the scripted controller on seeds ``seed .. seed + n - 1``, cycling behaviour modes."""
    if n_episodes < 1:
        raise ContractError("n_episodes must be >= 1")
    if action_noise < 0:
        raise ConfigError("action_noise must be >= 0")
    params = params or ScriptedPolicyParams()
    configs = [with_mode(config, m) for m in modes]
    episodes = [
        run_scripted_episode(configs[k % len(configs)], params, seed + k, action_noise) for k in range(n_episodes)
    ]
    return TrajectoryDataset(episodes)


def dataset_write(ds: TrajectoryDataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ep in ds.episodes:
            steps = [[float(x) for x in o] + [float(x) for x in a] for o, a in zip(ep.observations, ep.actions)]
            record = {"event": ep.event, "mode": ep.mode, "steps": steps}
            fh.write(json.dumps(record, allow_nan=False, separators=(",", ":")) + "\n")


def dataset_read(path: str | Path) -> TrajectoryDataset:
    """Parse a JSON Lines dataset; a bad line raises :class:`DatasetParseError`."""
    episodes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                steps = np.asarray(record["steps"], dtype=np.float64)
                event = str(record["event"])
                mode = str(record.get("mode", ""))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetParseError(f"malformed episode record ({exc})", lineno) from exc
            if steps.ndim != 2 or steps.shape[1] != OBS_DIM + 2 or steps.shape[0] < 1:
                raise DatasetParseError(f"steps must be rows of {OBS_DIM + 2} numbers", lineno)
            if not np.all(np.isfinite(steps)):
                raise DatasetParseError("non-finite value", lineno)
            obs = np.ascontiguousarray(steps[:, :OBS_DIM])
            act = np.ascontiguousarray(steps[:, OBS_DIM:])
            episodes.append(Episode(obs, act, event, mode))
    return TrajectoryDataset(episodes)
