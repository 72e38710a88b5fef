"""Three-vehicle on-ramp merge simulator.

Geometry: a straight corridor. The mainline lane is centred on lateral offset
``y = 0`` and a parallel acceleration (ramp) lane is centred on ``y = -w``;
the acceleration lane exists for stations ``[merge_point, merge_point +
accel_lane_length]``. A lane's "left" marking is the one at the lower
lateral offset, so ``l_m`` grows as the vehicle moves towards the mainline.

The merging vehicle follows a kinematic bicycle model. The gap lag and gap
front vehicles drive straight down the mainline centre and only ever change
speed according to the configured behaviour mode.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, NamedTuple

import numpy as np

from .errors import ConfigError, ContractError
from .numerics.rng import Xoshiro256pp

BEHAVIOR_MODES = ("cooperative", "neutral", "adversarial")
EVENTS = ("running", "merged", "collision", "off_road", "timeout")
OBS_FIELDS = ("v_m", "p_m", "phi_m", "l_m", "r_m", "v_f", "p_f", "v_l", "p_l")
OBS_DIM = len(OBS_FIELDS)
V_M, P_M, PHI_M, L_M, R_M, V_F, P_F, V_L, P_L = range(OBS_DIM)
TRAJECTORY_HEADER = ("t",) + OBS_FIELDS + ("accel", "steering", "reward", "terminal", "event")


class Action(NamedTuple):
    accel: float
    steering: float


@dataclass
class RewardWeights:
    r1: float = -0.05  # per (m/s^2)^2
    r2: float = -5.0  # per rad^2
    r3: float = -10.0
    r4: float = -1.0
    d_safe: float = 10.0
    merged_bonus: float = 10.0
    collision_bonus: float = -100.0
    off_road_bonus: float = -20.0
    timeout_bonus: float = -20.0

    def validate(self) -> None:
        if max(self.r1, self.r2, self.r3, self.r4) > 0:
            raise ConfigError("reward weights r1..r4 must be <= 0")
        if self.d_safe <= 0:
            raise ConfigError("d_safe must be positive")

    def bonus(self, event: str) -> float:
        return {
            "running": 0.0,
            "merged": self.merged_bonus,
            "collision": self.collision_bonus,
            "off_road": self.off_road_bonus,
            "timeout": self.timeout_bonus,
        }[event]


@dataclass
class EnvConfig:
    dt: float = 0.1
    lane_width: float = 3.7
    accel_lane_length: float = 200.0
    merge_point_station: float = 0.0
    wheelbase: float = 2.8
    vehicle_length: float = 4.5
    vehicle_width: float = 1.8
    accel_bounds: tuple[float, float] = (-4.5, 3.0)
    steering_bounds: tuple[float, float] = (-0.262, 0.262)
    v_max: float = 35.0
    v_free: float = 25.0
    behavior_mode: str = "cooperative"
    horizon: int = 300
    reward: RewardWeights = field(default_factory=RewardWeights)
    # reset sampling ranges; stations are relative to the merge point
    ramp_station_range: tuple[float, float] = (-30.0, -10.0)
    ramp_speed_range: tuple[float, float] = (15.0, 20.0)
    gap_range: tuple[float, float] = (25.0, 45.0)
    gap_position_range: tuple[float, float] = (0.5, 0.8)  # merging car's fraction of the way from lag to front
    mainline_speed_range: tuple[float, float] = (20.0, 27.0)
    # mainline behaviour rules
    cooperative_decel: float = -1.5
    adversarial_accel: float = 1.0

    def validate(self) -> None:
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        for name in ("lane_width", "accel_lane_length", "wheelbase", "vehicle_length", "vehicle_width", "v_max", "v_free"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in (
            "accel_bounds",
            "steering_bounds",
            "ramp_station_range",
            "ramp_speed_range",
            "gap_range",
            "gap_position_range",
            "mainline_speed_range",
        ):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigError(f"{name} must be ordered (low <= high)")
        if self.accel_bounds[0] >= self.accel_bounds[1] or self.steering_bounds[0] >= self.steering_bounds[1]:
            raise ConfigError("action bounds must have positive width")
        if self.behavior_mode not in BEHAVIOR_MODES:
            raise ConfigError(f"behavior_mode must be one of {BEHAVIOR_MODES}")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if not (0.0 < self.gap_position_range[0] and self.gap_position_range[1] < 1.0):
            raise ConfigError("gap_position_range must lie inside (0, 1)")
        if self.ramp_speed_range[0] < 0 or self.mainline_speed_range[0] < 0:
            raise ConfigError("speeds must be non-negative")
        self.reward.validate()

    def clamp(self, action: Action) -> Action:
        a_lo, a_hi = self.accel_bounds
        s_lo, s_hi = self.steering_bounds
        return Action(min(max(float(action[0]), a_lo), a_hi), min(max(float(action[1]), s_lo), s_hi))


@dataclass
class WorldState:
    p_m: float
    y: float
    phi: float
    v_m: float
    p_l: float
    v_l: float
    p_f: float
    v_f: float
    t: int = 0


class StepResult(NamedTuple):
    observation: np.ndarray
    reward: float
    terminal: bool
    event: str


def lateral_overlap(state: WorldState, config: EnvConfig) -> bool:
    # mainline vehicles share the merging vehicle's width and sit on y = 0
    return abs(state.y) < config.vehicle_width


def min_gap(state: WorldState, config: EnvConfig) -> float:
    """Smallest bumper-to-bumper gap to the lag or front vehicle.

    Only vehicles the merging car overlaps laterally count; without lateral
    overlap the safe distance ``d_safe`` is returned. Negative values mean
    the bodies overlap longitudinally.
    """
    if not lateral_overlap(state, config):
        return config.reward.d_safe
    L = config.vehicle_length
    return min(abs(state.p_f - state.p_m) - L, abs(state.p_l - state.p_m) - L)


def termination(state: WorldState, config: EnvConfig) -> str:
    w = config.lane_width
    gap = min_gap(state, config)
    if lateral_overlap(state, config) and gap < 0.0:
        return "collision"
    past_lane_end = state.p_m > config.merge_point_station + config.accel_lane_length
    if (past_lane_end and state.y < -w / 2) or abs(state.y) > 1.5 * w or abs(state.phi) > 0.5:
        return "off_road"
    if abs(state.y) <= 0.3 and abs(state.phi) <= 0.05 and gap >= 2.0:
        return "merged"
    if state.t >= config.horizon:
        return "timeout"
    return "running"


def observe(state: WorldState, config: EnvConfig) -> np.ndarray:
    w = config.lane_width
    lane_center = -w if state.y <= -w / 2 else 0.0
    l_m = state.y - (lane_center - w / 2)
    r_m = w - l_m
    origin = config.merge_point_station
    return np.array(
        [
            state.v_m,
            state.p_m - origin,
            state.phi,
            l_m,
            r_m,
            state.v_f,
            state.p_f - origin,
            state.v_l,
            state.p_l - origin,
        ]
    )


def compute_reward(obs: np.ndarray, action: Action, weights: RewardWeights, config: EnvConfig, gap: float) -> float:
    """Per-step penalty (always <= 0) for a clamped action.

    ``gap`` is :func:`min_gap` of the state the observation was taken in.
    """
    proximity = max(0.0, 1.0 - gap / weights.d_safe)
    shortfall = max(0.0, config.v_free - float(obs[V_M])) / config.v_free
    return (
        weights.r1 * action.accel**2
        + weights.r2 * action.steering**2
        + weights.r3 * proximity**2
        + weights.r4 * shortfall**2
    )


class MergeEnv:
    """Single-owner simulator handle; create one per concurrent rollout."""

    def __init__(self, config: EnvConfig):
        config.validate()
        self.config = config
        self.state: WorldState | None = None
        self.event = "running"

    def reset(self, seed: int) -> np.ndarray:
        cfg = self.config
        rng = Xoshiro256pp(seed)
        origin = cfg.merge_point_station
        p_m = origin + rng.uniform(*cfg.ramp_station_range)
        v_m = rng.uniform(*cfg.ramp_speed_range)
        gap = rng.uniform(*cfg.gap_range)
        frac = rng.uniform(*cfg.gap_position_range)
        p_l = p_m - frac * gap
        # lag never outruns front, so the gap opens rather than collapses
        v_a = rng.uniform(*cfg.mainline_speed_range)
        v_b = rng.uniform(*cfg.mainline_speed_range)
        self.state = WorldState(
            p_m=p_m,
            y=-cfg.lane_width,
            phi=0.0,
            v_m=v_m,
            p_l=p_l,
            v_l=min(v_a, v_b),
            p_f=p_l + gap,
            v_f=max(v_a, v_b),
        )
        self.event = "running"
        return observe(self.state, cfg)

    def step(self, action: Action) -> StepResult:
        if self.state is None:
            raise ContractError("reset() must be called before step()")
        if self.event != "running":
            raise ContractError(f"episode already ended with {self.event!r}")
        cfg = self.config
        s = self.state
        dt = cfg.dt
        a = cfg.clamp(action)

        v = min(max(s.v_m + a.accel * dt, 0.0), cfg.v_max)
        s.phi = s.phi + (v / cfg.wheelbase) * math.tan(a.steering) * dt
        s.p_m = s.p_m + v * math.cos(s.phi) * dt
        s.y = s.y + v * math.sin(s.phi) * dt
        s.v_m = v

        mode = cfg.behavior_mode
        if mode == "cooperative":
            if min_gap(s, cfg) < cfg.reward.d_safe:
                s.v_l = max(s.v_l + cfg.cooperative_decel * dt, 0.0)
        elif mode == "adversarial":
            if s.y > -0.75 * cfg.lane_width:
                s.v_l = min(s.v_l + cfg.adversarial_accel * dt, cfg.v_max)
        s.p_l = s.p_l + s.v_l * dt
        s.p_f = s.p_f + s.v_f * dt
        s.t += 1

        event = termination(s, cfg)
        obs = observe(s, cfg)
        reward = compute_reward(obs, a, cfg.reward, cfg, min_gap(s, cfg)) + cfg.reward.bonus(event)
        self.event = event
        return StepResult(obs, reward, event != "running", event)


def env_reset(config: EnvConfig, seed: int) -> tuple[MergeEnv, np.ndarray]:
    env = MergeEnv(config)
    return env, env.reset(seed)


def env_step(env: MergeEnv, action: Action) -> StepResult:
    return env.step(action)


def with_mode(config: EnvConfig, mode: str) -> EnvConfig:
    return replace(config, behavior_mode=mode)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


class TrajectoryWriter:
    """Writes one CSV row per executed step, including the terminal one."""

    def __init__(self, stream: IO[str]):
        self._w = csv.writer(stream, lineterminator="\n")
        self._w.writerow(TRAJECTORY_HEADER)

    def write(self, t: int, obs: np.ndarray, action: Action, reward: float, terminal: bool, event: str) -> None:
        self._w.writerow(
            [t, *(_fmt(float(x)) for x in obs), _fmt(action.accel), _fmt(action.steering), _fmt(reward), int(terminal), event]
        )


def read_trajectory(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
