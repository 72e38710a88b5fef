"""Single-step bandit environment whose optimal Q-function is known exactly.

Reward is ``-sum_d (a_d - target_d)**2`` in normalized action units and every
episode ends after one step, so ``Q*(s, a)`` equals the reward itself and the
greedy action must converge to ``target``.
"""

from __future__ import annotations

import numpy as np

from ..env import Action, EnvConfig, StepResult


class BanditEnv:
    def __init__(self, target: Action, config: EnvConfig | None = None):
        self.config = config or EnvConfig()
        lo = np.array([self.config.accel_bounds[0], self.config.steering_bounds[0]])
        hi = np.array([self.config.accel_bounds[1], self.config.steering_bounds[1]])
        self._center = 0.5 * (lo + hi)
        self._half = 0.5 * (hi - lo)
        self.target = Action(*map(float, target))
        self._target_norm = (np.asarray(self.target) - self._center) / self._half
        self._obs = np.zeros(1)

    def reward(self, action: Action) -> float:
        a = (np.asarray(self.config.clamp(action)) - self._center) / self._half
        return -float(np.sum((a - self._target_norm) ** 2))

    def reset(self, seed: int) -> np.ndarray:
        return self._obs

    def step(self, action: Action) -> StepResult:
        return StepResult(self._obs, self.reward(action), True, "timeout")


class ConstantEncoder:
    """Maps every observation to the same fixed internal state."""

    def __init__(self, state: np.ndarray):
        self.state = np.asarray(state, dtype=np.float64)
        self.state_dim = self.state.shape[0]

    def reset(self) -> None:
        pass

    def step(self, obs: np.ndarray) -> np.ndarray:
        return self.state

    def record_action(self, action: Action) -> None:
        pass
