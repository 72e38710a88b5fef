import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rampmerge.env import (
    BEHAVIOR_MODES,
    L_M,
    OBS_FIELDS,
    P_M,
    PHI_M,
    R_M,
    TRAJECTORY_HEADER,
    V_M,
    Action,
    EnvConfig,
    MergeEnv,
    RewardWeights,
    TrajectoryWriter,
    WorldState,
    compute_reward,
    env_reset,
    env_step,
    min_gap,
    observe,
    read_trajectory,
    termination,
    with_mode,
)
from rampmerge.errors import ConfigError, ContractError
from rampmerge.numerics import Xoshiro256pp

CFG = EnvConfig()
W = CFG.lane_width


def _state(**kw) -> WorldState:
    base = dict(p_m=50.0, y=-W, phi=0.0, v_m=20.0, p_l=20.0, v_l=20.0, p_f=90.0, v_f=20.0, t=0)
    base.update(kw)
    return WorldState(**base)


def _env_with(state: WorldState, config: EnvConfig = CFG) -> MergeEnv:
    env = MergeEnv(config)
    env.reset(0)
    env.state = state
    return env


def _random_action(rng: Xoshiro256pp, config: EnvConfig = CFG) -> Action:
    return Action(rng.uniform(*config.accel_bounds), rng.uniform(*config.steering_bounds))


# --- kinematics -------------------------------------------------------------


def test_straight_line_step():
    env = _env_with(_state())
    env.step(Action(0.0, 0.0))
    s = env.state
    assert s.p_m == 52.0 and s.y == -W and s.phi == 0.0 and s.v_m == 20.0


def test_accelerating_step_applies_speed_first():
    env = _env_with(_state())
    env.step(Action(2.0, 0.0))
    assert abs(env.state.v_m - 20.2) < 1e-12
    assert abs(env.state.p_m - 52.02) < 1e-12


def test_steering_step_hand_values():
    env = _env_with(_state())
    env.step(Action(0.0, 0.1))
    phi = 20.0 * math.tan(0.1) / 2.8 * 0.1
    assert abs(env.state.phi - phi) < 1e-15
    assert abs(env.state.phi - 0.071668) < 1e-6
    assert abs(env.state.y - (-W + 20.0 * math.sin(phi) * 0.1)) < 1e-15
    assert abs((env.state.y + W) - 0.14321) < 1e-5


def test_actions_are_clamped_and_speed_non_negative():
    env = _env_with(_state(v_m=0.2))
    res = env.step(Action(-100.0, 5.0))
    assert env.state.v_m == 0.0
    assert env.state.phi == 0.0  # zero speed, no yaw change
    assert res.reward <= 0.0


# --- reward -----------------------------------------------------------------


def _obs(v_m: float = 25.0) -> np.ndarray:
    o = np.zeros(len(OBS_FIELDS))
    o[V_M] = v_m
    return o


def test_ideal_cruise_reward_is_zero():
    assert compute_reward(_obs(), Action(0.0, 0.0), CFG.reward, CFG, CFG.reward.d_safe) == 0.0


def test_accel_penalty():
    assert abs(compute_reward(_obs(), Action(2.0, 0.0), CFG.reward, CFG, 20.0) - (-0.2)) < 1e-15


def test_standstill_penalty():
    assert compute_reward(_obs(0.0), Action(0.0, 0.0), CFG.reward, CFG, 20.0) == -1.0


def test_proximity_penalty_and_nonpositive():
    r = compute_reward(_obs(), Action(0.0, 0.0), CFG.reward, CFG, 5.0)
    assert abs(r - (-10.0 * 0.25)) < 1e-12


@settings(max_examples=200, deadline=None)
@given(
    st.floats(0, 35),
    st.floats(-4.5, 3.0),
    st.floats(-0.262, 0.262),
    st.floats(-20, 40),
)
def test_reward_never_positive(v, a, s, gap):
    assert compute_reward(_obs(v), Action(a, s), CFG.reward, CFG, gap) <= 0.0


def test_reward_weight_validation():
    with pytest.raises(ConfigError):
        RewardWeights(r1=0.5).validate()
    with pytest.raises(ConfigError):
        RewardWeights(d_safe=0.0).validate()


def test_bonus_table():
    w = RewardWeights()
    assert (w.bonus("merged"), w.bonus("collision"), w.bonus("off_road"), w.bonus("timeout")) == (10, -100, -20, -20)
    assert w.bonus("running") == 0.0


# --- gaps and termination ---------------------------------------------------


def test_min_gap_examples():
    assert abs(min_gap(_state(y=0.0, p_m=50.0, p_f=60.0, p_l=0.0), CFG) - 5.5) < 1e-12
    assert min_gap(_state(y=0.0, p_m=50.0, p_f=50.0, p_l=0.0), CFG) < 0
    assert min_gap(_state(y=-W, p_m=50.0, p_f=50.0, p_l=0.0), CFG) == CFG.reward.d_safe


def test_termination_examples():
    assert termination(_state(y=0.0, phi=0.0, p_f=62.5, p_l=37.5), CFG) == "merged"
    assert termination(_state(y=-W, p_m=CFG.accel_lane_length + 1.0), CFG) == "off_road"
    ok_merge_but_overlap = _state(y=0.0, phi=0.0, p_f=52.0)
    assert termination(ok_merge_but_overlap, CFG) == "collision"
    assert termination(_state(phi=0.6), CFG) == "off_road"
    assert termination(_state(y=-1.6 * W), CFG) == "off_road"
    assert termination(_state(t=CFG.horizon), CFG) == "timeout"
    assert termination(_state(), CFG) == "running"


def _rectangles_overlap(s: WorldState, config: EnvConfig) -> bool:
    """Axis-aligned boxes centred on each vehicle's reference point."""
    L, Wv = config.vehicle_length, config.vehicle_width

    def box(p, y):
        return (p - L / 2, p + L / 2, y - Wv / 2, y + Wv / 2)

    me = box(s.p_m, s.y)
    for other in (box(s.p_l, 0.0), box(s.p_f, 0.0)):
        if me[0] < other[1] and other[0] < me[1] and me[2] < other[3] and other[2] < me[3]:
            return True
    return False


def test_collision_matches_rectangle_oracle():
    rng = Xoshiro256pp(99)
    hits = 0
    for _ in range(1000):
        p_m = rng.uniform(0, 100)
        s = _state(
            p_m=p_m,
            y=rng.uniform(-1.2 * W, 1.2 * W),
            phi=rng.uniform(-0.4, 0.4),
            p_l=p_m - rng.uniform(-2, 15),
            p_f=p_m + rng.uniform(-2, 15),
        )
        oracle = _rectangles_overlap(s, CFG)
        hits += oracle
        assert (termination(s, CFG) == "collision") == oracle
        assert (min_gap(s, CFG) < 0) == oracle
    assert 50 < hits < 950  # both outcomes exercised


# --- observation ------------------------------------------------------------


@pytest.mark.parametrize("y,l,r", [(-W, 1.85, 1.85), (0.0, 1.85, 1.85), (-W / 4, 0.925, 2.775)])
def test_lane_marking_distances(y, l, r):
    o = observe(_state(y=y), CFG)
    assert abs(o[L_M] - l) < 1e-12 and abs(o[R_M] - r) < 1e-12


def test_observation_fields_and_origin():
    cfg = EnvConfig(merge_point_station=100.0)
    o = observe(_state(p_m=130.0, phi=0.1), cfg)
    assert o[P_M] == 30.0 and o[PHI_M] == 0.1 and o[V_M] == 20.0


# --- episodes ---------------------------------------------------------------


def test_reset_is_deterministic_and_within_ranges():
    a, b = MergeEnv(CFG), MergeEnv(CFG)
    np.testing.assert_array_equal(a.reset(5), b.reset(5))
    for seed in range(200):
        a.reset(seed)
        s = a.state
        assert s.y == -W and s.phi == 0.0
        assert -30 <= s.p_m <= -10 and 15 <= s.v_m <= 20
        assert 25 <= s.p_f - s.p_l <= 45 and s.p_l < s.p_m < s.p_f
        assert 20 <= s.v_l <= s.v_f <= 27


def test_step_after_terminal_raises():
    env = _env_with(_state(phi=0.6))
    assert env.step(Action(0.0, 0.0)).event == "off_road"
    with pytest.raises(ContractError):
        env.step(Action(0.0, 0.0))
    with pytest.raises(ContractError):
        MergeEnv(CFG).step(Action(0.0, 0.0))


def _random_rollout(config: EnvConfig, seed: int):
    env, obs = env_reset(config, seed)
    rng = Xoshiro256pp(seed + 7)
    rows = [(obs, None)]
    while True:
        res = env_step(env, _random_action(rng, config))
        rows.append((res.observation, res))
        if res.terminal:
            return rows, env


def test_identical_inputs_give_identical_trajectories():
    a, _ = _random_rollout(CFG, 11)
    b, _ = _random_rollout(CFG, 11)
    assert len(a) == len(b)
    for (oa, ra), (ob, rb) in zip(a, b):
        assert oa.tobytes() == ob.tobytes()
        assert ra == rb if ra is None else (ra.reward == rb.reward and ra.event == rb.event)


def test_exactly_one_terminal_event_and_lane_sum_invariant():
    for seed in range(200):
        rows, env = _random_rollout(with_mode(CFG, BEHAVIOR_MODES[seed % 3]), seed)
        events = [r.event for _, r in rows[1:]]
        assert events[-1] != "running" and all(e == "running" for e in events[:-1])
        for o, _ in rows:
            assert abs(o[L_M] + o[R_M] - W) <= 1e-12
            assert o[V_M] >= 0


def _drive(config: EnvConfig, seed: int, policy):
    env = MergeEnv(config)
    env.reset(seed)
    trace = []
    while env.event == "running":
        before = (env.state.v_l, env.state.v_f, min_gap(env.state, config), env.state.y)
        env.step(policy(env.state))
        trace.append((before, (env.state.v_l, env.state.v_f, min_gap(env.state, config), env.state.y)))
    return trace


def _swerve(state: WorldState) -> Action:
    # steer towards the mainline, then hold heading roughly level
    return Action(1.0, 0.15 if state.phi < 0.15 and state.y < -0.8 else -0.2 if state.phi > 0 else 0.0)


def test_neutral_mainline_speeds_constant():
    for seed in range(30):
        trace = _drive(with_mode(CFG, "neutral"), seed, _swerve)
        for (vl0, vf0, *_), (vl1, vf1, *_) in trace:
            assert vl1 == vl0 and vf1 == vf0


def test_cooperative_lag_yields_in_close_quarters():
    decelerated = 0
    for seed in range(30):
        for (vl0, _, _, _), (vl1, _, gap1, _) in _drive(with_mode(CFG, "cooperative"), seed, _swerve):
            if gap1 < CFG.reward.d_safe:
                assert vl1 <= vl0
                decelerated += vl1 < vl0
    assert decelerated > 0


def test_adversarial_lag_speeds_up_once_merging_starts():
    accelerated = 0
    for seed in range(30):
        for (vl0, _, _, _), (vl1, _, _, y1) in _drive(with_mode(CFG, "adversarial"), seed, _swerve):
            if y1 > -0.75 * W:
                assert vl1 >= vl0
                accelerated += vl1 > vl0
            else:
                assert vl1 == vl0
    assert accelerated > 0


def test_config_validation():
    with pytest.raises(ConfigError):
        EnvConfig(dt=0.0).validate()
    with pytest.raises(ConfigError):
        EnvConfig(behavior_mode="aggressive").validate()
    with pytest.raises(ConfigError):
        EnvConfig(accel_bounds=(3.0, -4.5)).validate()
    with pytest.raises(ConfigError):
        EnvConfig(gap_position_range=(0.0, 0.5)).validate()
    with pytest.raises(ConfigError):
        MergeEnv(EnvConfig(horizon=0))


def test_trajectory_csv_round_trip(tmp_path):
    env, obs = env_reset(CFG, 3)
    path = tmp_path / "traj.csv"
    with open(path, "w", newline="") as fh:
        writer = TrajectoryWriter(fh)
        res = env.step(Action(0.5, 0.01))
        writer.write(env.state.t, res.observation, Action(0.5, 0.01), res.reward, res.terminal, res.event)
    rows = read_trajectory(path)
    assert tuple(rows[0].keys()) == TRAJECTORY_HEADER
    assert float(rows[0]["p_m"]) == res.observation[P_M]
    assert float(rows[0]["reward"]) == res.reward
    header = io.StringIO()
    TrajectoryWriter(header)
    assert header.getvalue().strip() == ",".join(TRAJECTORY_HEADER)
