import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rampmerge.env import Action, EnvConfig
from rampmerge.errors import ConfigError, ContractError, NumericError
from rampmerge.numerics import Xoshiro256pp, finite_diff_grad, load_checkpoint, max_relative_error, save_checkpoint, softplus
from rampmerge.qlearn import (
    BanditEnv,
    ConstantEncoder,
    Learner,
    QParams,
    QPolicy,
    ReplayMemory,
    TrainConfig,
    Transition,
    TransitionBatch,
    batch_loss,
    best_action,
    evaluate,
    heads,
    max_q,
    noise_scale,
    q_value,
    replay_push,
    replay_sample,
    run_training,
    select_action,
    sync_target,
    target_value,
)
from rampmerge.qlearn.qfunction import q_loss_from_targets
from rampmerge.scripted import ScriptedController

CFG = EnvConfig()
A_LO, A_HI = CFG.accel_bounds
S_LO, S_HI = CFG.steering_bounds


def _theta(seed: int = 0, state_dim: int = 8, hidden=(16, 16)) -> QParams:
    th = QParams.init(Xoshiro256pp(seed), state_dim, hidden)
    rng = Xoshiro256pp(seed + 1)
    for name, arr in th.params().items():
        if name.endswith("b"):
            arr[...] = rng.uniform_array(-0.5, 0.5, arr.shape)
    return th


def _force_heads(th: QParams, A_raw: np.ndarray, B: np.ndarray, C: float) -> None:
    for layer in (th.head_A, th.head_B, th.head_C):
        layer.weights[...] = 0.0
    th.head_A.bias[...] = A_raw
    th.head_B.bias[...] = B
    th.head_C.bias[...] = C


def _raw_for(A: float) -> float:
    # invert A = -softplus(raw) - eps
    return float(np.log(np.expm1(-A - 1e-3)))


def _physical(th: QParams, a_norm) -> Action:
    p = th.denormalize(np.asarray(a_norm, dtype=np.float64))
    return Action(float(p[0]), float(p[1]))


# --- quadratic Q ------------------------------------------------------------


def test_maximizer_attains_C():
    th = _theta()
    _force_heads(th, np.full(2, _raw_for(-1.0)), np.array([0.5, -0.2]), 2.0)
    s = np.zeros(8)
    assert abs(q_value(th, s, _physical(th, [0.5, -0.2])) - 2.0) < 1e-12
    assert abs(q_value(th, s, _physical(th, [1.5, -0.2])) - 1.0) < 1e-12


def _reference_q(th: QParams, s: np.ndarray, action: Action) -> float:
    h = s
    for layer in th.trunk.layers:
        h = np.tanh(layer.weights @ h + layer.bias)
    raw = th.head_A.weights @ h + th.head_A.bias
    A = -np.log1p(np.exp(raw)) - th.eps_A
    B = th.head_B.weights @ h + th.head_B.bias
    C = float(th.head_C.weights[0] @ h + th.head_C.bias[0])
    lo = np.array([A_LO, S_LO])
    hi = np.array([A_HI, S_HI])
    a = (np.array(action) - (lo + hi) / 2) / ((hi - lo) / 2)
    return float(sum(A[d] * (B[d] - a[d]) ** 2 for d in range(2)) + C)


def test_q_matches_independent_evaluation():
    rng = Xoshiro256pp(4)
    for k in range(50):
        th = _theta(k)
        s = rng.uniform_array(-1, 1, (8,))
        a = Action(rng.uniform(A_LO, A_HI), rng.uniform(S_LO, S_HI))
        assert abs(q_value(th, s, a) - _reference_q(th, s, a)) <= 1e-12


def test_non_finite_state_rejected():
    with pytest.raises(NumericError):
        q_value(_theta(), np.full(8, np.nan), Action(0.0, 0.0))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(-50, 50))
def test_curvature_always_negative(seed, scale):
    th = _theta(seed % 1000)
    s = Xoshiro256pp(seed).uniform_array(-1, 1, (8,))
    th.head_A.bias[...] = scale
    A, *_ = heads(th, s)
    assert np.all(A <= -th.eps_A)


def test_best_action_inside_and_clamped():
    th = _theta()
    _force_heads(th, np.zeros(2), np.array([0.3, -0.4]), 0.0)
    a = best_action(th, np.zeros(8))
    np.testing.assert_allclose(a, _physical(th, [0.3, -0.4]), atol=1e-15)
    # B = (10, -10) physical -> normalized far outside the box
    th.head_B.bias[...] = th.normalize([10.0, -10.0])
    assert best_action(th, np.zeros(8)) == Action(3.0, -0.262)


def test_best_action_beats_grid():
    rng = Xoshiro256pp(77)
    grid = np.linspace(-1.0, 1.0, 201)
    ga, gs = np.meshgrid(grid, grid, indexing="ij")
    for k in range(100):
        th = _theta(k)
        th.head_B.bias[...] = rng.uniform_array(-1.5, 1.5, (2,))
        s = rng.uniform_array(-1, 1, (8,))
        A, B, C, _ = heads(th, s)
        q_grid = A[0] * (B[0] - ga) ** 2 + A[1] * (B[1] - gs) ** 2 + C
        a_star = th.normalize(best_action(th, s))
        q_star = q_value(th, s, best_action(th, s))
        assert q_star >= q_grid.max() - 1e-9
        i, j = np.unravel_index(np.argmax(q_grid), q_grid.shape)
        assert abs(grid[i] - a_star[0]) <= 0.01 + 1e-12 and abs(grid[j] - a_star[1]) <= 0.01 + 1e-12


def test_select_action_noise_free_and_bounded():
    th = _theta()
    s = np.zeros(8)
    assert select_action(th, s, 0.0, Xoshiro256pp(0)) == best_action(th, s)
    rng = Xoshiro256pp(1)
    for _ in range(500):
        a = select_action(th, s, 3.0, rng)
        assert A_LO <= a.accel <= A_HI and S_LO <= a.steering <= S_HI
    with pytest.raises(ValueError):
        select_action(th, s, -0.1, rng)


def test_select_action_noise_scale_is_fraction_of_half_range():
    th = _theta()
    _force_heads(th, np.zeros(2), np.zeros(2), 0.0)
    rng = Xoshiro256pp(2)
    acts = np.array([select_action(th, np.zeros(8), 0.1, rng) for _ in range(4000)])
    half = np.array([(A_HI - A_LO) / 2, (S_HI - S_LO) / 2])
    np.testing.assert_allclose(acts.std(axis=0) / half, 0.1, rtol=0.05)


# --- targets and loss -------------------------------------------------------


def test_target_value_examples():
    th = _theta()
    s = np.zeros(8)
    assert target_value(th, -100.0, s, True, 0.95) == -100.0
    assert target_value(th, 1.5, s, False, 0.0) == 1.5
    _force_heads(th, np.zeros(2), np.zeros(2), 2.0)
    assert abs(target_value(th, 1.0, s, False, 0.9) - 2.8) < 1e-12
    with pytest.raises(ValueError):
        target_value(th, 0.0, s, False, 1.5)


def _random_batch(n: int, seed: int, state_dim: int = 8) -> TransitionBatch:
    rng = Xoshiro256pp(seed)
    items = [
        Transition(
            rng.uniform_array(-1, 1, (state_dim,)),
            Action(rng.uniform(A_LO, A_HI), rng.uniform(S_LO, S_HI)),
            rng.uniform(-5, 5),
            rng.uniform_array(-1, 1, (state_dim,)),
            rng.random() < 0.3,
        )
        for _ in range(n)
    ]
    return TransitionBatch.from_transitions(items)


def test_loss_zero_when_targets_match():
    th = _theta()
    b = _random_batch(6, 1)
    a = th.normalize(b.a)
    _, _, q = q_loss_from_targets(th, b.s, a, np.zeros(6))
    loss, grads, _ = q_loss_from_targets(th, b.s, a, q)
    assert loss == 0.0 and all(not g.any() for g in grads.values())


def test_single_transition_loss():
    th = _theta()
    b = _random_batch(1, 2)
    _, _, q = q_loss_from_targets(th, b.s, th.normalize(b.a), np.zeros(1))
    loss, _, _ = q_loss_from_targets(th, b.s, th.normalize(b.a), q + 2.0)
    assert abs(loss - 4.0) < 1e-12


def test_empty_batch_rejected():
    th = _theta()
    with pytest.raises(ContractError):
        batch_loss(th, th, _random_batch(0, 0), 0.9)


@pytest.mark.parametrize("seed", range(10))
def test_batch_gradients_match_finite_differences(seed):
    th = _theta(seed)
    target = _theta(seed + 100)
    b = _random_batch(8, seed)
    _, grads = batch_loss(th, target, b, 0.9)
    numeric = finite_diff_grad(lambda: batch_loss(th, target, b, 0.9)[0], th.params(), 1e-5)
    err, name = max_relative_error(grads, numeric)
    assert err <= 1e-6, name


def test_no_gradient_flows_into_targets():
    th, target = _theta(0), _theta(1)
    snapshot = {k: v.copy() for k, v in target.params().items()}
    batch_loss(th, target, _random_batch(8, 3), 0.9)
    for k, v in target.params().items():
        assert v.tobytes() == snapshot[k].tobytes()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_loss_non_negative(seed):
    th, target = _theta(seed % 50), _theta(seed % 50 + 1)
    loss, _ = batch_loss(th, target, _random_batch(4, seed), 0.95)
    assert loss >= 0.0


# --- replay ------------------------------------------------------------------


def _tr(k: float, dim: int = 2) -> Transition:
    return Transition(np.full(dim, k), Action(0.0, 0.0), k, np.full(dim, k + 1), False)


def test_replay_fifo_eviction():
    mem = ReplayMemory(3, 2)
    for k in range(4):
        replay_push(mem, _tr(float(k)))
    assert len(mem) == 3
    assert [mem[i].r for i in range(3)] == [1.0, 2.0, 3.0]


def test_replay_single_element_and_underflow():
    mem = ReplayMemory(5, 2)
    with pytest.raises(ContractError):
        replay_sample(mem, 1, Xoshiro256pp(0))
    replay_push(mem, _tr(7.0))
    assert replay_sample(mem, 1, Xoshiro256pp(0))[0].r == 7.0
    with pytest.raises(ContractError):
        replay_sample(mem, 2, Xoshiro256pp(0))


def test_replay_uniformity():
    mem = ReplayMemory(10, 1)
    for k in range(13):  # wraps the ring
        replay_push(mem, _tr(float(k), 1))
    rng = Xoshiro256pp(5)
    drawn = np.concatenate([replay_sample(mem, 10, rng).r for _ in range(10_000)])
    counts = np.bincount(drawn.astype(int) - 3, minlength=10)
    assert counts.sum() == 100_000
    freq = counts / 100_000
    assert np.all(np.abs(freq - 0.1) <= 0.02)
    chi2 = float(np.sum((counts - 10_000) ** 2 / 10_000))
    assert chi2 < 27.877  # 9 dof, 0.001 significance


def test_replay_sampling_is_seeded():
    mem = ReplayMemory(50, 1)
    for k in range(50):
        replay_push(mem, _tr(float(k), 1))
    a = replay_sample(mem, 20, Xoshiro256pp(3)).r
    b = replay_sample(mem, 20, Xoshiro256pp(3)).r
    np.testing.assert_array_equal(a, b)


# --- learner ---------------------------------------------------------------


def test_warmup_gate_and_first_update():
    cfg = TrainConfig(warmup=10, batch_size=4)
    th = _theta(state_dim=2)
    learner = Learner(th, cfg, Xoshiro256pp(0))
    before = {k: v.copy() for k, v in th.params().items()}
    for k in range(9):
        learner.replay.push(Transition(np.full(2, 0.1 * k), Action(1.0, 0.1), -1.0 - k, np.zeros(2), True))
        assert learner.train_step() is None
    assert all(th.params()[k].tobytes() == v.tobytes() for k, v in before.items())
    learner.replay.push(Transition(np.full(2, 0.9), Action(1.0, 0.1), -10.0, np.zeros(2), True))
    assert learner.train_step() is not None
    assert any(th.params()[k].tobytes() != v.tobytes() for k, v in before.items())


def test_overfit_frozen_batch():
    cfg = TrainConfig(warmup=0, batch_size=16, lr=3e-3)
    th = _theta(state_dim=8)
    batch = _random_batch(16, 9)
    target = th.copy()
    from rampmerge.numerics import Adam

    adam = Adam(lr=cfg.lr)
    first, _ = batch_loss(th, target, batch, 0.9)
    for _ in range(200):
        loss, grads = batch_loss(th, target, batch, 0.9)
        adam.step(th.params(), grads)
    assert loss < 0.5 * first


def test_sync_target_examples():
    th, target = _theta(0), _theta(1)
    before = {k: v.copy() for k, v in target.params().items()}
    sync_target(th, target, 499, 500)
    assert all(target.params()[k].tobytes() == v.tobytes() for k, v in before.items())
    sync_target(th, target, 500, 500)
    assert all(target.params()[k].tobytes() == v.tobytes() for k, v in th.params().items())


def test_target_constant_between_syncs_in_live_run():
    hashes = []

    def audit(learner: Learner) -> None:
        h = hashlib.sha256(b"".join(v.tobytes() for v in learner.theta_target.params().values())).hexdigest()
        hashes.append((learner.iterations, h))

    cfg = TrainConfig(episodes=1100, warmup=32, seed=3, updates_per_step=1, demo_episodes=0)
    run_training(CFG, None, cfg, env=BanditEnv(Action(1.0, 0.1)), encoder=ConstantEncoder(np.ones(4)), on_train_step=audit)
    assert hashes[-1][0] > 1000
    # within iterations k*C+1 .. k*C+C-1 the target hash never changes
    windows: dict[int, set[str]] = {}
    for it, h in hashes:
        if it % 500:
            windows.setdefault(it // 500, set()).add(h)
    assert all(len(v) == 1 for v in windows.values())
    assert len(set.union(*windows.values())) == len(windows)


def test_noise_schedule():
    cfg = TrainConfig(episodes=100)
    assert noise_scale(cfg, 0) == 1.0
    assert abs(noise_scale(cfg, 40) - (1.0 - 0.95 * 0.5)) < 1e-12
    assert noise_scale(cfg, 80) == pytest.approx(0.05) and noise_scale(cfg, 99) == pytest.approx(0.05)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(gamma=1.2).validate()
    with pytest.raises(ConfigError):
        TrainConfig(target_sync=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(updates_per_step=0).validate()


def test_demo_settings_validated():
    for bad in ({"demo_episodes": -1}, {"demo_noise": -0.1}):
        with pytest.raises(ConfigError):
            TrainConfig(**bad).validate()


@pytest.mark.parametrize("ups", [1, 3])
def test_updates_per_step_counts_iterations(ups):
    cfg = TrainConfig(episodes=60, warmup=10, batch_size=8, seed=2, updates_per_step=ups, demo_episodes=0)
    res = run_training(CFG, None, cfg, env=BanditEnv(Action(0.0, 0.0)), encoder=ConstantEncoder(np.ones(4)))
    # one env step per bandit episode; updates start once the replay holds `warmup` items
    assert res.learner.iterations == ups * (60 - 10 + 1)


# --- training loops ---------------------------------------------------------


def test_bandit_converges_to_known_optimum():
    target = Action(1.5, -0.1)
    cfg = TrainConfig(episodes=5000, warmup=100, seed=0, updates_per_step=1, demo_episodes=0)
    res = run_training(CFG, None, cfg, env=BanditEnv(target), encoder=ConstantEncoder(np.full(4, 0.5)))
    a = best_action(res.theta, np.full(4, 0.5))
    assert abs(a.accel - target.accel) <= 0.1 * (A_HI - A_LO)
    assert abs(a.steering - target.steering) <= 0.1 * (S_HI - S_LO)


def test_smoke_run_records_and_determinism(tmp_path):
    from rampmerge.belief import BeliefParams
    from rampmerge.qlearn import write_metrics

    bp = BeliefParams.init(Xoshiro256pp(0), hidden=8, head_width=8)
    cfg = TrainConfig(episodes=5, horizon=50, warmup=20, seed=1, demo_episodes=3)
    a = run_training(CFG, bp, cfg)
    b = run_training(CFG, bp, cfg)
    assert len(a.episodes) == 5
    assert all(r.steps <= 50 for r in a.episodes)
    write_metrics(a.rows, tmp_path / "a.csv")
    write_metrics(b.rows, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header.startswith("step,episode,loss,mean_abs_q,noise_scale,episode_return,event")


def test_demonstrations_fill_replay_without_metrics_rows():
    from rampmerge.belief import BeliefParams

    bp = BeliefParams.init(Xoshiro256pp(0), hidden=8, head_width=8)
    cfg = TrainConfig(episodes=2, horizon=40, warmup=10, seed=3, demo_episodes=2)
    res = run_training(CFG, bp, cfg)
    plain = run_training(CFG, bp, TrainConfig(episodes=2, horizon=40, warmup=10, seed=3, demo_episodes=0))
    env_steps = sum(r.steps for r in res.episodes)
    assert len(res.rows) == env_steps
    assert len(res.learner.replay) > env_steps
    assert len(plain.learner.replay) == sum(r.steps for r in plain.episodes)
    acts = res.learner.replay._a[: len(res.learner.replay)]
    assert np.all((acts[:, 0] >= CFG.accel_bounds[0]) & (acts[:, 0] <= CFG.accel_bounds[1]))
    with pytest.raises(ContractError):
        run_training(CFG, None, cfg, env=BanditEnv(Action(0.0, 0.0)), encoder=ConstantEncoder(np.ones(4)))


def test_checkpoint_round_trip(tmp_path):
    th = _theta(5)
    save_checkpoint(th.to_checkpoint(), tmp_path / "q.json")
    back = QParams.from_checkpoint(load_checkpoint(tmp_path / "q.json"))
    s = Xoshiro256pp(0).uniform_array(-1, 1, (8,))
    assert back.accel_bounds == th.accel_bounds and back.eps_A == th.eps_A
    assert q_value(back, s, Action(0.3, 0.01)) == q_value(th, s, Action(0.3, 0.01))


def test_evaluate_deterministic_and_scripted_cross_check():
    ctl = ScriptedController(CFG)
    one = evaluate(CFG, ctl, 1, 42).summary()
    assert one == evaluate(CFG, ctl, 1, 42).summary()
    ev = evaluate(CFG, ctl, 100, 1000)
    assert ev.success_rate >= 0.9
    total = ev.success_rate + ev.collision_rate + ev.timeout_rate + ev.offroad_rate
    assert abs(total - 1.0) < 1e-12


def test_greedy_policy_emits_bounded_actions():
    from rampmerge.belief import BeliefParams
    from rampmerge.qlearn import BeliefEncoder

    bp = BeliefParams.init(Xoshiro256pp(0), hidden=8, head_width=8)
    th = QParams.init(Xoshiro256pp(1), 8)
    th.head_B.bias[...] = np.array([10.0, -10.0])
    ev = evaluate(CFG, QPolicy(th, BeliefEncoder(bp)), 3, 0)
    assert ev.mean_abs_accel == pytest.approx(3.0) and ev.mean_abs_steering == pytest.approx(0.262)
