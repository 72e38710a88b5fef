"""Finite-difference checks of every hand-written backward pass.

Each check builds a small random instance from ``seed``, computes analytic
gradients of a scalar loss and compares them with central differences. The
result is the worst per-tensor relative error and the tensor it came from.
``corrupt=True`` perturbs one analytic gradient so callers can exercise the
failure path.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from .belief import BeliefParams, NormStats, sequence_loss
from .env import Action
from .numerics import (
    LstmCellParams,
    Mlp,
    Xoshiro256pp,
    finite_diff_grad,
    lstm_backward,
    lstm_forward,
    max_relative_error,
    mlp_backward,
    mlp_forward,
)
from .qlearn.qfunction import QParams, batch_loss
from .qlearn.replay import Transition, TransitionBatch

COMPONENTS = ("mlp", "lstm", "qloss", "belief")
FD_STEP = 1e-5


class CheckResult(NamedTuple):
    component: str
    max_rel_error: float
    tensor: str


def _corrupt(grads: dict[str, np.ndarray]) -> None:
    name = sorted(grads)[0]
    grads[name].flat[0] += 1.0 + abs(grads[name].flat[0])


def _finish(component: str, grads, numeric, corrupt: bool) -> CheckResult:
    if corrupt:
        _corrupt(grads)
    err, name = max_relative_error(grads, numeric)
    return CheckResult(component, err, name)


def check_mlp(seed: int, corrupt: bool = False) -> CheckResult:
    """Squared output of a 9 -> 16 tanh -> 1 network."""
    rng = Xoshiro256pp(seed)
    mlp = Mlp.init(rng, [9, 16, 1], ["tanh", "linear"])
    for layer in mlp.layers:
        layer.bias[...] = rng.uniform_array(-0.5, 0.5, (layer.n_out,))
    x = rng.uniform_array(-1.0, 1.0, (9,))
    y, cache = mlp_forward(mlp, x)
    grads, _ = mlp_backward(mlp, cache, 2.0 * y)
    numeric = finite_diff_grad(lambda: float(mlp_forward(mlp, x)[0][0] ** 2), mlp.params(), FD_STEP)
    return _finish("mlp", grads, numeric, corrupt)


def check_lstm(seed: int, corrupt: bool = False) -> CheckResult:
    """One cell step with a random linear read-out of ``h`` and ``c``."""
    rng = Xoshiro256pp(seed)
    X, H = 5, 4
    p = LstmCellParams.init(rng, X, H)
    p.bias[...] = rng.uniform_array(-0.5, 0.5, (4 * H,))
    x = rng.uniform_array(-1.0, 1.0, (X,))
    h0 = rng.uniform_array(-1.0, 1.0, (H,))
    c0 = rng.uniform_array(-1.0, 1.0, (H,))
    w_h = rng.uniform_array(-1.0, 1.0, (H,))
    w_c = rng.uniform_array(-1.0, 1.0, (H,))

    def loss() -> float:
        h, c, _ = lstm_forward(p, x, h0, c0)
        return float(w_h @ h + w_c @ c)

    _, _, cache = lstm_forward(p, x, h0, c0)
    g, dx, dh0, dc0 = lstm_backward(p, cache, w_h, w_c)
    grads = {"W": g["W"], "b": g["b"], "x": dx, "h_prev": dh0, "c_prev": dc0}
    numeric = finite_diff_grad(loss, {"W": p.weights, "b": p.bias, "x": x, "h_prev": h0, "c_prev": c0}, FD_STEP)
    return _finish("lstm", grads, numeric, corrupt)


def check_qloss(seed: int, corrupt: bool = False, batch: int = 8) -> CheckResult:
    """Mean squared TD error of a random batch against a separate target network."""
    rng = Xoshiro256pp(seed)
    state_dim = 8
    theta = QParams.init(rng, state_dim, (16, 16))
    target = QParams.init(rng, state_dim, (16, 16))
    for name, arr in theta.params().items():
        if name.endswith("b"):
            arr[...] = rng.uniform_array(-0.5, 0.5, arr.shape)
    lo_a, hi_a = theta.accel_bounds
    lo_s, hi_s = theta.steering_bounds
    items = [
        Transition(
            rng.uniform_array(-1.0, 1.0, (state_dim,)),
            Action(rng.uniform(lo_a, hi_a), rng.uniform(lo_s, hi_s)),
            rng.uniform(-5.0, 5.0),
            rng.uniform_array(-1.0, 1.0, (state_dim,)),
            rng.random() < 0.3,
        )
        for _ in range(batch)
    ]
    b = TransitionBatch.from_transitions(items)
    _, grads = batch_loss(theta, target, b, 0.95)
    numeric = finite_diff_grad(lambda: batch_loss(theta, target, b, 0.95)[0], theta.params(), FD_STEP)
    return _finish("qloss", grads, numeric, corrupt)


def check_belief(seed: int, corrupt: bool = False, steps: int = 8) -> CheckResult:
    """Unrolled teacher-forced prediction loss over ``steps`` steps of a 2-sequence batch."""
    rng = Xoshiro256pp(seed)
    params = BeliefParams.init(rng, hidden=6, head_width=5)
    params.norm = NormStats.identity()
    B = 2
    inputs = rng.uniform_array(-1.0, 1.0, (steps, B, 11))
    head_actions = rng.uniform_array(-1.0, 1.0, (steps, B, 2))
    targets = rng.uniform_array(-1.0, 1.0, (steps, B, 9))
    mask = np.ones((steps, B))
    mask[-1, 1] = 0.0  # one sequence ends early
    h0 = rng.uniform_array(-0.5, 0.5, (B, 6))
    c0 = rng.uniform_array(-0.5, 0.5, (B, 6))
    args = (inputs, head_actions, targets, mask, h0, c0, float(mask.sum()))
    _, grads, *_ = sequence_loss(params, *args)
    numeric = finite_diff_grad(lambda: sequence_loss(params, *args, want_grads=False)[0], params.train_params(), FD_STEP)
    return _finish("belief", grads, numeric, corrupt)


CHECKS: dict[str, Callable[..., CheckResult]] = {
    "mlp": check_mlp,
    "lstm": check_lstm,
    "qloss": check_qloss,
    "belief": check_belief,
}
