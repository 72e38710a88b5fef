from .bandit import BanditEnv, ConstantEncoder
from .qfunction import (
    QParams,
    batch_loss,
    best_action,
    best_action_normalized,
    heads,
    max_q,
    q_loss_from_targets,
    q_value,
    quadratic_q,
    select_action,
    target_value,
    target_values,
)
from .replay import ReplayMemory, Transition, TransitionBatch, replay_push, replay_sample
from .training import (
    METRICS_HEADER,
    BeliefEncoder,
    EvalResult,
    Learner,
    QPolicy,
    TrainConfig,
    TrainResult,
    evaluate,
    noise_scale,
    run_training,
    sync_target,
    write_metrics,
)
