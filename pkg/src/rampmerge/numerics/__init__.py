from .adam import Adam, adam_step
from .checkpoint import Checkpoint, checkpoint_to_json, load_checkpoint, save_checkpoint
from .gradcheck import finite_diff_grad, max_relative_error, relative_error
from .layers import DenseLayer, Mlp, mlp_backward, mlp_forward, sigmoid, softplus
from .lstm import LstmCellParams, lstm_backward, lstm_forward, split_gate_grads
from .rng import Xoshiro256pp, derive_seed, splitmix64

__all__ = [
    "Adam",
    "Checkpoint",
    "DenseLayer",
    "LstmCellParams",
    "Mlp",
    "Xoshiro256pp",
    "adam_step",
    "checkpoint_to_json",
    "derive_seed",
    "finite_diff_grad",
    "load_checkpoint",
    "lstm_backward",
    "lstm_forward",
    "max_relative_error",
    "mlp_backward",
    "mlp_forward",
    "relative_error",
    "save_checkpoint",
    "sigmoid",
    "softplus",
    "split_gate_grads",
    "splitmix64",
]
