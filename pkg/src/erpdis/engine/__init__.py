"""From-scratch numpy network, optimizer and training loop."""

from .gradcheck import TOY_SPEC, GradCheckResult, grad_check
from .network import NetworkSpec, Params, forward, init_params, loss_and_grads, param_shapes
from .optim import adamw_step, cosine_lr, init_moments
from .training import TrainConfig, TrainResult, predict_proba, train
from .weights import load_weights, save_weights

__all__ = [
    "GradCheckResult",
    "NetworkSpec",
    "Params",
    "TOY_SPEC",
    "TrainConfig",
    "TrainResult",
    "adamw_step",
    "cosine_lr",
    "forward",
    "grad_check",
    "init_moments",
    "init_params",
    "load_weights",
    "loss_and_grads",
    "param_shapes",
    "predict_proba",
    "save_weights",
    "train",
]
