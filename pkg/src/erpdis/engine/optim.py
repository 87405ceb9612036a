"""AdamW with decoupled weight decay, and a cosine learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from ..errors import NumericalError
from .network import Params, is_buffer

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def decays(name: str) -> bool:
    """Only conv/dense weights decay; biases and normalisation terms do not."""
    return name.endswith(".weight") and ".bn." not in name


def init_moments(params: Params) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    return {
        name: (np.zeros_like(v), np.zeros_like(v))
        for name, v in params.items()
        if not is_buffer(name)
    }


def adamw_step(params: Params, grads: Params, moments, step_t: int, lr_t: float, weight_decay: float,
               beta1: float = BETA1, beta2: float = BETA2, eps: float = EPS):
    """One AdamW update; ``step_t`` counts from 1.

    Decay is applied as ``w <- w - lr_t * weight_decay * w`` before, and
    independently of, the bias-corrected Adam step. Running statistics pass
    through untouched. Returns ``(new_params, new_moments)``.
    """
    if step_t < 1:
        raise ValueError(f"step_t counts from 1, got {step_t}")
    bc1 = 1.0 - beta1 ** step_t
    bc2 = 1.0 - beta2 ** step_t
    new_params, new_moments = {}, {}
    for name, w in params.items():
        if is_buffer(name):
            new_params[name] = w
            continue
        g = grads[name]
        m, v = moments[name]
        dtype = w.dtype.type
        m = dtype(beta1) * m + dtype(1 - beta1) * g
        v = dtype(beta2) * v + dtype(1 - beta2) * g * g
        w_new = w * dtype(1 - lr_t * weight_decay) if decays(name) else w
        w_new = w_new - dtype(lr_t) * (m / dtype(bc1)) / (np.sqrt(v / dtype(bc2)) + dtype(eps))
        if not np.all(np.isfinite(w_new)):
            raise NumericalError(f"non-finite update for {name} at step {step_t}")
        new_params[name] = w_new.astype(w.dtype, copy=False)
        new_moments[name] = (m, v)
    return new_params, new_moments


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Cosine annealing from ``base_lr`` at step 0 down to 0 at ``total_steps``."""
    if total_steps < 1 or not 0 <= step <= total_steps:
        raise ValueError(f"need 0 <= step <= total_steps and total_steps >= 1, got {step}/{total_steps}")
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / total_steps))
