"""Central finite-difference check of the analytic gradients."""

from __future__ import annotations

from typing import Callable, NamedTuple, Optional

import numpy as np

from .network import NetworkSpec, Params, init_params, is_buffer, loss_and_grads

TOY_SPEC = NetworkSpec(n_channels=2, input_len=30, block_filters=(2, 2), dropout_p=0.0)


class GradCheckResult(NamedTuple):
    max_rel_error: float
    worst_param: str
    per_param: dict[str, float]

    def passed(self, tol: float = 1e-3) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def grad_check(spec: NetworkSpec = TOY_SPEC, batch_size: int = 4, eps: float = 1e-3, seed: int = 0,
               grad_fn: Optional[Callable] = None) -> GradCheckResult:
    """Compare analytic and central-difference gradients for every parameter entry.

    Runs in float64, train mode, on a random batch with both classes and
    non-uniform class weights. Dropout is disabled, since a fresh mask per
    evaluation would make the loss non-smooth. ``grad_fn`` replaces
    :func:`loss_and_grads` on the analytic side only.
    """
    rng = np.random.default_rng(seed)
    spec = spec.replace(dropout_p=0.0)
    params = init_params(spec, rng, dtype=np.float64)
    for name in params:
        if name.endswith(".bias") or name.endswith("bn.weight"):
            # move off the symmetric init so every entry gets a generic gradient
            params[name] = params[name] + rng.uniform(-0.5, 0.5, size=params[name].shape)
    x = rng.standard_normal((batch_size, spec.n_channels, spec.input_len))
    y = np.arange(batch_size) % 2
    weights = np.array([0.7, 1.3])

    _, analytic = (grad_fn or loss_and_grads)(params, spec, x, y, weights)

    per_param = {}
    for name, value in params.items():
        if is_buffer(name):
            continue
        numeric = np.zeros_like(value)
        flat = value.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            plus, _ = loss_and_grads(params, spec, x, y, weights)
            flat[i] = orig - eps
            minus, _ = loss_and_grads(params, spec, x, y, weights)
            flat[i] = orig
            num_flat[i] = (plus - minus) / (2 * eps)
        per_param[name] = float(relative_error(analytic[name], numeric).max())
    worst = max(per_param, key=per_param.get)
    return GradCheckResult(per_param[worst], worst, per_param)
