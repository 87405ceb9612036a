"""Mini-batch training loop."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..errors import ConfigError, EmptyTrainingSetError
from .network import NetworkSpec, Params, _forward_backward, forward, init_params
from .optim import adamw_step, cosine_lr, init_moments

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    base_lr: float = 0.001
    weight_decay: float = 0.01
    batch_size: int = 16
    seed: int = 0
    class_weighting: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.base_lr > 0 or self.weight_decay < 0:
            raise ConfigError(f"invalid training config {self}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        if set(d) - known:
            raise ConfigError(f"unknown train config keys: {sorted(set(d) - known)}")
        return cls(**d)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


class TrainResult(NamedTuple):
    params: Params
    loss_trace: list[float]


def class_weights_for(labels: np.ndarray, enabled: bool = True) -> np.ndarray:
    """``n_total / (2 * n_c)`` per class; all ones if disabled or one class is absent."""
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=2)[:2]
    if not enabled or np.any(counts == 0):
        if enabled:
            log.info("single-class training set; falling back to unweighted loss")
        return np.ones(2)
    return counts.sum() / (2.0 * counts)


def train(spec: NetworkSpec, inputs: np.ndarray, labels, config: TrainConfig = TrainConfig(),
          init: Params | None = None) -> TrainResult:
    """Train from a seeded initialisation.

    The learning rate follows :func:`cosine_lr`, stepped once per optimizer
    update over ``epochs * ceil(n / batch_size)`` updates. Output is a pure
    function of ``(spec, inputs, labels, config)`` on a single thread.
    """
    inputs = np.asarray(inputs, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    n = inputs.shape[0] if inputs.ndim else 0
    if n == 0:
        raise EmptyTrainingSetError("cannot train on an empty set")
    if labels.shape != (n,):
        raise ConfigError(f"{n} inputs but labels have shape {labels.shape}")

    init_seq, shuffle_seq, dropout_seq = np.random.SeedSequence(config.seed).spawn(3)
    params = init if init is not None else init_params(spec, np.random.default_rng(init_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)
    weights = class_weights_for(labels, config.class_weighting)

    moments = init_moments(params)
    per_epoch = -(-n // config.batch_size)
    total = config.epochs * per_epoch
    step = 0
    trace = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        running_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads, running = _forward_backward(
                params, spec, inputs[idx], labels[idx], weights, dropout_rng
            )
            lr = cosine_lr(config.base_lr, step, total)
            step += 1
            params, moments = adamw_step(params, grads, moments, step, lr, config.weight_decay)
            params.update(running)
            running_loss += loss * len(idx)
        trace.append(running_loss / n)
        log.debug("epoch %d/%d loss %.4f", epoch + 1, config.epochs, trace[-1])
    return TrainResult(params, trace)


def predict_proba(params: Params, spec: NetworkSpec, inputs: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Target-class probability for each input, evaluated in fixed-size chunks."""
    inputs = np.asarray(inputs, dtype=np.float32)
    out = [forward(params, spec, inputs[i:i + batch_size])[:, 1] for i in range(0, inputs.shape[0], batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.float32)
