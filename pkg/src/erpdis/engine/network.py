"""DeepConvNet-style classifier with hand-written forward and backward passes.

Topology, for ``block_filters = [F1, F2, ...]``::

    block 1   temporal conv (F1 kernels of length k, shared across channels)
              -> spatial conv (F1 x F1 x n_channels, collapses channels)
    block i   temporal conv F(i-1) -> F(i), kernel k
    each      [batch norm] -> ELU -> max-pool(pool) -> dropout
    head      [global max over time] -> dense -> softmax over 2 classes

Temporal convolutions are zero-padded to keep the length ("same"), so a
block maps length L to ``L // pool``.

Block 1 is linear up to the normalisation, so it is evaluated as a single
convolution with the effective kernel ``W[o, c, j] = sum_f S[o, f, c] T[f, j]``
and the gradient is pushed back through that product.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import NumericalError, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class NetworkSpec:
    n_channels: int
    input_len: int
    block_filters: tuple[int, ...] = (8, 16, 32, 64)
    temporal_kernel: int = 10
    pool: int = 3
    dropout_p: float = 0.5
    n_classes: int = 2
    batch_norm: bool = True
    global_pool: bool = False

    def __post_init__(self):
        object.__setattr__(self, "block_filters", tuple(int(f) for f in self.block_filters))
        if not self.block_filters:
            raise ShapeError("block_filters must be non-empty")
        if self.n_classes != 2:
            raise ShapeError("only binary classification is supported (n_classes=2)")
        if self.n_channels < 1 or self.temporal_kernel < 1 or self.pool < 1:
            raise ShapeError("n_channels, temporal_kernel and pool must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ShapeError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        lengths = self.pooled_lengths()
        if min(lengths) < 1:
            raise ShapeError(
                f"input_len {self.input_len} shrinks to zero after pooling: block lengths {lengths}"
            )

    def pooled_lengths(self) -> list[int]:
        out, length = [], self.input_len
        for _ in self.block_filters:
            length //= self.pool
            out.append(length)
        return out

    @property
    def dense_inputs(self) -> int:
        if self.global_pool:
            return self.block_filters[-1]
        return self.block_filters[-1] * self.pooled_lengths()[-1]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["block_filters"] = list(self.block_filters)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**d)

    def replace(self, **changes) -> "NetworkSpec":
        return dataclasses.replace(self, **changes)


def param_shapes(spec: NetworkSpec) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape map for every tensor of ``spec``."""
    k, filters = spec.temporal_kernel, spec.block_filters
    shapes: dict[str, tuple[int, ...]] = {}
    for i, f in enumerate(filters, start=1):
        if i == 1:
            shapes["block1.temporal.weight"] = (f, k)
            shapes["block1.spatial.weight"] = (f, f, spec.n_channels)
            conv = "block1.spatial"
        else:
            conv = f"block{i}.conv"
            shapes[f"{conv}.weight"] = (f, filters[i - 2], k)
        if spec.batch_norm:
            for part in ("weight", "bias", "running_mean", "running_var"):
                shapes[f"block{i}.bn.{part}"] = (f,)
        else:
            shapes[f"{conv}.bias"] = (f,)
    shapes["dense.weight"] = (spec.n_classes, spec.dense_inputs)
    shapes["dense.bias"] = (spec.n_classes,)
    return shapes


def is_buffer(name: str) -> bool:
    """Running statistics: stored with the parameters but never trained."""
    return name.endswith(".running_mean") or name.endswith(".running_var")


def init_params(spec: NetworkSpec, rng: np.random.Generator, dtype=np.float32) -> Params:
    """Fan-in scaled uniform weights, zero biases, unit/zero normalisation."""
    params: Params = {}
    for name, shape in param_shapes(spec).items():
        if name.endswith("running_var") or name.endswith("bn.weight"):
            value = np.ones(shape)
        elif name.endswith("running_mean") or name.endswith(".bias"):
            value = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in) if not name.startswith("dense") else 1.0 / np.sqrt(fan_in)
            value = rng.uniform(-bound, bound, size=shape)
        params[name] = value.astype(dtype)
    return params


def check_params(params: Params, spec: NetworkSpec) -> None:
    expected = param_shapes(spec)
    if list(params) != list(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ShapeError(f"parameter names do not match spec (missing {missing}, unexpected {extra})")
    for name, shape in expected.items():
        if tuple(params[name].shape) != shape:
            raise ShapeError(f"{name}: expected shape {shape}, got {tuple(params[name].shape)}")


# -- layer primitives -------------------------------------------------------

def _pad_same(x: np.ndarray, k: int) -> np.ndarray:
    left = (k - 1) // 2
    return np.pad(x, ((0, 0), (0, 0), (left, k - 1 - left)))


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(B, Cin, T) -> (B*T, Cin*k) patches of the same-padded input."""
    b, c, t = x.shape
    patches = np.lib.stride_tricks.sliding_window_view(_pad_same(x, k), k, axis=2)[:, :, :t, :]
    return patches.transpose(0, 2, 1, 3).reshape(b * t, c * k)


def conv_forward(x: np.ndarray, w: np.ndarray, cols: Optional[np.ndarray] = None) -> np.ndarray:
    """Same-padded 1-D cross-correlation. x: (B, Cin, T), w: (Cout, Cin, k)."""
    b, _, t = x.shape
    if cols is None:
        cols = _im2col(x, w.shape[2])
    out = cols @ w.reshape(w.shape[0], -1).T
    return out.reshape(b, t, -1).transpose(0, 2, 1)


def conv_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray, cols: Optional[np.ndarray] = None,
                  need_dx: bool = True) -> tuple[Optional[np.ndarray], np.ndarray]:
    b, c, t = x.shape
    cout, _, k = w.shape
    if cols is None:
        cols = _im2col(x, k)
    d2 = dout.transpose(0, 2, 1).reshape(b * t, cout)
    dw = (d2.T @ cols).reshape(w.shape)
    if not need_dx:
        return None, dw
    dcols = (d2 @ w.reshape(cout, -1)).reshape(b, t, c, k)
    dxp = np.zeros((b, t + k - 1, c), dtype=dout.dtype)
    for j in range(k):
        dxp[:, j:j + t, :] += dcols[:, :, :, j]
    left = (k - 1) // 2
    return dxp[:, left:left + t, :].transpose(0, 2, 1), dw


def elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def maxpool_forward(x: np.ndarray, pool: int) -> tuple[np.ndarray, np.ndarray]:
    b, c, t = x.shape
    n = t // pool
    grouped = x[:, :, : n * pool].reshape(b, c, n, pool)
    idx = grouped.argmax(axis=3)
    return np.take_along_axis(grouped, idx[..., None], axis=3)[..., 0], idx


def maxpool_backward(dout: np.ndarray, idx: np.ndarray, t: int, pool: int) -> np.ndarray:
    b, c, n = dout.shape
    grouped = np.zeros((b, c, n, pool), dtype=dout.dtype)
    np.put_along_axis(grouped, idx[..., None], dout[..., None], axis=3)
    dx = np.zeros((b, c, t), dtype=dout.dtype)
    dx[:, :, : n * pool] = grouped.reshape(b, c, n * pool)
    return dx


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# -- network ----------------------------------------------------------------

def _block1_kernel(params: Params) -> np.ndarray:
    temporal = params["block1.temporal.weight"]
    spatial = params["block1.spatial.weight"]
    return np.einsum("ofc,fj->ocj", spatial, temporal)


def forward(params: Params, spec: NetworkSpec, batch: np.ndarray, mode: str = "eval",
            rng: Optional[np.random.Generator] = None):
    """Class probabilities for a ``(B, n_channels, input_len)`` batch.

    In ``"eval"`` mode returns the ``(B, 2)`` probabilities; dropout is off
    and batch norm uses the running statistics, so the output is a pure
    function of its inputs. In ``"train"`` mode returns ``(probs, cache)``,
    where the cache holds the activations needed by :func:`backward` and the
    updated running statistics under ``cache["running"]``. ``rng`` drives
    the dropout masks and is required in train mode when ``dropout_p > 0``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    dtype = params["dense.weight"].dtype
    x = np.asarray(batch, dtype=dtype)
    if x.ndim != 3 or x.shape[1:] != (spec.n_channels, spec.input_len):
        raise ShapeError(
            f"block1: expected input (B, {spec.n_channels}, {spec.input_len}), got {x.shape}"
        )
    if train and spec.dropout_p > 0 and rng is None:
        raise ValueError("train mode with dropout needs an rng")

    layers, running = [], {}
    h = x
    for i, _ in enumerate(spec.block_filters, start=1):
        if i == 1:
            w = _block1_kernel(params)
            conv_name = "block1.spatial"
        else:
            conv_name = f"block{i}.conv"
            w = params[f"{conv_name}.weight"]
        cols = _im2col(h, spec.temporal_kernel)
        layer = {"input": h, "cols": cols}
        z = conv_forward(h, w, cols)
        if spec.batch_norm:
            gamma = params[f"block{i}.bn.weight"][None, :, None]
            beta = params[f"block{i}.bn.bias"][None, :, None]
            if train:
                mean = z.mean(axis=(0, 2))
                var = z.var(axis=(0, 2))
                count = z.shape[0] * z.shape[2]
                unbiased = var * count / max(count - 1, 1)
                running[f"block{i}.bn.running_mean"] = (
                    (1 - BN_MOMENTUM) * params[f"block{i}.bn.running_mean"] + BN_MOMENTUM * mean
                ).astype(dtype)
                running[f"block{i}.bn.running_var"] = (
                    (1 - BN_MOMENTUM) * params[f"block{i}.bn.running_var"] + BN_MOMENTUM * unbiased
                ).astype(dtype)
            else:
                mean = params[f"block{i}.bn.running_mean"]
                var = params[f"block{i}.bn.running_var"]
            inv_std = (1.0 / np.sqrt(var + BN_EPS)).astype(dtype)
            xhat = (z - mean[None, :, None]) * inv_std[None, :, None]
            layer.update(xhat=xhat, inv_std=inv_std)
            y = gamma * xhat + beta
        else:
            y = z + params[f"{conv_name}.bias"][None, :, None]
        a = elu(y)
        pooled, idx = maxpool_forward(a, spec.pool)
        layer.update(pre_act=y, act=a, pool_idx=idx)
        if train and spec.dropout_p > 0:
            keep = (rng.random(pooled.shape) >= spec.dropout_p).astype(dtype) / dtype.type(1 - spec.dropout_p)
            pooled = pooled * keep
            layer["keep"] = keep
        layers.append(layer)
        h = pooled

    pooled_shape = h.shape
    top = None
    if spec.global_pool:
        top = h.argmax(axis=2)
        flat = np.take_along_axis(h, top[..., None], axis=2)[..., 0]
    else:
        flat = h.reshape(h.shape[0], -1)
    logits = flat @ params["dense.weight"].T + params["dense.bias"]
    probs = softmax(logits)
    if not train:
        return probs
    return probs, {"layers": layers, "flat": flat, "top": top, "pooled_shape": pooled_shape, "running": running}


def backward(params: Params, spec: NetworkSpec, cache: dict, dlogits: np.ndarray) -> Params:
    """Gradients of every parameter given dL/dlogits; buffers get zeros."""
    grads: Params = {name: np.zeros_like(v) for name, v in params.items()}
    grads["dense.weight"] = dlogits.T @ cache["flat"]
    grads["dense.bias"] = dlogits.sum(axis=0)
    dflat = dlogits @ params["dense.weight"]
    if spec.global_pool:
        dh = np.zeros(cache["pooled_shape"], dtype=dflat.dtype)
        np.put_along_axis(dh, cache["top"][..., None], dflat[..., None], axis=2)
    else:
        dh = dflat.reshape(cache["pooled_shape"])

    for i in range(len(spec.block_filters), 0, -1):
        layer = cache["layers"][i - 1]
        if "keep" in layer:
            dh = dh * layer["keep"]
        da = maxpool_backward(dh, layer["pool_idx"], layer["act"].shape[2], spec.pool)
        dy = da * np.where(layer["pre_act"] > 0, 1.0, layer["act"] + 1.0).astype(da.dtype)
        conv_name = "block1.spatial" if i == 1 else f"block{i}.conv"
        if spec.batch_norm:
            xhat, inv_std = layer["xhat"], layer["inv_std"]
            gamma = params[f"block{i}.bn.weight"]
            grads[f"block{i}.bn.weight"] = (dy * xhat).sum(axis=(0, 2))
            grads[f"block{i}.bn.bias"] = dy.sum(axis=(0, 2))
            dxhat = dy * gamma[None, :, None]
            n = dy.shape[0] * dy.shape[2]
            dz = (inv_std[None, :, None] / n) * (
                n * dxhat
                - dxhat.sum(axis=(0, 2))[None, :, None]
                - xhat * (dxhat * xhat).sum(axis=(0, 2))[None, :, None]
            )
        else:
            grads[f"{conv_name}.bias"] = dy.sum(axis=(0, 2))
            dz = dy
        if i == 1:
            _, dw = conv_backward(dz, layer["input"], _block1_kernel(params), layer["cols"], need_dx=False)
            grads["block1.temporal.weight"] = np.einsum("ocj,ofc->fj", dw, params["block1.spatial.weight"])
            grads["block1.spatial.weight"] = np.einsum("ocj,fj->ofc", dw, params["block1.temporal.weight"])
        else:
            dh, dw = conv_backward(dz, layer["input"], params[f"{conv_name}.weight"], layer["cols"])
            grads[f"{conv_name}.weight"] = dw
    return grads


def _forward_backward(params, spec, batch, labels, class_weights, rng):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.shape[0] != np.shape(batch)[0]:
        raise ShapeError(f"labels shape {labels.shape} does not match batch of {np.shape(batch)[0]}")
    if np.any((labels != 0) & (labels != 1)):
        raise ValueError("labels must be 0 or 1")
    probs, cache = forward(params, spec, batch, mode="train", rng=rng)
    n = labels.shape[0]
    dtype = probs.dtype
    weights = np.ones(2, dtype=dtype) if class_weights is None else np.asarray(class_weights, dtype=dtype)
    w = weights[labels]
    with np.errstate(divide="ignore"):
        nll = -np.log(probs[np.arange(n), labels])
    per_example = w * nll
    bad = np.flatnonzero(~np.isfinite(per_example))
    if bad.size:
        raise NumericalError(f"non-finite loss at batch index {int(bad[0])}")
    loss = float(per_example.mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits *= (w / n)[:, None]
    grads = backward(params, spec, cache, dlogits)
    return loss, grads, cache["running"]


def loss_and_grads(params: Params, spec: NetworkSpec, batch: np.ndarray, labels,
                   class_weights=None, rng: Optional[np.random.Generator] = None) -> tuple[float, Params]:
    """Class-weighted cross-entropy ``mean_i(-w[y_i] log p_i[y_i])`` and its gradient.

    Runs in train mode (batch statistics, dropout if ``rng`` is given and
    ``dropout_p > 0``). The gradient map mirrors ``params`` key for key;
    running-statistics entries are zero.
    """
    if rng is None and spec.dropout_p > 0:
        spec = spec.replace(dropout_p=0.0)
    loss, grads, _ = _forward_backward(params, spec, batch, labels, class_weights, rng)
    return loss, grads
