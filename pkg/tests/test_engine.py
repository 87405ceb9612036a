import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from erpdis.engine import (
    TOY_SPEC,
    NetworkSpec,
    TrainConfig,
    adamw_step,
    cosine_lr,
    forward,
    grad_check,
    init_moments,
    init_params,
    load_weights,
    loss_and_grads,
    param_shapes,
    predict_proba,
    save_weights,
    train,
)
from erpdis.engine.training import class_weights_for
from erpdis.engine.weights import decode_weights, encode_weights
from erpdis.errors import BadMagicError, DecodeError, EmptyTrainingSetError, NumericalError, ShapeError


def reference_forward(params, spec, x, batch_stats=False):
    """Loop-based forward pass with dropout off, written without im2col."""
    k = spec.temporal_kernel
    left = (k - 1) // 2
    h = np.asarray(x, dtype=np.float64)
    for i, f_out in enumerate(spec.block_filters, start=1):
        b, c, t = h.shape
        padded = np.zeros((b, c, t + k - 1))
        padded[:, :, left:left + t] = h
        z = np.zeros((b, f_out, t))
        if i == 1:
            tw = params["block1.temporal.weight"].astype(np.float64)
            sw = params["block1.spatial.weight"].astype(np.float64)
            # temporal filter per electrode, then mix filters x electrodes
            u = np.zeros((b, f_out, c, t))
            for f in range(f_out):
                for j in range(k):
                    u[:, f] += tw[f, j] * padded[:, :, j:j + t]
            for o in range(f_out):
                for f in range(f_out):
                    for ch in range(c):
                        z[:, o] += sw[o, f, ch] * u[:, f, ch]
            conv = "block1.spatial"
        else:
            w = params[f"block{i}.conv.weight"].astype(np.float64)
            for o in range(f_out):
                for ci in range(c):
                    for j in range(k):
                        z[:, o] += w[o, ci, j] * padded[:, ci, j:j + t]
            conv = f"block{i}.conv"
        if spec.batch_norm:
            if batch_stats:
                mean, var = z.mean(axis=(0, 2)), z.var(axis=(0, 2))
            else:
                mean = params[f"block{i}.bn.running_mean"].astype(np.float64)
                var = params[f"block{i}.bn.running_var"].astype(np.float64)
            z = (z - mean[None, :, None]) / np.sqrt(var[None, :, None] + 1e-5)
            z = z * params[f"block{i}.bn.weight"][None, :, None] + params[f"block{i}.bn.bias"][None, :, None]
        else:
            z = z + params[f"{conv}.bias"][None, :, None]
        a = np.where(z > 0, z, np.exp(np.minimum(z, 0)) - 1)
        n = t // spec.pool
        h = np.stack([a[:, :, p * spec.pool:(p + 1) * spec.pool].max(axis=2) for p in range(n)], axis=2)
    flat = h.max(axis=2) if spec.global_pool else h.reshape(h.shape[0], -1)
    logits = flat @ params["dense.weight"].T.astype(np.float64) + params["dense.bias"]
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def perturbed_params(spec, seed):
    rng = np.random.default_rng(seed)
    params = init_params(spec, rng, dtype=np.float64)
    for name in params:
        if "running_var" in name:
            params[name] = rng.uniform(0.5, 2.0, params[name].shape)
        elif name.endswith("bias") or "running_mean" in name or "bn.weight" in name:
            params[name] = params[name] + rng.uniform(-0.5, 0.5, params[name].shape)
    return params


SPECS = [
    TOY_SPEC,
    TOY_SPEC.replace(batch_norm=False),
    NetworkSpec(3, 40, (4, 3, 2), temporal_kernel=5, pool=2, dropout_p=0.0),
    NetworkSpec(3, 40, (4, 3), temporal_kernel=4, pool=3, dropout_p=0.0, global_pool=True),
]


class TestNetworkSpec:
    def test_toy_shapes(self):
        assert TOY_SPEC.pooled_lengths() == [10, 3]
        assert TOY_SPEC.dense_inputs == 6

    def test_too_short(self):
        with pytest.raises(ShapeError):
            NetworkSpec(2, 8, (2, 2))

    def test_param_names(self):
        names = list(param_shapes(TOY_SPEC))
        assert names[:2] == ["block1.temporal.weight", "block1.spatial.weight"]
        assert "block2.bn.running_var" in names and names[-1] == "dense.bias"
        no_bn = param_shapes(TOY_SPEC.replace(batch_norm=False))
        assert "block1.spatial.bias" in no_bn and not any("bn" in n for n in no_bn)

    def test_dict_round_trip(self):
        spec = NetworkSpec(32, 250, (16, 32), global_pool=True)
        assert NetworkSpec.from_dict(spec.to_dict()) == spec


class TestForward:
    @pytest.mark.parametrize("spec", SPECS, ids=["toy", "toy-nobn", "three-block", "global"])
    def test_matches_reference_eval(self, spec):
        params = perturbed_params(spec, 1)
        x = np.random.default_rng(2).standard_normal((5, spec.n_channels, spec.input_len))
        np.testing.assert_allclose(forward(params, spec, x), reference_forward(params, spec, x), atol=1e-10)

    @pytest.mark.parametrize("spec", SPECS, ids=["toy", "toy-nobn", "three-block", "global"])
    def test_matches_reference_train(self, spec):
        params = perturbed_params(spec, 3)
        x = np.random.default_rng(4).standard_normal((5, spec.n_channels, spec.input_len))
        probs, _ = forward(params, spec, x, mode="train")
        np.testing.assert_allclose(probs, reference_forward(params, spec, x, batch_stats=True), atol=1e-10)

    def test_output_shape_single(self):
        params = init_params(TOY_SPEC, np.random.default_rng(0))
        out = forward(params, TOY_SPEC, np.zeros((1, 2, 30)))
        assert out.shape == (1, 2)

    def test_zero_head_is_uniform(self):
        params = init_params(TOY_SPEC, np.random.default_rng(0))
        params["dense.weight"][:] = 0
        out = forward(params, TOY_SPEC, np.random.default_rng(1).standard_normal((3, 2, 30)))
        np.testing.assert_array_equal(out, 0.5)

    def test_wrong_shape_names_layer(self):
        params = init_params(TOY_SPEC, np.random.default_rng(0))
        with pytest.raises(ShapeError, match="block1"):
            forward(params, TOY_SPEC, np.zeros((1, 3, 30)))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.01, 100.0), b=st.integers(1, 6))
    def test_probabilities(self, seed, scale, b):
        rng = np.random.default_rng(seed)
        params = init_params(TOY_SPEC, rng)
        x = rng.standard_normal((b, 2, 30)) * scale
        out = forward(params, TOY_SPEC, x)
        assert np.all((out >= 0) & (out <= 1))
        np.testing.assert_allclose(out.sum(axis=1), 1.0, rtol=1e-6)
        np.testing.assert_array_equal(out, forward(params, TOY_SPEC, x))

    def test_running_stats_update(self):
        params = init_params(TOY_SPEC, np.random.default_rng(0), dtype=np.float64)
        x = np.random.default_rng(1).standard_normal((4, 2, 30)) * 3 + 1
        _, cache = forward(params, TOY_SPEC, x, mode="train")
        running = cache["running"]
        assert set(running) == {f"block{i}.bn.running_{s}" for i in (1, 2) for s in ("mean", "var")}
        assert not np.allclose(running["block1.bn.running_mean"], 0.0)


class TestLoss:
    def test_uniform_prediction(self):
        params = init_params(TOY_SPEC, np.random.default_rng(0), dtype=np.float64)
        params["dense.weight"][:] = 0
        loss, _ = loss_and_grads(params, TOY_SPEC, np.zeros((4, 2, 30)), [0, 1, 0, 1])
        assert loss == pytest.approx(math.log(2), abs=1e-12)

    def test_confident_correct(self):
        params = init_params(TOY_SPEC, np.random.default_rng(0), dtype=np.float64)
        params["dense.weight"][:] = 0
        params["dense.bias"][:] = [-30.0, 30.0]
        loss, _ = loss_and_grads(params, TOY_SPEC, np.zeros((2, 2, 30)), [1, 1])
        assert loss < 1e-12

    def test_non_finite(self):
        # without batch norm a bad example cannot contaminate the others
        spec = TOY_SPEC.replace(batch_norm=False)
        params = init_params(spec, np.random.default_rng(0), dtype=np.float64)
        x = np.zeros((3, 2, 30))
        x[1, 0, 5] = np.nan
        with pytest.raises(NumericalError, match="batch index 1"):
            loss_and_grads(params, spec, x, [0, 1, 0])

    def test_class_weights(self):
        np.testing.assert_allclose(class_weights_for(np.array([0, 0, 0, 1])), [4 / 6, 2.0])
        np.testing.assert_array_equal(class_weights_for(np.array([1, 1, 1])), [1.0, 1.0])
        np.testing.assert_array_equal(class_weights_for(np.array([0, 1, 1]), enabled=False), [1.0, 1.0])


class TestGradCheck:
    @pytest.mark.parametrize("bn", [True, False])
    def test_passes(self, bn):
        result = grad_check(TOY_SPEC.replace(batch_norm=bn))
        assert result.passed(1e-3), result

    def test_catches_wrong_gradient(self):
        def broken(params, spec, x, y, w):
            loss, grads = loss_and_grads(params, spec, x, y, w)
            grads["dense.bias"] = grads["dense.bias"] * 0.9
            return loss, grads

        result = grad_check(TOY_SPEC, grad_fn=broken)
        assert not result.passed(1e-3)
        assert result.worst_param == "dense.bias"

    def test_global_pool_variant(self):
        spec = TOY_SPEC.replace(global_pool=True)
        assert grad_check(spec, seed=1).passed(1e-3)


class TestOptimizer:
    def test_pure_decay(self):
        params = {"dense.weight": np.array([2.0, -1.0]), "dense.bias": np.array([1.0])}
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        new, _ = adamw_step(params, grads, init_moments(params), 1, 0.001, 0.01)
        np.testing.assert_allclose(new["dense.weight"], params["dense.weight"] * (1 - 1e-5), rtol=0, atol=1e-15)
        np.testing.assert_array_equal(new["dense.bias"], params["dense.bias"])

    def test_no_decay_no_grad(self):
        params = {"dense.weight": np.array([2.0, -1.0])}
        new, _ = adamw_step(params, {"dense.weight": np.zeros(2)}, init_moments(params), 1, 0.001, 0.0)
        np.testing.assert_array_equal(new["dense.weight"], params["dense.weight"])

    def test_norm_params_exempt(self):
        params = {"block1.bn.weight": np.ones(3), "block1.bn.bias": np.zeros(3) + 0.2}
        grads = {k: np.zeros(3) for k in params}
        new, _ = adamw_step(params, grads, init_moments(params), 1, 0.1, 0.5)
        for k in params:
            np.testing.assert_array_equal(new[k], params[k])

    def test_constant_gradient_step_size(self):
        params = {"w": np.array([0.0])}
        moments = init_moments(params)
        for t in range(1, 201):
            before = params["w"].copy()
            params, moments = adamw_step(params, {"w": np.array([3.0])}, moments, t, 0.01, 0.0)
        assert abs(before - params["w"])[0] == pytest.approx(0.01, rel=1e-6)

    def test_non_finite(self):
        params = {"dense.weight": np.array([1.0])}
        with pytest.raises(NumericalError), np.errstate(invalid="ignore"):
            adamw_step(params, {"dense.weight": np.array([np.inf])}, init_moments(params), 1, 0.01, 0.0)

    @pytest.mark.parametrize("step, expected", [(0, 0.001), (50, 0.0005), (100, 0.0)])
    def test_cosine(self, step, expected):
        assert cosine_lr(0.001, step, 100) == pytest.approx(expected, abs=1e-15)

    @given(st.integers(1, 500))
    def test_cosine_monotone(self, total):
        lrs = [cosine_lr(0.001, s, total) for s in range(total + 1)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def toy_set(n=64, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2, 30)).astype(np.float32) * 0.5
    y = np.arange(n) % 2
    bump = np.exp(-0.5 * ((np.arange(30) - 15) / 3.0) ** 2)
    x[y == 1, 0] += 3.0 * bump
    return x, y


class TestTraining:
    def test_deterministic(self):
        x, y = toy_set()
        spec = TOY_SPEC.replace(dropout_p=0.3)
        cfg = TrainConfig(epochs=3, seed=11)
        a, b = train(spec, x, y, cfg), train(spec, x, y, cfg)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])
        assert a.loss_trace == b.loss_trace

    def test_learns_separable_set(self):
        x, y = toy_set(seed=1)
        spec = NetworkSpec(2, 30, (4, 4), dropout_p=0.0)
        result = train(spec, x, y, TrainConfig(epochs=20, base_lr=0.01, seed=0))
        assert all(np.isfinite(result.loss_trace))
        acc = ((predict_proba(result.params, spec, x) > 0.5) == y).mean()
        assert acc >= 0.95

    def test_params_stay_float32(self):
        x, y = toy_set(16)
        result = train(TOY_SPEC, x, y, TrainConfig(epochs=1))
        assert all(v.dtype == np.float32 for v in result.params.values())

    def test_empty(self):
        with pytest.raises(EmptyTrainingSetError):
            train(TOY_SPEC, np.zeros((0, 2, 30)), np.zeros(0, dtype=int))

    def test_single_class_trains(self):
        x, _ = toy_set(8)
        result = train(TOY_SPEC, x, np.zeros(8, dtype=int), TrainConfig(epochs=1))
        assert np.isfinite(result.loss_trace[-1])


class TestWeights:
    def test_round_trip(self, tmp_path):
        params = init_params(TOY_SPEC, np.random.default_rng(0))
        path = save_weights(tmp_path / "w.erpw", params)
        loaded = load_weights(path, TOY_SPEC)
        assert list(loaded) == list(params)
        for name in params:
            np.testing.assert_array_equal(loaded[name], params[name])

    def test_wrong_spec(self, tmp_path):
        path = save_weights(tmp_path / "w.erpw", init_params(TOY_SPEC, np.random.default_rng(0)))
        with pytest.raises(ShapeError):
            load_weights(path, TOY_SPEC.replace(block_filters=(3, 2)))

    def test_truncated_mid_tensor(self):
        blob = encode_weights(init_params(TOY_SPEC, np.random.default_rng(0)))
        with pytest.raises(DecodeError, match="truncated"):
            decode_weights(blob[: len(blob) // 2])

    def test_bad_magic(self):
        blob = encode_weights(init_params(TOY_SPEC, np.random.default_rng(0)))
        with pytest.raises(BadMagicError):
            decode_weights(b"NOPE" + blob[4:])

    def test_layout(self):
        blob = encode_weights({"a": np.array([[1.0, 2.0]], dtype=np.float32)})
        assert blob[:4] == b"ERPW"
        assert int.from_bytes(blob[4:6], "little") == 1
        assert int.from_bytes(blob[6:10], "little") == 1
        assert int.from_bytes(blob[10:12], "little") == 1 and blob[12:13] == b"a"
        assert blob[13] == 2
        assert np.frombuffer(blob[-8:], "<f4").tolist() == [1.0, 2.0]
