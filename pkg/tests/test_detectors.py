import json

import numpy as np
import pytest

from erpdis.core import Provenance, TrialSegment
from erpdis.detectors import (
    DEFAULT_NETWORK,
    DetectorModel,
    DetectorRole,
    build_training_set,
    load_bundle,
    role_spec,
    save_bundle,
    score_trial,
    score_windows,
    train_detector,
    train_detectors,
)
from erpdis.engine import TrainConfig
from erpdis.errors import ConfigError, DecodeError, EmptyTrainingSetError, RoutingError
from erpdis.segment import make_windows, segment_session

from conftest import TINY_NETWORK


def segment(transition, seed=0):
    n = 1375 if transition == 0.5 else 375
    data = np.random.default_rng(seed).standard_normal((32, n)).astype(np.float32)
    return TrialSegment(Provenance("S", 0, 0), transition, data, 250.0)


class TestRoles:
    def test_input_lengths(self):
        assert DetectorRole.Trial01.input_len(250.0) == 375
        assert DetectorRole.Trial05.input_len(250.0) == 1375
        assert DetectorRole.Onset.input_len(250.0) == 250

    def test_for_transition(self):
        assert DetectorRole.for_transition(0.1) is DetectorRole.Trial01
        assert DetectorRole.for_transition(0.5) is DetectorRole.Trial05
        with pytest.raises(RoutingError):
            DetectorRole.for_transition(0.3)

    def test_role_spec_defaults_and_overrides(self):
        spec = role_spec(DetectorRole.Onset, 32, 250.0)
        assert spec.block_filters == DEFAULT_NETWORK["block_filters"] and spec.global_pool
        wide = role_spec(DetectorRole.Onset, 32, 250.0, {"block_filters": [8, 8], "input_len": 9})
        assert wide.block_filters == (8, 8) and wide.input_len == 250

    def test_unknown_network_key(self):
        with pytest.raises(ConfigError):
            role_spec(DetectorRole.Onset, 32, 250.0, {"depth": 3})


class TestTrainingSet:
    def test_trial05(self, normal_session):
        x, y = build_training_set(DetectorRole.Trial05, [normal_session])
        assert x.shape == (8, 32, 1375) and x.dtype == np.float32

    def test_onset(self, normal_session):
        x, y = build_training_set(DetectorRole.Onset, [normal_session])
        assert x.shape == (96, 32, 250)
        assert y.sum() == 8

    def test_ai_trial01_empty(self, ai_session):
        with pytest.raises(EmptyTrainingSetError):
            build_training_set(DetectorRole.Trial01, [ai_session])


class TestScoring:
    def test_symmetric_head(self, tiny_models):
        model = tiny_models[DetectorRole.Trial05]
        params = {k: np.array(v) for k, v in model.params.items()}
        params["dense.weight"][:] = 0
        params["dense.bias"][:] = 0
        flat = DetectorModel(model.role, model.spec, params)
        assert score_trial(flat, segment(0.5)) == 0.5

    def test_score_bounds(self, tiny_models):
        for transition in (0.1, 0.5):
            s = score_trial(tiny_models[DetectorRole.for_transition(transition)], segment(transition))
            assert 0.0 <= s <= 1.0

    def test_window_scores_align(self, tiny_models):
        batch = make_windows(segment(0.5))
        scores = score_windows(tiny_models[DetectorRole.Onset], batch)
        assert len(scores) == 10

    def test_batch_split_invariance(self, tiny_models, normal_session):
        model = tiny_models[DetectorRole.Onset]
        batches = [make_windows(s) for s in segment_session(normal_session[0])]
        merged = type(batches[0])(batches[0].provenance, np.concatenate([b.windows for b in batches]),
                                  sum((b.window_start_secs for b in batches), ()), 250.0)
        together = score_windows(model, merged)
        apart = [s for b in batches for s in score_windows(model, b)]
        np.testing.assert_allclose(together, apart, rtol=0, atol=1e-6)

    @pytest.mark.parametrize("role, transition", [
        (DetectorRole.Trial05, 0.1), (DetectorRole.Trial01, 0.5), (DetectorRole.Onset, 0.5),
        (DetectorRole.Onset, 0.1),
    ])
    def test_trial_routing_errors(self, tiny_models, role, transition):
        with pytest.raises(RoutingError):
            score_trial(tiny_models[role], segment(transition))

    @pytest.mark.parametrize("role", [DetectorRole.Trial01, DetectorRole.Trial05])
    def test_window_routing_errors(self, tiny_models, role):
        with pytest.raises(RoutingError):
            score_windows(tiny_models[role], make_windows(segment(0.5)))

    def test_model_rejects_wrong_length_spec(self, tiny_models):
        onset = tiny_models[DetectorRole.Onset]
        with pytest.raises(ConfigError):
            DetectorModel(DetectorRole.Trial05, onset.spec, onset.params)

    def test_params_frozen(self, tiny_models):
        with pytest.raises(ValueError):
            tiny_models[DetectorRole.Onset].params["dense.bias"][0] = 1.0


class TestTraining:
    def test_deterministic(self, normal_session):
        cfg = TrainConfig(epochs=1, seed=5)
        a = train_detector(DetectorRole.Trial01, [normal_session], cfg, TINY_NETWORK)
        b = train_detector(DetectorRole.Trial01, [normal_session], cfg, TINY_NETWORK)
        assert a.fingerprint == b.fingerprint
        assert a.weights_sha256 == b.weights_sha256

    def test_warm_start_records_source(self, tiny_models):
        onset = tiny_models[DetectorRole.Onset]
        assert onset.fingerprint["init_from"] is None
        for role in (DetectorRole.Trial01, DetectorRole.Trial05):
            assert tiny_models[role].fingerprint["init_from"] == onset.weights_sha256

    def test_isolation(self, normal_session, tiny_models):
        onset = tiny_models[DetectorRole.Onset]
        before = onset.weights_sha256
        train_detector(DetectorRole.Trial05, [normal_session], TrainConfig(epochs=1), TINY_NETWORK, init_from=onset)
        assert onset.weights_sha256 == before

    def test_dense_head_falls_back_to_scratch(self, normal_session):
        network = {"block_filters": (2, 2), "global_pool": False}
        models = train_detectors([DetectorRole.Trial01, DetectorRole.Onset], [normal_session],
                                 lambda r: TrainConfig(epochs=1), network)
        assert list(models) == [DetectorRole.Trial01, DetectorRole.Onset]
        assert models[DetectorRole.Trial01].fingerprint["init_from"] is None

    def test_incompatible_init(self, normal_session, tiny_models):
        with pytest.raises(ConfigError):
            train_detector(DetectorRole.Trial05, [normal_session], TrainConfig(epochs=1),
                           {"block_filters": (2, 2)}, init_from=tiny_models[DetectorRole.Onset])

    def test_skip_notice(self, ai_session):
        skipped = []
        models = train_detectors(list(DetectorRole), [ai_session], lambda r: TrainConfig(epochs=1),
                                 TINY_NETWORK, on_skip=lambda role, exc: skipped.append(role))
        assert skipped == [DetectorRole.Trial01]
        assert set(models) == {DetectorRole.Trial05, DetectorRole.Onset}


class TestBundles:
    def test_round_trip(self, tmp_path, tiny_models):
        for role, model in tiny_models.items():
            loaded = load_bundle(save_bundle(model, tmp_path / role.value))
            assert loaded.role is role and loaded.spec == model.spec
            assert loaded.weights_sha256 == model.weights_sha256
            assert loaded.fingerprint == json.loads(json.dumps(model.fingerprint))

    def test_not_a_bundle(self, tmp_path):
        with pytest.raises(ConfigError):
            load_bundle(tmp_path)

    def test_corrupt_weights(self, tmp_path, tiny_models):
        path = save_bundle(tiny_models[DetectorRole.Onset], tmp_path / "b")
        blob = (path / "weights.erpw").read_bytes()
        (path / "weights.erpw").write_bytes(blob[:100])
        with pytest.raises(DecodeError):
            load_bundle(path)
