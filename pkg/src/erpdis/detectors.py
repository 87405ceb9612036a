"""The three task-specific detectors and their on-disk bundles.

* ``Trial01`` scores whole padded trials shown at 0.1 s per image.
* ``Trial05`` does the same for 0.5 s trials.
* ``Onset`` scores 1 s sliding windows; its argmax window locates the target.

All three share one network family and differ only in input length.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .core import EegRecording, SessionManifest, TrialSegment, segment_length, time_to_sample
from .engine import NetworkSpec, Params, TrainConfig, forward, load_weights, param_shapes, save_weights, train
from .engine.network import check_params
from .engine.weights import encode_weights
from .errors import ConfigError, DecodeError, EmptyTrainingSetError, PathError, RoutingError
from .segment import WINDOW_SEC, WindowBatch, label_windows, make_windows, segment_session

SCORE_CHUNK = 64

# Two conv blocks feeding a global temporal max. The deeper four-block
# dense-head net overfits the ~24-100 examples a fold provides.
DEFAULT_NETWORK = {"block_filters": (16, 32), "global_pool": True, "dropout_p": 0.2}


class DetectorRole(enum.Enum):
    Trial01 = "Trial01"
    Trial05 = "Trial05"
    Onset = "Onset"

    @property
    def transition_sec(self) -> Optional[float]:
        return {"Trial01": 0.1, "Trial05": 0.5}.get(self.value)

    def input_len(self, fs: float) -> int:
        if self is DetectorRole.Onset:
            return time_to_sample(fs, WINDOW_SEC)
        return segment_length(self.transition_sec, fs)

    @classmethod
    def for_transition(cls, transition_sec: float) -> "DetectorRole":
        if transition_sec == 0.1:
            return cls.Trial01
        if transition_sec == 0.5:
            return cls.Trial05
        raise RoutingError(f"no trial detector for transition {transition_sec} s")


def role_spec(role: DetectorRole, n_channels: int, fs: float, overrides: Mapping | None = None) -> NetworkSpec:
    """Network spec for ``role``.

    ``overrides`` are applied on top of :data:`DEFAULT_NETWORK` and may change
    anything but the input shape.
    """
    merged = {**DEFAULT_NETWORK, **(overrides or {})}
    for fixed in ("n_channels", "input_len"):
        merged.pop(fixed, None)
    unknown = set(merged) - {f.name for f in fields(NetworkSpec)}
    if unknown:
        raise ConfigError(f"unknown network settings: {sorted(unknown)}")
    return NetworkSpec(n_channels=n_channels, input_len=role.input_len(fs), **merged)


@dataclass(frozen=True, eq=False)
class DetectorModel:
    role: DetectorRole
    spec: NetworkSpec
    params: Params
    fingerprint: dict = field(default_factory=dict)
    sample_rate_hz: float = 250.0

    def __post_init__(self):
        expected = self.role.input_len(self.sample_rate_hz)
        if self.spec.input_len != expected:
            raise ConfigError(
                f"{self.role.value} detector at {self.sample_rate_hz} Hz needs input_len {expected}, "
                f"spec has {self.spec.input_len}"
            )
        check_params(self.params, self.spec)
        for v in self.params.values():
            v.setflags(write=False)

    @property
    def weights_sha256(self) -> str:
        return hashlib.sha256(encode_weights(self.params)).hexdigest()


def _labelled_examples(role: DetectorRole, sessions: Sequence[tuple[EegRecording, SessionManifest]]):
    for rec, manifest in sessions:
        for segment in segment_session(rec, manifest.subject_id, manifest.session_index):
            label = manifest.trials[segment.provenance.trial_index]
            if role is DetectorRole.Onset:
                batch = make_windows(segment)
                for window, y in zip(batch.windows, label_windows(batch, label)):
                    yield window, y
            elif segment.transition_sec == role.transition_sec:
                yield segment.data, int(label.target_present)


def build_training_set(role: DetectorRole, sessions: Sequence[tuple[EegRecording, SessionManifest]]):
    """Stack every example for ``role`` from labelled sessions.

    Trial roles get one example per trial of matching speed, labelled with
    target presence. The onset role gets every window of every trial,
    labelled by :func:`label_windows`.
    """
    examples = list(_labelled_examples(role, sessions))
    if not examples:
        raise EmptyTrainingSetError(f"no training examples for role {role.value}")
    inputs = np.stack([x for x, _ in examples]).astype(np.float32)
    labels = np.array([y for _, y in examples], dtype=np.int64)
    return inputs, labels


def data_digest(inputs: np.ndarray, labels: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(inputs, dtype="<f4").tobytes())
    h.update(np.ascontiguousarray(labels, dtype="<i8").tobytes())
    return h.hexdigest()


def warm_start_compatible(spec: NetworkSpec, source: DetectorModel) -> bool:
    """True when ``source`` weights fit ``spec`` tensor for tensor."""
    return param_shapes(spec) == param_shapes(source.spec)


def train_detector(role: DetectorRole, sessions, config: TrainConfig = TrainConfig(),
                   network: Mapping | None = None, init_from: DetectorModel | None = None) -> DetectorModel:
    """Train one detector on labelled sessions.

    ``init_from`` starts optimisation from another detector's weights instead
    of a fresh initialisation. With global pooling every tensor shape is
    independent of input length, so a window-level model can seed a
    trial-level one.
    """
    inputs, labels = build_training_set(role, sessions)
    rec = sessions[0][0]
    spec = role_spec(role, rec.n_channels, rec.sample_rate_hz, network)
    init = None
    if init_from is not None:
        if not warm_start_compatible(spec, init_from):
            raise ConfigError(
                f"cannot start {role.value} from the {init_from.role.value} detector: tensor shapes differ"
            )
        init = {name: np.array(value) for name, value in init_from.params.items()}
    result = train(spec, inputs, labels, config, init=init)
    fingerprint = {
        "role": role.value,
        "data_sha256": data_digest(inputs, labels),
        "n_examples": int(labels.size),
        "n_positive": int(labels.sum()),
        "seed": config.seed,
        "train_config": config.to_dict(),
        "final_loss": result.loss_trace[-1],
        "init_from": None if init_from is None else init_from.weights_sha256,
    }
    return DetectorModel(role, spec, result.params, fingerprint, rec.sample_rate_hz)


def train_detectors(roles: Sequence[DetectorRole], sessions, config_for: Callable[[DetectorRole], TrainConfig],
                    network: Mapping | None = None, warm_start: bool = True,
                    on_skip: Callable[[DetectorRole, EmptyTrainingSetError], None] | None = None,
                    ) -> dict[DetectorRole, DetectorModel]:
    """Train a fold's detectors, the onset detector first.

    With ``warm_start`` each trial detector starts from the trained onset
    detector when their tensor shapes agree. A trial detector sees one
    example per trial while the onset detector sees ten windows per trial,
    so the onset weights are a far better starting point than noise.
    ``on_skip``, when given, is told about roles with no training examples
    instead of the error propagating.
    """
    ordered = sorted(roles, key=lambda r: r is not DetectorRole.Onset)
    models: dict[DetectorRole, DetectorModel] = {}
    for role in ordered:
        source = models.get(DetectorRole.Onset) if warm_start and role is not DetectorRole.Onset else None
        try:
            if source is not None:
                spec = role_spec(role, source.spec.n_channels, source.sample_rate_hz, network)
                if not warm_start_compatible(spec, source):
                    source = None
            models[role] = train_detector(role, sessions, config_for(role), network, init_from=source)
        except EmptyTrainingSetError as exc:
            if on_skip is None:
                raise
            on_skip(role, exc)
    return {role: models[role] for role in roles if role in models}


def _check_len(model: DetectorModel, n_samples: int, what: str) -> None:
    if n_samples != model.spec.input_len:
        raise RoutingError(
            f"{model.role.value} detector expects {model.spec.input_len} samples, {what} has {n_samples}"
        )


def score_trial(model: DetectorModel, segment: TrialSegment) -> float:
    """Target probability for one padded trial segment."""
    if model.role is DetectorRole.Onset:
        raise RoutingError("the onset detector scores windows, not whole trials")
    if segment.transition_sec != model.role.transition_sec:
        raise RoutingError(
            f"{segment.transition_sec} s trial routed to the {model.role.value} detector"
        )
    _check_len(model, segment.n_samples, "segment")
    return float(forward(model.params, model.spec, segment.data[None])[0, 1])


def score_windows(model: DetectorModel, batch: WindowBatch) -> list[float]:
    """Target probability per window, aligned with ``batch.window_start_secs``."""
    if model.role is not DetectorRole.Onset:
        raise RoutingError(f"{model.role.value} detector cannot score sliding windows")
    _check_len(model, batch.windows.shape[2], "window")
    scores = []
    for i in range(0, len(batch), SCORE_CHUNK):
        scores.extend(float(p) for p in forward(model.params, model.spec, batch.windows[i:i + SCORE_CHUNK])[:, 1])
    return scores


# -- bundles ----------------------------------------------------------------

ROLE_FILE = "role"
SPEC_FILE = "network.json"
WEIGHTS_FILE = "weights.erpw"
FINGERPRINT_FILE = "fingerprint.json"


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def save_bundle(model: DetectorModel, directory) -> Path:
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        (directory / ROLE_FILE).write_text(model.role.value + "\n")
        (directory / SPEC_FILE).write_text(
            _dump({"sample_rate_hz": model.sample_rate_hz, "network": model.spec.to_dict()})
        )
        save_weights(directory / WEIGHTS_FILE, model.params)
        (directory / FINGERPRINT_FILE).write_text(_dump(model.fingerprint))
    except OSError as exc:
        raise PathError(f"cannot write bundle {directory}: {exc.strerror or exc}") from exc
    return directory


def load_bundle(directory) -> DetectorModel:
    directory = Path(directory)
    if not (directory / ROLE_FILE).is_file():
        raise ConfigError(f"{directory} is not a detector bundle (no {ROLE_FILE} file)")
    try:
        role = DetectorRole((directory / ROLE_FILE).read_text().strip())
        header = json.loads((directory / SPEC_FILE).read_text())
        spec = NetworkSpec.from_dict(header["network"])
        fs = float(header["sample_rate_hz"])
        fingerprint = json.loads((directory / FINGERPRINT_FILE).read_text())
    except (OSError, ValueError, TypeError, KeyError) as exc:
        raise DecodeError(f"unreadable bundle {directory}: {exc}") from exc
    params = load_weights(directory / WEIGHTS_FILE, spec)
    return DetectorModel(role, spec, params, fingerprint, fs)
