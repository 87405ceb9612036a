"""Seed-deterministic synthetic EEG for the Normal and AI RSVP paradigms.

Each trial is rendered as background noise (1/f-shaped noise plus a 10 Hz
alpha rhythm) with evoked responses added linearly on top:

* a small VEP at every image onset, over occipital channels;
* a P300 at the target onset (plus latency jitter) in target trials;
* in the AI paradigm, a weaker P300-shaped "distractor" in non-target
  trials, standing in for bounding boxes drawn around look-alike areas.

A session is 16 such trials back to back, each preceded by a beep trigger.
Every session draws from its own RNG stream keyed on
``(seed, subject, session, paradigm)``, so sessions can be generated in any
order or in parallel with identical output.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .container import encode_recording, read_recording
from .core import (
    IMAGES_PER_TRIAL,
    TARGETS_PER_SESSION,
    TRIALS_PER_SESSION,
    EegRecording,
    Paradigm,
    SessionManifest,
    TrialLabel,
    TriggerCode,
    TriggerEvent,
    default_channel_names,
    round_half_away,
    segment_length,
    time_to_sample,
)
from .errors import ConfigError, PathError

ALPHA_HZ = 10.0
PINK_CORNER_HZ = 0.5
VEP_LATENCY_SEC = 0.1
VEP_WIDTH_SEC = 0.03

# Relative spatial gain per channel; Pz carries the P300 maximum.
P300_WEIGHTS = {
    "Pz": 1.0, "CP1": 0.85, "CP2": 0.85, "P3": 0.8, "P4": 0.8, "Cz": 0.7,
    "C3": 0.5, "C4": 0.5, "CP5": 0.5, "CP6": 0.5, "P7": 0.45, "P8": 0.45,
    "Oz": 0.4, "O1": 0.35, "O2": 0.35, "FC1": 0.35, "FC2": 0.35, "Fz": 0.3,
    "PO9": 0.3, "PO10": 0.3,
}
P300_DEFAULT_WEIGHT = 0.1
VEP_WEIGHTS = {"Oz": 1.0, "O1": 0.9, "O2": 0.9, "PO9": 0.6, "PO10": 0.6, "P7": 0.3, "P8": 0.3}


class ErpKind(enum.Enum):
    P300 = "P300"
    VEP = "VEP"
    Distractor = "Distractor"


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_subjects: int = 4
    sessions_per_paradigm: int = 4
    sample_rate_hz: float = 250.0
    n_channels: int = 32
    noise_std_uv: float = 2.0
    p300_amp_uv: float = 4.0
    p300_latency_sec: float = 0.3
    p300_width_sec: float = 0.06
    latency_jitter_std_sec: float = 0.03
    vep_amp_uv: float = 1.0
    ai_gain: float = 1.5
    ai_distractor_amp_uv: float = 1.2
    inter_trial_gap_sec: float = 5.0
    alpha_amp_uv: float = 1.0

    def __post_init__(self):
        nonneg = (
            "noise_std_uv", "p300_amp_uv", "p300_latency_sec", "p300_width_sec",
            "latency_jitter_std_sec", "vep_amp_uv", "ai_gain", "ai_distractor_amp_uv",
            "alpha_amp_uv",
        )
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.sample_rate_hz <= 0:
            raise ConfigError("sample_rate_hz must be > 0")
        if self.sessions_per_paradigm < 1 or self.n_subjects < 1 or self.n_channels < 1:
            raise ConfigError("n_subjects, sessions_per_paradigm and n_channels must be >= 1")
        # the padded trial segment has to fit before the next beep
        if self.inter_trial_gap_sec < 0.5:
            raise ConfigError("inter_trial_gap_sec must be >= 0.5 to hold the post-stream padding")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "SynthConfig":
        return cls.from_dict(json.loads(text))

    def replace(self, **changes) -> "SynthConfig":
        return dataclasses.replace(self, **changes)


def subject_ids(config: SynthConfig) -> list[str]:
    return [f"S{i + 1:02d}" for i in range(config.n_subjects)]


def session_rng(config: SynthConfig, subject_id: str, session_index: int, paradigm: Paradigm) -> np.random.Generator:
    key = [
        config.seed & 0xFFFFFFFFFFFFFFFF,
        zlib.crc32(subject_id.encode("utf-8")),
        session_index,
        0 if paradigm is Paradigm.Normal else 1,
    ]
    return np.random.default_rng(np.random.SeedSequence(key))


def _spatial_weights(kind: ErpKind, names: Sequence[str]) -> np.ndarray:
    n = len(names)
    if tuple(names) == default_channel_names(32) and n == 32:
        if kind is ErpKind.VEP:
            return np.array([VEP_WEIGHTS.get(c, 0.0) for c in names])
        return np.array([P300_WEIGHTS.get(c, P300_DEFAULT_WEIGHT) for c in names])
    # generic montage: Gaussian profile over channel index
    idx = np.arange(n)
    centre = n - 1 if kind is ErpKind.VEP else round_half_away(0.75 * (n - 1))
    spread = max(n / 6.0, 0.5)
    w = np.exp(-0.5 * ((idx - centre) / spread) ** 2)
    return w / w.max()


def make_noise(config: SynthConfig, n_channels: int, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Background EEG: 1/f noise plus a 10 Hz alpha rhythm.

    White Gaussian noise is shaped in the frequency domain by
    ``1/sqrt(max(f, 0.5 Hz))`` (power ~ 1/f, DC removed), then each channel
    is rescaled to exactly ``noise_std_uv``. The alpha sinusoid has
    amplitude ``alpha_amp_uv`` and an independent uniform phase per channel.
    """
    fs = config.sample_rate_hz
    white = rng.standard_normal((n_channels, n_samples))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_channels)
    if n_samples >= 2:
        freqs = np.fft.rfftfreq(n_samples, d=1.0 / fs)
        shaping = 1.0 / np.sqrt(np.maximum(freqs, PINK_CORNER_HZ))
        shaping[0] = 0.0
        pink = np.fft.irfft(np.fft.rfft(white, axis=1) * shaping, n=n_samples, axis=1)
    else:
        pink = white
    std = pink.std(axis=1, keepdims=True)
    pink = np.divide(pink, std, out=np.zeros_like(pink), where=std > 0)
    t = np.arange(n_samples) / fs
    alpha = np.sin(2.0 * np.pi * ALPHA_HZ * t[None, :] + phases[:, None])
    return config.noise_std_uv * pink + config.alpha_amp_uv * alpha


def make_erp_template(config: SynthConfig, kind: ErpKind, channel_names: Sequence[str] | None = None) -> np.ndarray:
    """Channels x time template of one evoked response, starting at stimulus onset."""
    names = channel_names or default_channel_names(config.n_channels)
    if kind is ErpKind.VEP:
        latency, width, amp = VEP_LATENCY_SEC, VEP_WIDTH_SEC, config.vep_amp_uv
    else:
        latency, width = config.p300_latency_sec, config.p300_width_sec
        amp = config.p300_amp_uv if kind is ErpKind.P300 else config.ai_distractor_amp_uv
    fs = config.sample_rate_hz
    length = time_to_sample(fs, latency + 4.0 * width) + 1
    # centre on the peak sample so the maximum lands exactly on the grid
    peak = time_to_sample(fs, latency)
    t = (np.arange(length) - peak) / fs
    course = np.exp(-0.5 * (t / width) ** 2) if width > 0 else (np.arange(length) == peak).astype(float)
    return amp * _spatial_weights(kind, names)[:, None] * course[None, :]


class Placement(NamedTuple):
    kind: ErpKind
    start_sample: int
    gain: float = 1.0


def plan_trial(config: SynthConfig, label: TrialLabel, paradigm: Paradigm, rng: np.random.Generator) -> list[Placement]:
    """Decide where each evoked response of one trial goes.

    Consumes the same number of draws from ``rng`` whatever the label or
    paradigm, so both paradigms stay aligned on a shared stream.
    """
    if paradigm is Paradigm.AI and label.transition_sec != 0.5:
        raise ConfigError(f"trial {label.trial_index}: AI paradigm has only 0.5 s transitions")
    fs = config.sample_rate_hz
    tr = label.transition_sec
    jitter_z = rng.standard_normal()
    distractor_image = int(rng.integers(IMAGES_PER_TRIAL))
    distractor_z = rng.standard_normal()

    placements = [
        Placement(ErpKind.VEP, time_to_sample(fs, k * tr)) for k in range(IMAGES_PER_TRIAL)
    ]
    jitter_std = config.latency_jitter_std_sec * (0.5 if paradigm is Paradigm.AI else 1.0)
    p300_len = time_to_sample(fs, config.p300_latency_sec + 4.0 * config.p300_width_sec) + 1
    last_start = max(segment_length(tr, fs) - p300_len, 0)

    def placed(onset_sec: float, z: float) -> int:
        start = round_half_away((onset_sec + z * jitter_std) * fs)
        return min(max(start, 0), last_start)

    if label.target_present:
        gain = config.ai_gain if paradigm is Paradigm.AI else 1.0
        placements.append(Placement(ErpKind.P300, placed(label.target_onset_sec, jitter_z), gain))
    elif paradigm is Paradigm.AI:
        placements.append(Placement(ErpKind.Distractor, placed(distractor_image * tr, distractor_z)))
    return placements


def trial_length(config: SynthConfig, transition_sec: float) -> int:
    return time_to_sample(config.sample_rate_hz, IMAGES_PER_TRIAL * transition_sec + config.inter_trial_gap_sec)


def render(config: SynthConfig, placements: Sequence[Placement], n_samples: int, channel_names=None) -> np.ndarray:
    """Noise-free sum of template placements; templates running past the end are cut."""
    names = channel_names or default_channel_names(config.n_channels)
    out = np.zeros((len(names), n_samples))
    templates = {}
    for p in placements:
        if p.kind not in templates:
            templates[p.kind] = make_erp_template(config, p.kind, names)
        tpl = templates[p.kind]
        stop = min(p.start_sample + tpl.shape[1], n_samples)
        if stop > p.start_sample:
            out[:, p.start_sample:stop] += p.gain * tpl[:, : stop - p.start_sample]
    return out


def synth_trial(config: SynthConfig, label: TrialLabel, paradigm: Paradigm, rng: np.random.Generator) -> np.ndarray:
    """One trial stream plus the response gap, as a channels x samples array."""
    names = default_channel_names(config.n_channels)
    placements = plan_trial(config, label, paradigm, rng)
    n = trial_length(config, label.transition_sec)
    return render(config, placements, n, names) + make_noise(config, len(names), n, rng)


def draw_labels(paradigm: Paradigm, rng: np.random.Generator) -> list[TrialLabel]:
    n = TRIALS_PER_SESSION
    if paradigm is Paradigm.Normal:
        transitions = np.array([0.1] * (n // 2) + [0.5] * (n // 2))
        rng.shuffle(transitions)
    else:
        transitions = np.full(n, 0.5)
    targets = set(int(i) for i in rng.choice(n, size=TARGETS_PER_SESSION, replace=False))
    images = rng.integers(0, IMAGES_PER_TRIAL, size=n)
    return [
        TrialLabel(
            trial_index=i,
            transition_sec=float(transitions[i]),
            target_present=i in targets,
            target_image_index=int(images[i]) if i in targets else None,
        )
        for i in range(n)
    ]


def synth_session(
    config: SynthConfig,
    subject_id: str,
    session_index: int,
    paradigm: Paradigm,
    rng: np.random.Generator | None = None,
) -> tuple[EegRecording, SessionManifest]:
    if rng is None:
        rng = session_rng(config, subject_id, session_index, paradigm)
    labels = draw_labels(paradigm, rng)
    fs = config.sample_rate_hz
    pieces, triggers = [], []
    offset = 0
    for label in labels:
        triggers.append(TriggerEvent(offset, TriggerCode.BeepTrialStart))
        for k in range(IMAGES_PER_TRIAL):
            triggers.append(TriggerEvent(offset + time_to_sample(fs, k * label.transition_sec), TriggerCode.ImageOnset))
        trial = synth_trial(config, label, paradigm, rng)
        pieces.append(trial)
        offset += trial.shape[1]
    rec = EegRecording(
        samples=np.concatenate(pieces, axis=1).astype(np.float32),
        sample_rate_hz=fs,
        channel_names=default_channel_names(config.n_channels),
        triggers=tuple(triggers),
    )
    manifest = SessionManifest(subject_id, session_index, paradigm, tuple(labels))
    return rec, manifest


def session_relpath(subject_id: str, paradigm: Paradigm, session_index: int) -> Path:
    return Path(subject_id) / paradigm.value.lower() / f"session_{session_index}.ers1"


def iter_sessions(config: SynthConfig) -> Iterator[tuple[str, Paradigm, int]]:
    for subject in subject_ids(config):
        for paradigm in Paradigm:
            for session in range(config.sessions_per_paradigm):
                yield subject, paradigm, session


class SynthResult(NamedTuple):
    paths: list[Path]
    n_written: int


def synth_dataset(config: SynthConfig, out_dir) -> SynthResult:
    """Write every session of the configured dataset as an ERS1 file.

    Files whose bytes would not change are left untouched, so ``n_written``
    is 0 when rerunning with the same config.
    """
    out_dir = Path(out_dir)
    if not out_dir.parent.exists():
        raise PathError(f"parent directory of {out_dir} does not exist")
    paths, written = [], 0
    for subject, paradigm, session in iter_sessions(config):
        path = out_dir / session_relpath(subject, paradigm, session)
        blob = encode_recording(*synth_session(config, subject, session, paradigm))
        try:
            if path.exists() and path.read_bytes() == blob:
                paths.append(path)
                continue
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(blob)
        except OSError as exc:
            raise PathError(f"cannot write {path}: {exc.strerror or exc}") from exc
        paths.append(path)
        written += 1
    return SynthResult(paths, written)


Session = tuple[EegRecording, SessionManifest]
Dataset = dict[str, dict[Paradigm, list[Session]]]


def load_dataset(root, paradigms: Sequence[Paradigm] = tuple(Paradigm)) -> Dataset:
    """Read a dataset tree into ``{subject: {paradigm: [sessions by index]}}``."""
    root = Path(root)
    if not root.is_dir():
        raise PathError(f"dataset directory {root} does not exist")
    dataset: Dataset = {}
    for subject_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for paradigm in paradigms:
            files = sorted((subject_dir / paradigm.value.lower()).glob("session_*.ers1"))
            sessions = [read_recording(f) for f in files]
            sessions.sort(key=lambda s: s[1].session_index)
            if sessions:
                dataset.setdefault(subject_dir.name, {})[paradigm] = sessions
    return dataset


def build_dataset(config: SynthConfig, paradigms: Sequence[Paradigm] = tuple(Paradigm)) -> Dataset:
    """In-memory equivalent of ``load_dataset(synth_dataset(config, ...))``."""
    dataset: Dataset = {}
    for subject, paradigm, session in iter_sessions(config):
        if paradigm in paradigms:
            dataset.setdefault(subject, {}).setdefault(paradigm, []).append(
                synth_session(config, subject, session, paradigm)
            )
    return dataset
