"""Domain types for recordings, triggers, sessions and labels.

Ground truth (which trial holds a target, and when) lives only in
:class:`SessionManifest`. Triggers carry nothing but beep and image-onset
markers, so anything that consumes an :class:`EegRecording` alone cannot
see the labels.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import DataError, DomainError, SliceError

DEFAULT_SAMPLE_RATE_HZ = 250.0
IMAGES_PER_TRIAL = 10
TRIALS_PER_SESSION = 16
TARGETS_PER_SESSION = 8
TRANSITIONS_SEC = (0.1, 0.5)
POST_STREAM_PAD_SEC = 0.5

# 32-channel 10-20 montage, in acquisition order. Channels are addressed by
# index everywhere else; names only matter for the synthetic spatial maps.
STANDARD_CHANNELS = (
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "FC5",
    "FC1", "FC2", "FC6", "T7", "C3", "Cz", "C4", "T8",
    "TP9", "CP5", "CP1", "CP2", "CP6", "TP10", "P7", "P3",
    "Pz", "P4", "P8", "PO9", "O1", "Oz", "O2", "PO10",
)


def default_channel_names(n_channels: int = 32) -> tuple[str, ...]:
    if n_channels == len(STANDARD_CHANNELS):
        return STANDARD_CHANNELS
    return tuple(f"Ch{i + 1:02d}" for i in range(n_channels))


class TriggerCode(enum.Enum):
    BeepTrialStart = "BeepTrialStart"
    ImageOnset = "ImageOnset"


class Paradigm(enum.Enum):
    Normal = "Normal"
    AI = "AI"

    @classmethod
    def parse(cls, text: str) -> "Paradigm":
        for member in cls:
            if member.value.lower() == str(text).lower():
                return member
        raise DomainError(f"unknown paradigm {text!r}; expected normal or ai")


@dataclass(frozen=True)
class TriggerEvent:
    sample_index: int
    code: TriggerCode


def _readonly(array: np.ndarray, dtype=None) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class EegRecording:
    """Continuous multi-channel EEG with trigger markers.

    Construction only normalises types; use :func:`validate_recording` to
    check the invariants. ``samples`` is stored as a read-only float32 array
    of shape ``(n_channels, n_samples)`` in microvolts.
    """

    samples: np.ndarray
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ
    channel_names: tuple[str, ...] = STANDARD_CHANNELS
    triggers: tuple[TriggerEvent, ...] = ()

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 2:
            raise DataError(f"samples must be 2-D (channels x samples), got shape {samples.shape}")
        object.__setattr__(self, "samples", _readonly(samples, np.float32))
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        object.__setattr__(self, "triggers", tuple(self.triggers))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def __eq__(self, other):
        if not isinstance(other, EegRecording):
            return NotImplemented
        return (
            self.sample_rate_hz == other.sample_rate_hz
            and self.channel_names == other.channel_names
            and self.triggers == other.triggers
            and self.samples.shape == other.samples.shape
            and self.samples.tobytes() == other.samples.tobytes()
        )

    __hash__ = None


@dataclass(frozen=True)
class TrialLabel:
    trial_index: int
    transition_sec: float
    target_present: bool
    target_image_index: Optional[int] = None

    def __post_init__(self):
        if not 0 <= self.trial_index < TRIALS_PER_SESSION:
            raise DataError(f"trial_index {self.trial_index} outside 0..{TRIALS_PER_SESSION - 1}")
        if self.transition_sec not in TRANSITIONS_SEC:
            raise DataError(f"transition_sec {self.transition_sec} not in {TRANSITIONS_SEC}")
        if self.target_present != (self.target_image_index is not None):
            raise DataError(
                f"trial {self.trial_index}: target_image_index must be set iff target_present"
            )
        if self.target_image_index is not None and not 0 <= self.target_image_index < IMAGES_PER_TRIAL:
            raise DataError(f"target_image_index {self.target_image_index} outside 0..9")

    @property
    def target_onset_sec(self) -> Optional[float]:
        """Target onset relative to the first image of the trial stream."""
        if self.target_image_index is None:
            return None
        return self.transition_sec * self.target_image_index

    def to_dict(self) -> dict:
        return {
            "trial_index": self.trial_index,
            "transition_sec": self.transition_sec,
            "target_present": self.target_present,
            "target_image_index": self.target_image_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrialLabel":
        return cls(
            trial_index=int(d["trial_index"]),
            transition_sec=float(d["transition_sec"]),
            target_present=bool(d["target_present"]),
            target_image_index=None if d.get("target_image_index") is None else int(d["target_image_index"]),
        )


@dataclass(frozen=True)
class SessionManifest:
    """Paradigm metadata plus ground-truth labels for one session."""

    subject_id: str
    session_index: int
    paradigm: Paradigm
    trials: tuple[TrialLabel, ...]

    def __post_init__(self):
        object.__setattr__(self, "trials", tuple(self.trials))
        problems = manifest_violations(self)
        if problems:
            raise DataError("invalid session manifest: " + "; ".join(problems))

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "session_index": self.session_index,
            "paradigm": self.paradigm.value,
            "trials": [t.to_dict() for t in self.trials],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionManifest":
        return cls(
            subject_id=str(d["subject_id"]),
            session_index=int(d["session_index"]),
            paradigm=Paradigm(d["paradigm"]),
            trials=tuple(TrialLabel.from_dict(t) for t in d["trials"]),
        )


def manifest_violations(manifest: SessionManifest) -> list[str]:
    trials = manifest.trials
    problems = []
    if manifest.session_index < 0:
        problems.append(f"session_index {manifest.session_index} is negative")
    if len(trials) != TRIALS_PER_SESSION:
        problems.append(f"expected {TRIALS_PER_SESSION} trials, got {len(trials)}")
    if [t.trial_index for t in trials] != list(range(len(trials))):
        problems.append("trial indices must be 0..n-1 in order")
    n_targets = sum(t.target_present for t in trials)
    if n_targets != TARGETS_PER_SESSION:
        problems.append(f"expected {TARGETS_PER_SESSION} target trials, got {n_targets}")
    n_fast = sum(t.transition_sec == 0.1 for t in trials)
    if manifest.paradigm is Paradigm.Normal and n_fast != len(trials) // 2:
        problems.append(f"Normal paradigm needs 8 trials at 0.1 s, got {n_fast}")
    if manifest.paradigm is Paradigm.AI and n_fast:
        problems.append(f"AI paradigm allows only 0.5 s transitions, got {n_fast} at 0.1 s")
    return problems


class Provenance(NamedTuple):
    subject_id: str = ""
    session_index: int = 0
    trial_index: int = 0


def segment_length(transition_sec: float, sample_rate_hz: float) -> int:
    """Samples in a padded trial segment: 10 images plus 0.5 s."""
    return round_half_away(
        (IMAGES_PER_TRIAL * transition_sec + POST_STREAM_PAD_SEC) * sample_rate_hz
    )


@dataclass(frozen=True, eq=False)
class TrialSegment:
    provenance: Provenance
    transition_sec: float
    data: np.ndarray
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ
    t0_sec: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "data", _readonly(self.data, np.float32))
        expected = segment_length(self.transition_sec, self.sample_rate_hz)
        if self.data.ndim != 2 or self.data.shape[1] != expected:
            raise DataError(
                f"segment for {self.transition_sec} s transition needs {expected} samples, "
                f"got shape {self.data.shape}"
            )

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_sec(self) -> float:
        return self.n_samples / self.sample_rate_hz


@dataclass(frozen=True)
class Violation:
    invariant: str
    index: Optional[int] = None
    message: str = ""


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def validate_recording(rec: EegRecording) -> ValidationResult:
    found = []
    if not rec.sample_rate_hz > 0:
        found.append(Violation("sample rate not positive", None, f"{rec.sample_rate_hz}"))
    if rec.n_channels < 1:
        found.append(Violation("no channels"))
    if len(rec.channel_names) != rec.n_channels:
        found.append(
            Violation(
                "channel count mismatch",
                None,
                f"{len(rec.channel_names)} names for {rec.n_channels} rows",
            )
        )
    if rec.n_samples < 1:
        found.append(Violation("no samples"))
    previous = -1
    for i, trig in enumerate(rec.triggers):
        if not isinstance(trig.code, TriggerCode):
            found.append(Violation("unknown trigger code", i, repr(trig.code)))
        if not 0 <= trig.sample_index < rec.n_samples:
            found.append(
                Violation("trigger out of range", i, f"sample {trig.sample_index} of {rec.n_samples}")
            )
        if trig.sample_index < previous:
            found.append(Violation("triggers not sorted", i, f"{trig.sample_index} after {previous}"))
        previous = trig.sample_index
    return ValidationResult(tuple(found))


def round_half_away(x: float) -> int:
    """Round to the nearest integer, ties away from zero."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def time_to_sample(rec_or_rate, t_sec: float) -> int:
    """Convert seconds to a sample index with the package-wide rounding rule.

    Accepts either a recording or a bare sample rate.
    """
    if t_sec < 0:
        raise DomainError(f"time must be non-negative, got {t_sec}")
    rate = rec_or_rate.sample_rate_hz if hasattr(rec_or_rate, "sample_rate_hz") else rec_or_rate
    return round_half_away(t_sec * float(rate))


def slice_samples(rec, start: int, length: int) -> np.ndarray:
    """Copy ``length`` samples starting at ``start`` from a recording or segment."""
    data = rec.samples if hasattr(rec, "samples") else rec.data
    available = data.shape[1]
    if start < 0 or length < 0 or start + length > available:
        raise SliceError(start, length, available)
    return np.array(data[:, start:start + length], copy=True)
