"""Trial segmentation and sliding windows.

Trials are cut at beep triggers. Each trial's transition speed is read from
its image-onset cadence, and the segment runs from the beep to 0.5 s after
the tenth image slot. Windows are 1 s long with a 0.5 s step and start at
the segment start.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import (
    IMAGES_PER_TRIAL,
    TRANSITIONS_SEC,
    EegRecording,
    Provenance,
    TrialLabel,
    TrialSegment,
    TriggerCode,
    segment_length,
    slice_samples,
    time_to_sample,
)
from .errors import (
    CadenceError,
    LabelingError,
    MalformedTrialError,
    SegmentationError,
    SliceError,
    WindowingError,
)

WINDOW_SEC = 1.0
STEP_SEC = 0.5
CADENCE_TOLERANCE = 0.25


class TrialMarkers(NamedTuple):
    beep_sample: int
    image_onset_samples: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class WindowBatch:
    provenance: Provenance
    windows: np.ndarray  # (n_windows, n_channels, window_len)
    window_start_secs: tuple[float, ...]
    sample_rate_hz: float
    window_len_sec: float = WINDOW_SEC
    step_sec: float = STEP_SEC

    def __len__(self):
        return self.windows.shape[0]


def detect_trials(rec: EegRecording) -> list[TrialMarkers]:
    beeps = [t.sample_index for t in rec.triggers if t.code is TriggerCode.BeepTrialStart]
    if not beeps:
        raise SegmentationError("no trials: recording has no BeepTrialStart trigger")
    onsets = sorted(t.sample_index for t in rec.triggers if t.code is TriggerCode.ImageOnset)
    bounds = beeps[1:] + [rec.n_samples]
    trials = []
    for i, (beep, end) in enumerate(zip(beeps, bounds)):
        mine = tuple(s for s in onsets if beep <= s < end)
        if len(mine) != IMAGES_PER_TRIAL:
            raise MalformedTrialError(i, f"expected {IMAGES_PER_TRIAL} image onsets, found {len(mine)}")
        trials.append(TrialMarkers(beep, mine))
    return trials


def infer_transition_sec(image_onset_samples: Sequence[int], fs: float) -> float:
    """Median inter-onset gap, snapped to 0.1 s or 0.5 s."""
    if len(image_onset_samples) < 2:
        raise CadenceError("need at least two image onsets to infer a transition time")
    gap = float(np.median(np.diff(np.asarray(image_onset_samples, dtype=float)))) / fs
    best = min(TRANSITIONS_SEC, key=lambda c: abs(gap - c) / c)
    if abs(gap - best) / best > CADENCE_TOLERANCE:
        raise CadenceError(f"median image gap {gap:.4f} s matches neither 0.1 s nor 0.5 s")
    return best


def extract_trial_segment(
    rec: EegRecording,
    beep_sample: int,
    transition_sec: float,
    provenance: Provenance = Provenance(),
) -> TrialSegment:
    length = segment_length(transition_sec, rec.sample_rate_hz)
    try:
        data = slice_samples(rec, beep_sample, length)
    except SliceError as exc:
        raise SegmentationError(
            f"trial {provenance.trial_index} truncated: needs samples [{beep_sample}, "
            f"{beep_sample + length}) but recording has {rec.n_samples}"
        ) from exc
    return TrialSegment(provenance, transition_sec, data, rec.sample_rate_hz)


def segment_session(rec: EegRecording, subject_id: str = "", session_index: int = 0) -> list[TrialSegment]:
    """Every trial of a recording as a padded segment, in beep order."""
    segments = []
    for i, markers in enumerate(detect_trials(rec)):
        try:
            transition = infer_transition_sec(markers.image_onset_samples, rec.sample_rate_hz)
        except CadenceError as exc:
            raise MalformedTrialError(i, str(exc)) from exc
        segments.append(
            extract_trial_segment(rec, markers.beep_sample, transition, Provenance(subject_id, session_index, i))
        )
    return segments


def window_starts(n_samples: int, fs: float) -> list[int]:
    win = time_to_sample(fs, WINDOW_SEC)
    step = time_to_sample(fs, STEP_SEC)
    if n_samples < win:
        return []
    return list(range(0, n_samples - win + 1, step))


def make_windows(segment: TrialSegment) -> WindowBatch:
    fs = segment.sample_rate_hz
    win = time_to_sample(fs, WINDOW_SEC)
    starts = window_starts(segment.n_samples, fs)
    if not starts:
        raise WindowingError(
            f"segment of {segment.n_samples} samples is shorter than one {win}-sample window"
        )
    view = np.lib.stride_tricks.sliding_window_view(segment.data, win, axis=1)
    windows = view[:, starts, :].transpose(1, 0, 2)
    windows = np.ascontiguousarray(windows)
    windows.setflags(write=False)
    return WindowBatch(
        provenance=segment.provenance,
        windows=windows,
        window_start_secs=tuple(s / fs for s in starts),
        sample_rate_hz=fs,
    )


def label_windows(batch: WindowBatch, label: TrialLabel) -> list[int]:
    """1 for the window whose first half contains the target onset, else 0."""
    if batch.provenance.trial_index != label.trial_index:
        raise LabelingError(
            f"window batch is trial {batch.provenance.trial_index}, label is trial {label.trial_index}"
        )
    if not label.target_present:
        return [0] * len(batch)
    fs = batch.sample_rate_hz
    onset = time_to_sample(fs, label.target_onset_sec)
    half = time_to_sample(fs, batch.step_sec)
    starts = [time_to_sample(fs, s) for s in batch.window_start_secs]
    return [int(s <= onset < s + half) for s in starts]
