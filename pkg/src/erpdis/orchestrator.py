"""Inference fan-out and per-trial aggregation.

For every trial of a session the routed trial detector (0.1 s or 0.5 s) and
the onset detector run as separate tasks on frozen models. The join is keyed
by trial index, so results do not depend on which task finishes first.
"""

from __future__ import annotations

import json
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .core import EegRecording, Paradigm, TrialSegment
from .detectors import DetectorModel, DetectorRole, score_trial, score_windows
from .errors import AggregationError, ConfigError, ErpError, MalformedTrialError, RoutingError
from .segment import WindowBatch, make_windows, segment_session

THRESHOLD = 0.5


@dataclass(frozen=True)
class TrialDecision:
    trial_index: int
    transition_sec: float
    target_present_pred: bool
    trial_score: float
    onset_pred_sec: Optional[float]
    window_scores: tuple[float, ...]
    window_start_secs: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {
            "trial_index": self.trial_index,
            "transition_sec": self.transition_sec,
            "target_present_pred": self.target_present_pred,
            "trial_score": self.trial_score,
            "onset_pred_sec": self.onset_pred_sec,
            "window_scores": list(self.window_scores),
            "window_start_secs": list(self.window_start_secs),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrialDecision":
        return cls(
            trial_index=int(d["trial_index"]),
            transition_sec=float(d["transition_sec"]),
            target_present_pred=bool(d["target_present_pred"]),
            trial_score=float(d["trial_score"]),
            onset_pred_sec=None if d["onset_pred_sec"] is None else float(d["onset_pred_sec"]),
            window_scores=tuple(float(s) for s in d["window_scores"]),
            window_start_secs=tuple(float(s) for s in d.get("window_start_secs", ())),
        )


@dataclass(frozen=True)
class SessionInference:
    subject_id: str
    session_index: int
    paradigm: Optional[Paradigm]
    decisions: tuple[TrialDecision, ...]
    method: str = "proposed"
    timing: dict = field(default_factory=dict, compare=False)
    fingerprints: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        indices = [d.trial_index for d in self.decisions]
        if indices != sorted(indices) or len(set(indices)) != len(indices):
            raise AggregationError("decisions must be unique and ordered by trial_index")

    def to_dict(self, with_timing: bool = True) -> dict:
        d = {
            "subject_id": self.subject_id,
            "session_index": self.session_index,
            "paradigm": None if self.paradigm is None else self.paradigm.value,
            "method": self.method,
            "decisions": [x.to_dict() for x in self.decisions],
            "fingerprints": self.fingerprints,
        }
        if with_timing:
            d["timing"] = self.timing
        return d

    def to_json(self, with_timing: bool = True) -> str:
        return json.dumps(self.to_dict(with_timing), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SessionInference":
        return cls(
            subject_id=d["subject_id"],
            session_index=int(d["session_index"]),
            paradigm=None if d.get("paradigm") is None else Paradigm(d["paradigm"]),
            decisions=tuple(TrialDecision.from_dict(x) for x in d["decisions"]),
            method=d.get("method", "proposed"),
            timing=d.get("timing", {}),
            fingerprints=d.get("fingerprints", {}),
        )


def route_trial(segment: TrialSegment, models: Mapping[DetectorRole, DetectorModel]) -> DetectorModel:
    role = DetectorRole.for_transition(segment.transition_sec)
    model = models.get(role)
    if model is None:
        raise ConfigError(
            f"trial {segment.provenance.trial_index} needs the {role.value} detector, which is not loaded"
        )
    if model.role is not role:
        raise RoutingError(f"model registered as {role.value} has role {model.role.value}")
    return model


def _argmax_first(scores: Sequence[float]) -> int:
    best = 0
    for i, s in enumerate(scores):
        if s > scores[best]:
            best = i
    return best


def aggregate(trial_score: float, window_scores: Sequence[float], window_start_secs: Sequence[float]) -> dict:
    """Combine one trial's detector outputs.

    The trial detector alone decides existence (``trial_score > 0.5``). For a
    positive trial the onset is the start of the highest-scoring window,
    earliest on ties, whether or not that window itself clears 0.5.
    """
    if len(window_scores) != len(window_start_secs):
        raise AggregationError(
            f"{len(window_scores)} window scores for {len(window_start_secs)} window starts"
        )
    present = trial_score > THRESHOLD
    onset = None
    if present:
        if not window_scores:
            raise AggregationError("positive trial has no window scores to place the onset")
        onset = float(window_start_secs[_argmax_first(window_scores)])
    return {
        "target_present_pred": bool(present),
        "trial_score": float(trial_score),
        "onset_pred_sec": onset,
        "window_scores": tuple(float(s) for s in window_scores),
        "window_start_secs": tuple(float(s) for s in window_start_secs),
    }


def aggregate_baseline(window_scores: Sequence[float], window_start_secs: Sequence[float]) -> dict:
    """Single-model rule: a trial is positive if any window exceeds 0.5."""
    if not window_scores:
        raise AggregationError("no window scores")
    fields_ = aggregate(max(window_scores), window_scores, window_start_secs)
    fields_["target_present_pred"] = any(s > THRESHOLD for s in window_scores)
    if not fields_["target_present_pred"]:
        fields_["onset_pred_sec"] = None
    return fields_


class _Clock:
    """Thread-safe per-detector wall-clock accumulator."""

    def __init__(self):
        self._lock = threading.Lock()
        self.seconds: dict[str, float] = {}
        self.calls: dict[str, int] = {}

    def timed(self, key: str, fn: Callable, *args):
        start = time.perf_counter()
        try:
            return fn(*args)
        finally:
            elapsed = time.perf_counter() - start
            with self._lock:
                self.seconds[key] = self.seconds.get(key, 0.0) + elapsed
                self.calls[key] = self.calls.get(key, 0) + 1

    def report(self, total: float) -> dict:
        return {
            "total_sec": total,
            "detectors": {k: {"sec": self.seconds[k], "calls": self.calls[k]} for k in sorted(self.seconds)},
        }


def _run(tasks: dict, concurrent: bool, max_workers: Optional[int], schedule_seed: Optional[int]) -> dict:
    """Execute ``{key: thunk}`` and return ``{key: result}``.

    ``schedule_seed`` shuffles submission order and adds random start delays
    so tests can exercise different interleavings.
    """
    keys = list(tasks)
    jitter = None
    if schedule_seed is not None:
        jitter = random.Random(schedule_seed)
        jitter.shuffle(keys)
    delays = {k: (jitter.uniform(0, 0.002) if jitter else 0.0) for k in keys}

    def call(key):
        if delays[key]:
            time.sleep(delays[key])
        return tasks[key]()

    if not concurrent:
        return {k: call(k) for k in keys}
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {k: pool.submit(call, k) for k in keys}
        return {k: f.result() for k, f in futures.items()}


def _segments(rec: EegRecording, subject_id: str, session_index: int) -> list[tuple[TrialSegment, WindowBatch]]:
    out = []
    for seg in segment_session(rec, subject_id, session_index):
        try:
            out.append((seg, make_windows(seg)))
        except ErpError as exc:
            raise MalformedTrialError(seg.provenance.trial_index, str(exc)) from exc
    return out


def run_session(rec: EegRecording, models: Mapping[DetectorRole, DetectorModel], *,
                subject_id: str = "", session_index: int = 0, paradigm: Optional[Paradigm] = None,
                concurrent: bool = True, max_workers: Optional[int] = None,
                schedule_seed: Optional[int] = None) -> SessionInference:
    """Score and aggregate every trial of a session with the three detectors."""
    if DetectorRole.Onset not in models:
        raise ConfigError("the Onset detector is required")
    onset_model = models[DetectorRole.Onset]
    if onset_model.role is not DetectorRole.Onset:
        raise RoutingError(f"model registered as Onset has role {onset_model.role.value}")
    started = time.perf_counter()
    trials = _segments(rec, subject_id, session_index)
    clock = _Clock()
    tasks = {}
    for seg, batch in trials:
        i = seg.provenance.trial_index
        model = route_trial(seg, models)
        tasks[(i, "trial")] = lambda m=model, s=seg: clock.timed(m.role.value, score_trial, m, s)
        tasks[(i, "windows")] = lambda b=batch: clock.timed("Onset", score_windows, onset_model, b)
    results = _run(tasks, concurrent, max_workers, schedule_seed)
    decisions = tuple(
        TrialDecision(
            trial_index=seg.provenance.trial_index,
            transition_sec=seg.transition_sec,
            **aggregate(
                results[(seg.provenance.trial_index, "trial")],
                results[(seg.provenance.trial_index, "windows")],
                batch.window_start_secs,
            ),
        )
        for seg, batch in trials
    )
    return SessionInference(
        subject_id, session_index, paradigm, decisions, "proposed",
        timing=clock.report(time.perf_counter() - started),
        fingerprints={role.value: m.fingerprint for role, m in sorted(models.items(), key=lambda kv: kv[0].value)},
    )


def run_baseline(rec: EegRecording, model: DetectorModel, *, subject_id: str = "", session_index: int = 0,
                 paradigm: Optional[Paradigm] = None, concurrent: bool = True,
                 max_workers: Optional[int] = None, schedule_seed: Optional[int] = None) -> SessionInference:
    """Conventional protocol: one sliding-window model decides everything."""
    if model.role is not DetectorRole.Onset:
        raise RoutingError(f"the baseline needs an Onset-role model, got {model.role.value}")
    started = time.perf_counter()
    trials = _segments(rec, subject_id, session_index)
    clock = _Clock()
    tasks = {
        seg.provenance.trial_index: (lambda b=batch: clock.timed("Onset", score_windows, model, b))
        for seg, batch in trials
    }
    results = _run(tasks, concurrent, max_workers, schedule_seed)
    decisions = tuple(
        TrialDecision(
            trial_index=seg.provenance.trial_index,
            transition_sec=seg.transition_sec,
            **aggregate_baseline(results[seg.provenance.trial_index], batch.window_start_secs),
        )
        for seg, batch in trials
    )
    return SessionInference(
        subject_id, session_index, paradigm, decisions, "baseline",
        timing=clock.report(time.perf_counter() - started),
        fingerprints={"Onset": model.fingerprint},
    )
