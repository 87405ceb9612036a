"""F-beta scoring and leave-one-session-out evaluation.

Each subject and paradigm is evaluated separately. Each of the four sessions
is held out once while the detectors train on the other three. Trial-level
F2 is computed per held-out session and averaged per subject. The grand
mean and spread are then taken across subject means, with the population
(n) divisor for the standard deviation.
"""

from __future__ import annotations

import json
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .core import EegRecording, Paradigm, SessionManifest
from .detectors import DetectorModel, DetectorRole, train_detectors
from .engine import TrainConfig
from .errors import ProtocolError, UsageError
from .orchestrator import SessionInference, TrialDecision, run_baseline, run_session

BETA = 2.0
ONSET_HIT_SEC = 0.5
METHODS = ("proposed", "baseline")

Session = tuple[EegRecording, SessionManifest]


class ConfusionCounts(NamedTuple):
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other):
        return ConfusionCounts(*(a + b for a, b in zip(self, other)))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def balanced_accuracy(self) -> float:
        tpr = self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0
        tnr = self.tn / (self.tn + self.fp) if self.tn + self.fp else 0.0
        return 0.5 * (tpr + tnr)


def f_beta(counts: ConfusionCounts, beta: float = BETA) -> float:
    """F-beta from confusion counts; empty precision/recall denominators count as 0."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    tp, fp, fn, _ = counts
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision == 0.0 and recall == 0.0:
        return 0.0
    b2 = beta * beta
    return (1 + b2) * (precision * recall) / (b2 * precision + recall)


def confusion(decisions: Sequence[TrialDecision], manifest: SessionManifest) -> ConfusionCounts:
    truth = {t.trial_index: t.target_present for t in manifest.trials}
    tp = fp = fn = tn = 0
    for d in decisions:
        actual = truth[d.trial_index]
        if d.target_present_pred and actual:
            tp += 1
        elif d.target_present_pred:
            fp += 1
        elif actual:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, fn, tn)


class OnsetStats(NamedTuple):
    mean_abs_error_sec: Optional[float]
    hit_rate: Optional[float]
    n: int


def onset_errors(decisions: Sequence[TrialDecision], manifest: SessionManifest) -> list[float]:
    """|predicted - true onset| for every true-positive trial."""
    truth = {t.trial_index: t for t in manifest.trials}
    out = []
    for d in decisions:
        label = truth[d.trial_index]
        if d.target_present_pred and label.target_present and d.onset_pred_sec is not None:
            out.append(abs(d.onset_pred_sec - label.target_onset_sec))
    return out


def summarize_onsets(errors: Sequence[float]) -> OnsetStats:
    if not errors:
        return OnsetStats(None, None, 0)
    errs = np.asarray(errors, dtype=float)
    # tolerance absorbs float noise in start/onset arithmetic
    hits = errs <= ONSET_HIT_SEC + 1e-9
    return OnsetStats(float(errs.mean()), float(hits.mean()), int(errs.size))


def onset_error(decisions: Sequence[TrialDecision], manifest: SessionManifest) -> OnsetStats:
    return summarize_onsets(onset_errors(decisions, manifest))


def loso_folds(sessions: Sequence) -> list[tuple[list, object]]:
    """Four (train, test) splits; session ``i`` is the test set of fold ``i``."""
    if len(sessions) != 4:
        raise ProtocolError(f"leave-one-session-out needs exactly 4 sessions, got {len(sessions)}")
    return [([s for j, s in enumerate(sessions) if j != i], sessions[i]) for i in range(4)]


def derive_seed(master_seed: int, *keys) -> int:
    """Independent 63-bit seed for a (subject, fold, role, ...) key."""
    entropy = [master_seed & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        entropy.append(zlib.crc32(str(k).encode("utf-8")))
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0] >> 1)


@dataclass(frozen=True)
class FoldContext:
    subject_id: str
    paradigm: Paradigm
    fold: int
    master_seed: int
    train_config: TrainConfig
    network: Mapping = field(default_factory=dict)
    concurrent: bool = False

    def config_for(self, role: DetectorRole) -> TrainConfig:
        return self.train_config.replace(
            seed=derive_seed(self.master_seed, self.subject_id, self.paradigm.value, self.fold, role.value)
        )


def roles_for(methods: Sequence[str], paradigm: Paradigm) -> list[DetectorRole]:
    roles = [DetectorRole.Onset]
    if "proposed" in methods:
        roles.append(DetectorRole.Trial05)
        if paradigm is Paradigm.Normal:
            roles.append(DetectorRole.Trial01)
    return roles


def train_fold_models(train_sessions: Sequence[Session], roles: Sequence[DetectorRole],
                      ctx: FoldContext) -> dict[DetectorRole, DetectorModel]:
    return train_detectors(roles, train_sessions, ctx.config_for, ctx.network)


def infer_methods(models: Mapping[DetectorRole, DetectorModel], test: Session, methods: Sequence[str],
                  concurrent: bool = False) -> dict[str, SessionInference]:
    rec, manifest = test
    # only public metadata crosses into inference; labels stay here
    meta = dict(subject_id=manifest.subject_id, session_index=manifest.session_index,
                paradigm=manifest.paradigm, concurrent=concurrent)
    out = {}
    for method in methods:
        if method == "proposed":
            out[method] = run_session(rec, models, **meta)
        elif method == "baseline":
            out[method] = run_baseline(rec, models[DetectorRole.Onset], **meta)
        else:
            raise UsageError(f"unknown method {method!r}; expected one of {METHODS}")
    return out


def train_and_infer(train_sessions: Sequence[Session], test: Session, methods: Sequence[str],
                    ctx: FoldContext) -> dict[str, SessionInference]:
    """Default fold runner: train each needed detector once, then run every method."""
    models = train_fold_models(train_sessions, roles_for(methods, ctx.paradigm), ctx)
    return infer_methods(models, test, methods, ctx.concurrent)


FoldRunner = Callable[[Sequence[Session], Session, Sequence[str], FoldContext], Mapping[str, SessionInference]]


@dataclass(frozen=True)
class FoldResult:
    subject_id: str
    fold: int
    test_session: int
    counts: ConfusionCounts
    f_beta: float
    onset_errors: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "fold": self.fold,
            "test_session": self.test_session,
            "counts": self.counts._asdict(),
            "f_beta": self.f_beta,
            "onset_errors": list(self.onset_errors),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FoldResult":
        return cls(
            subject_id=d["subject_id"],
            fold=int(d["fold"]),
            test_session=int(d["test_session"]),
            counts=ConfusionCounts(**d["counts"]),
            f_beta=float(d["f_beta"]),
            onset_errors=tuple(float(e) for e in d["onset_errors"]),
        )


@dataclass(frozen=True)
class EvalReport:
    paradigm: Paradigm
    method: str
    folds: tuple[FoldResult, ...]
    beta: float = BETA

    @property
    def subjects(self) -> list[str]:
        return sorted({f.subject_id for f in self.folds})

    @property
    def per_subject_fold_f_beta(self) -> dict[str, list[float]]:
        return {s: [f.f_beta for f in self.folds if f.subject_id == s] for s in self.subjects}

    @property
    def per_subject_mean(self) -> dict[str, float]:
        return {s: float(np.mean(v)) for s, v in self.per_subject_fold_f_beta.items()}

    @property
    def grand_mean(self) -> float:
        return float(np.mean(list(self.per_subject_mean.values())))

    @property
    def std(self) -> float:
        return float(np.std(list(self.per_subject_mean.values())))

    @property
    def counts(self) -> ConfusionCounts:
        total = ConfusionCounts()
        for f in self.folds:
            total = total + f.counts
        return total

    @property
    def onset(self) -> OnsetStats:
        return summarize_onsets([e for f in self.folds for e in f.onset_errors])

    def to_dict(self) -> dict:
        onset = self.onset
        return {
            "paradigm": self.paradigm.value,
            "method": self.method,
            "beta": self.beta,
            "grand_mean": self.grand_mean,
            "std": self.std,
            "per_subject_mean": self.per_subject_mean,
            "per_subject_fold_f_beta": self.per_subject_fold_f_beta,
            "counts": self.counts._asdict(),
            "balanced_accuracy": self.counts.balanced_accuracy(),
            "onset": onset._asdict(),
            "folds": [f.to_dict() for f in self.folds],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            paradigm=Paradigm(d["paradigm"]),
            method=d["method"],
            folds=tuple(FoldResult.from_dict(f) for f in d["folds"]),
            beta=float(d.get("beta", BETA)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def evaluate_paradigm(dataset: Mapping[str, Mapping[Paradigm, Sequence[Session]]], paradigm: Paradigm,
                      methods: Sequence[str] = ("proposed",), train_config: TrainConfig = TrainConfig(),
                      network: Mapping | None = None, master_seed: int = 0, *,
                      fold_runner: FoldRunner = train_and_infer, concurrent: bool = False,
                      max_workers: Optional[int] = None) -> dict[str, EvalReport]:
    """LOSO evaluation of one or more methods on one paradigm.

    Methods evaluated together share the detectors trained in each fold
    (the baseline reuses the proposed system's Onset detector, which is
    trained identically either way). With ``concurrent`` set, folds run on
    a thread pool and each session's inference fans out across threads;
    every reported number is unchanged.
    """
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; expected one of {METHODS}")
    jobs = []
    for subject_id in sorted(dataset):
        sessions = dataset[subject_id].get(paradigm, [])
        if len(sessions) != 4:
            raise ProtocolError(
                f"subject {subject_id} has {len(sessions)} {paradigm.value} sessions; need 4"
            )
        for fold, (train_sessions, test) in enumerate(loso_folds(sessions)):
            ctx = FoldContext(subject_id, paradigm, fold, master_seed, train_config, dict(network or {}), concurrent)
            jobs.append((train_sessions, test, ctx))
    if not jobs:
        raise ProtocolError(f"no subjects with {paradigm.value} sessions")

    def run(job):
        train_sessions, test, ctx = job
        inferences = fold_runner(train_sessions, test, methods, ctx)
        manifest = test[1]
        results = {}
        for method in methods:
            decisions = inferences[method].decisions
            if len(decisions) != len(manifest.trials):
                raise ProtocolError(
                    f"{method}: {len(decisions)} decisions for {len(manifest.trials)} trials"
                )
            counts = confusion(decisions, manifest)
            results[method] = FoldResult(
                ctx.subject_id, ctx.fold, manifest.session_index, counts, f_beta(counts),
                tuple(onset_errors(decisions, manifest)),
            )
        return results

    if concurrent:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            fold_results = list(pool.map(run, jobs))
    else:
        fold_results = [run(job) for job in jobs]
    return {
        method: EvalReport(paradigm, method, tuple(r[method] for r in fold_results))
        for method in methods
    }


def evaluate_method(dataset, paradigm: Paradigm, method: str, train_config: TrainConfig = TrainConfig(),
                    **kwargs) -> EvalReport:
    return evaluate_paradigm(dataset, paradigm, (method,), train_config, **kwargs)[method]


# -- reporting --------------------------------------------------------------

def _fmt(x: Optional[float]) -> str:
    return "-" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.4f}"


def render_report(reports: Sequence[EvalReport]) -> tuple[str, str]:
    """Method x paradigm table of F-beta and std, as text and as JSON."""
    if not reports:
        raise ValueError("nothing to render")
    paradigms = [p for p in Paradigm if any(r.paradigm is p for r in reports)]
    methods = list(dict.fromkeys(r.method for r in reports))
    cell = {(r.method, r.paradigm): r for r in reports}
    beta = reports[0].beta

    name_w = max(len("Method"), *(len(m) for m in methods))
    col_w = 19
    header1 = f"{'Method':<{name_w}} |" + "|".join(f" {p.value + ' paradigm':<{col_w - 1}}" for p in paradigms)
    header2 = f"{'':<{name_w}} |" + "|".join(f" {'F' + format(beta, 'g'):<8} {'std.':<{col_w - 10}}" for _ in paradigms)
    rule = "-" * name_w + "-+" + "+".join("-" * col_w for _ in paradigms)
    lines = [header1, header2, rule]
    for m in methods:
        cells = []
        for p in paradigms:
            r = cell.get((m, p))
            f, s = (r.grand_mean, r.std) if r else (None, None)
            cells.append(f" {_fmt(f):<8} {_fmt(s):<{col_w - 10}}")
        lines.append(f"{m:<{name_w}} |" + "|".join(cells))
    text = "\n".join(line.rstrip() for line in lines) + "\n"

    table = {
        "beta": beta,
        "rows": [
            {"method": r.method, "paradigm": r.paradigm.value, "f_beta": r.grand_mean, "std": r.std}
            for r in reports
        ],
        "reports": [r.to_dict() for r in reports],
    }
    return text, json.dumps(table, sort_keys=True, indent=2) + "\n"


def reports_from_json(text: str) -> list[EvalReport]:
    return [EvalReport.from_dict(d) for d in json.loads(text)["reports"]]
