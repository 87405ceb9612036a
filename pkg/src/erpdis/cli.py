"""Command-line entry point: ``erpdis synth | train | infer | eval | gradcheck``.

All settings live in one JSON run config. Command-line flags override it,
and every command prints the hash of the resolved config so a run can be
matched to its outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .container import read_recording
from .core import Paradigm
from .detectors import DetectorRole, load_bundle, save_bundle, train_detectors
from .engine import TrainConfig
from .engine.gradcheck import TOY_SPEC, grad_check
from .engine.network import loss_and_grads
from .errors import (
    ConfigError,
    ErpError,
    NumericalError,
    PathError,
    ProtocolError,
    UsageError,
)
from .evaluation import METHODS, FoldContext, evaluate_paradigm, loso_folds, render_report
from .orchestrator import run_baseline, run_session
from .synth import SynthConfig, load_dataset, synth_dataset

GRADCHECK_TOL = 1e-3


@dataclass(frozen=True)
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    network: dict = field(default_factory=dict)
    dataset_dir: str = "data"
    models_dir: str = "models"
    reports_dir: str = "reports"
    master_seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {"synth", "train", "network", "paths", "master_seed"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        master_seed = int(d.get("master_seed", 0))
        synth = dict(d.get("synth", {}))
        # the dataset follows the master seed unless pinned separately
        synth.setdefault("seed", master_seed)
        paths = dict(d.get("paths", {}))
        unknown = set(paths) - {"dataset", "models", "reports"}
        if unknown:
            raise ConfigError(f"unknown paths keys: {sorted(unknown)}")
        return cls(
            synth=SynthConfig.from_dict(synth),
            train=TrainConfig.from_dict(dict(d.get("train", {}))),
            network=dict(d.get("network", {})),
            dataset_dir=str(paths.get("dataset", "data")),
            models_dir=str(paths.get("models", "models")),
            reports_dir=str(paths.get("reports", "reports")),
            master_seed=master_seed,
        )

    def to_dict(self) -> dict:
        network = {k: list(v) if isinstance(v, tuple) else v for k, v in self.network.items()}
        return {
            "synth": self.synth.to_dict(),
            "train": self.train.to_dict(),
            "network": network,
            "paths": {"dataset": self.dataset_dir, "models": self.models_dir, "reports": self.reports_dir},
            "master_seed": self.master_seed,
        }

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def load_run_config(path: Optional[str], seed: Optional[int] = None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise PathError(f"cannot read config {path}: {exc.strerror or exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    if seed is not None:
        raw = {**raw, "master_seed": seed}
    try:
        return RunConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def _paradigm(text: str) -> Paradigm:
    try:
        return Paradigm.parse(text)
    except ErpError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _method(text: str) -> str:
    if text not in METHODS:
        raise argparse.ArgumentTypeError(f"unknown method {text!r}; choose from {', '.join(METHODS)}")
    return text


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="run config JSON")
    common.add_argument("--seed", type=int, metavar="N", help="override master_seed")
    common.add_argument("--serial", action="store_true", help="disable all thread-level parallelism")

    parser = _Parser(prog="erpdis", description="Target detection with task-specific ERP detectors.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("synth", parents=[common], help="write the synthetic dataset")

    p = sub.add_parser("train", parents=[common], help="train one LOSO fold's detectors")
    p.add_argument("--subject", required=True, metavar="ID")
    p.add_argument("--paradigm", required=True, type=_paradigm, metavar="normal|ai")
    p.add_argument("--fold", required=True, type=int, metavar="N", help="held-out session index, 0-3")

    p = sub.add_parser("infer", parents=[common], help="run the detectors on one session file")
    p.add_argument("session", metavar="SESSION", help="ERS1 session file")
    p.add_argument("--bundles", required=True, metavar="DIR",
                   help="directory holding one bundle per detector role")
    p.add_argument("--method", type=_method, default="proposed", metavar="proposed|baseline")
    p.add_argument("--subject", metavar="ID", default="")
    p.add_argument("--paradigm", type=_paradigm, metavar="normal|ai")
    p.add_argument("--out", metavar="PATH", help="write JSON here instead of stdout")

    p = sub.add_parser("eval", parents=[common], help="full leave-one-session-out evaluation")
    p.add_argument("--method", type=_method, action="append", metavar="proposed|baseline",
                   help="repeatable; default runs both")
    p.add_argument("--paradigm", type=_paradigm, action="append", metavar="normal|ai",
                   help="repeatable; default runs both")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--batch-norm", choices=("on", "off", "both"), default="both")
    p.add_argument("--corrupt-grad", action="store_true", help=argparse.SUPPRESS)
    return parser


def _echo(cfg: RunConfig) -> None:
    print(f"config {cfg.digest()}", file=sys.stderr)


def _sessions(cfg: RunConfig, subject: str, paradigm: Paradigm):
    dataset = load_dataset(cfg.dataset_dir, (paradigm,))
    if subject not in dataset:
        raise PathError(f"no {paradigm.value} sessions for subject {subject} under {cfg.dataset_dir}")
    return dataset[subject][paradigm]


def fold_dir(cfg: RunConfig, subject: str, paradigm: Paradigm, fold: int) -> Path:
    return Path(cfg.models_dir) / subject / paradigm.value.lower() / f"fold_{fold}"


def cmd_synth(cfg: RunConfig, args) -> int:
    result = synth_dataset(cfg.synth, cfg.dataset_dir)
    total = len(result.paths)
    if result.n_written == 0:
        print(f"{total} sessions unchanged in {cfg.dataset_dir} (seed {cfg.synth.seed})")
    elif result.n_written == total:
        print(f"{total} sessions written to {cfg.dataset_dir} (seed {cfg.synth.seed})")
    else:
        print(f"{result.n_written} sessions written, {total - result.n_written} unchanged "
              f"in {cfg.dataset_dir} (seed {cfg.synth.seed})")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    if not 0 <= args.fold < 4:
        raise UsageError(f"--fold must be 0-3, got {args.fold}")
    sessions = _sessions(cfg, args.subject, args.paradigm)
    train_sessions, _ = loso_folds(sessions)[args.fold]
    ctx = FoldContext(args.subject, args.paradigm, args.fold, cfg.master_seed, cfg.train, cfg.network)
    out = fold_dir(cfg, args.subject, args.paradigm, args.fold)
    models = train_detectors(
        list(DetectorRole), train_sessions, ctx.config_for, cfg.network,
        on_skip=lambda role, exc: print(f"skipped {role.value}: {exc}"),
    )
    for role, model in models.items():
        path = save_bundle(model, out / role.value)
        fp = model.fingerprint
        print(f"{role.value}: {fp['n_examples']} examples ({fp['n_positive']} positive), "
              f"final loss {fp['final_loss']:.4f} -> {path}")
    return 0


def cmd_infer(cfg: RunConfig, args) -> int:
    rec, manifest = read_recording(args.session)
    root = Path(args.bundles)
    if not root.is_dir():
        raise PathError(f"bundle directory {root} does not exist")
    models = {}
    for role in DetectorRole:
        if (root / role.value).is_dir():
            models[role] = load_bundle(root / role.value)
    meta = dict(
        subject_id=args.subject or (manifest.subject_id if manifest else ""),
        session_index=manifest.session_index if manifest else 0,
        paradigm=args.paradigm or (manifest.paradigm if manifest else None),
        concurrent=not args.serial,
    )
    if args.method == "baseline":
        if DetectorRole.Onset not in models:
            raise ConfigError(f"no Onset bundle under {root}")
        result = run_baseline(rec, models[DetectorRole.Onset], **meta)
    else:
        result = run_session(rec, models, **meta)
    text = result.to_json()
    if args.out:
        Path(args.out).write_text(text)
        n_pos = sum(d.target_present_pred for d in result.decisions)
        print(f"{len(result.decisions)} decisions ({n_pos} positive) -> {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    methods = tuple(dict.fromkeys(args.method or METHODS))
    paradigms = list(dict.fromkeys(args.paradigm or Paradigm))
    dataset = load_dataset(cfg.dataset_dir, paradigms)
    if not dataset:
        raise ProtocolError(f"no sessions found under {cfg.dataset_dir}")
    reports = []
    for paradigm in paradigms:
        by_method = evaluate_paradigm(dataset, paradigm, methods, cfg.train, cfg.network, cfg.master_seed,
                                      concurrent=not args.serial)
        for method in methods:
            r = by_method[method]
            print(f"{paradigm.value} {method}: grand F{r.beta:g} {r.grand_mean:.4f} (std {r.std:.4f})")
            reports.append(r)
    text, table = render_report(reports)
    out = Path(cfg.reports_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(table)
        (out / "table.txt").write_text(text)
    except OSError as exc:
        raise PathError(f"cannot write reports to {out}: {exc.strerror or exc}") from exc
    print(text, end="")
    print(f"reports -> {out}")
    return 0


def _corrupted(params, spec, x, y, weights):
    loss, grads = loss_and_grads(params, spec, x, y, weights)
    grads = dict(grads)
    name = next(iter(grads))
    grads[name] = grads[name] * 1.1
    return loss, grads


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    variants = {"on": [True], "off": [False], "both": [True, False]}[args.batch_norm]
    ok = True
    for bn in variants:
        spec = TOY_SPEC.replace(batch_norm=bn)
        result = grad_check(spec, seed=cfg.master_seed, grad_fn=_corrupted if args.corrupt_grad else None)
        verdict = "PASS" if result.passed(GRADCHECK_TOL) else "FAIL"
        ok &= result.passed(GRADCHECK_TOL)
        print(f"batch_norm {'on' if bn else 'off'}: max rel err {result.max_rel_error:.3e} "
              f"({result.worst_param})")
        print(f"max rel err < {GRADCHECK_TOL:g}: {verdict}")
    return 0 if ok else NumericalError.exit_code


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_run_config(args.config, args.seed)
        _echo(cfg)
        return COMMANDS[args.command](cfg, args)
    except ErpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
