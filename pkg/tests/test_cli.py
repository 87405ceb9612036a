import json

import pytest

from erpdis.cli import RunConfig, load_run_config, main
from erpdis.errors import ConfigError


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = {
        "synth": {"n_subjects": 1},
        "train": {"epochs": 1},
        "network": {"block_filters": [4, 4]},
        "paths": {"dataset": str(root / "data"), "models": str(root / "models"),
                  "reports": str(root / "reports")},
        "master_seed": 3,
    }
    path = root / "run.json"
    path.write_text(json.dumps(config))
    assert main(["synth", "--config", str(path)]) == 0
    return root, str(path)


def test_config_defaults_and_hash():
    a = load_run_config(None)
    assert a.master_seed == 0 and a.synth.seed == 0
    b = load_run_config(None, seed=4)
    assert b.master_seed == 4 and b.synth.seed == 4
    assert a.digest() != b.digest()
    assert RunConfig.from_dict(a.to_dict()) == a


def test_unknown_config_key():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"epochs": 3})


def test_synth_messages(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synth": {"n_subjects": 1, "sessions_per_paradigm": 1},
                               "paths": {"dataset": str(tmp_path / "d")}}))
    assert main(["synth", "--config", str(cfg)]) == 0
    first = capsys.readouterr()
    assert "2 sessions written" in first.out
    assert first.err.startswith("config ")
    assert main(["synth", "--config", str(cfg)]) == 0
    assert "2 sessions unchanged" in capsys.readouterr().out


def test_synth_defaults_count(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["synth"]) == 0
    assert "32 sessions written" in capsys.readouterr().out


def test_synth_missing_parent(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"paths": {"dataset": str(tmp_path / "a" / "b")}}))
    assert main(["synth", "--config", str(cfg)]) == 3


def test_usage_errors():
    assert main(["eval", "--method", "magic"]) == 2
    assert main(["train", "--subject", "S01"]) == 2
    assert main(["bogus"]) == 2


def test_missing_config_file(tmp_path):
    assert main(["gradcheck", "--config", str(tmp_path / "nope.json")]) == 3


class TestTrainInfer:
    def test_normal_fold(self, workspace, capsys):
        root, cfg = workspace
        assert main(["train", "--config", cfg, "--subject", "S01", "--paradigm", "normal", "--fold", "1"]) == 0
        fold = root / "models" / "S01" / "normal" / "fold_1"
        assert sorted(p.name for p in fold.iterdir()) == ["Onset", "Trial01", "Trial05"]
        blobs = {p.name: (p / "weights.erpw").read_bytes() for p in fold.iterdir()}
        assert main(["train", "--config", cfg, "--subject", "S01", "--paradigm", "normal", "--fold", "1"]) == 0
        assert blobs == {p.name: (p / "weights.erpw").read_bytes() for p in fold.iterdir()}

    def test_ai_fold_skips_trial01(self, workspace, capsys):
        root, cfg = workspace
        assert main(["train", "--config", cfg, "--subject", "S01", "--paradigm", "ai", "--fold", "0"]) == 0
        assert "skipped Trial01" in capsys.readouterr().out
        fold = root / "models" / "S01" / "ai" / "fold_0"
        assert sorted(p.name for p in fold.iterdir()) == ["Onset", "Trial05"]

    def test_bad_fold(self, workspace):
        _, cfg = workspace
        assert main(["train", "--config", cfg, "--subject", "S01", "--paradigm", "ai", "--fold", "4"]) == 2

    def test_unknown_subject(self, workspace):
        _, cfg = workspace
        assert main(["train", "--config", cfg, "--subject", "S09", "--paradigm", "ai", "--fold", "0"]) == 3

    def test_infer(self, workspace, capsys):
        root, cfg = workspace
        main(["train", "--config", cfg, "--subject", "S01", "--paradigm", "normal", "--fold", "2"])
        capsys.readouterr()
        session = root / "data" / "S01" / "normal" / "session_2.ers1"
        bundles = root / "models" / "S01" / "normal" / "fold_2"
        assert main(["infer", str(session), "--bundles", str(bundles), "--config", cfg]) == 0
        result = json.loads(capsys.readouterr().out)
        assert len(result["decisions"]) == 16 and result["method"] == "proposed"
        assert main(["infer", str(session), "--bundles", str(bundles), "--method", "baseline", "--serial"]) == 0
        assert json.loads(capsys.readouterr().out)["method"] == "baseline"

    def test_infer_missing_onset(self, workspace, tmp_path):
        root, cfg = workspace
        main(["train", "--config", cfg, "--subject", "S01", "--paradigm", "normal", "--fold", "0"])
        partial = tmp_path / "partial"
        partial.mkdir()
        (partial / "Trial05").symlink_to(root / "models" / "S01" / "normal" / "fold_0" / "Trial05")
        session = root / "data" / "S01" / "normal" / "session_0.ers1"
        assert main(["infer", str(session), "--bundles", str(partial)]) == 6

    def test_infer_corrupt_file(self, workspace, tmp_path, capsys):
        root, _ = workspace
        bad = tmp_path / "bad.ers1"
        bad.write_bytes((root / "data" / "S01" / "ai" / "session_0.ers1").read_bytes()[:500])
        assert main(["infer", str(bad), "--bundles", str(tmp_path)]) == 3
        assert "bad.ers1" in capsys.readouterr().err


def test_eval_writes_reports(workspace, capsys):
    root, cfg = workspace
    assert main(["eval", "--config", cfg, "--paradigm", "ai", "--serial"]) == 0
    out = capsys.readouterr().out
    assert "AI proposed: grand F2" in out and "AI baseline: grand F2" in out
    table = json.loads((root / "reports" / "report.json").read_text())
    assert {(r["method"], r["paradigm"]) for r in table["rows"]} == {("proposed", "AI"), ("baseline", "AI")}
    assert (root / "reports" / "table.txt").read_text().startswith("Method")


class TestGradcheck:
    def test_pass(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert out.count("max rel err < 0.001: PASS") == 2

    def test_batch_norm_off(self, capsys):
        assert main(["gradcheck", "--batch-norm", "off"]) == 0
        assert "batch_norm off" in capsys.readouterr().out

    def test_corrupted_gradient_fails(self, capsys):
        assert main(["gradcheck", "--corrupt-grad", "--batch-norm", "on"]) == 5
        assert "FAIL" in capsys.readouterr().out
