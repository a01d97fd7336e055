import json

from linfdse.cli import main


def test_unknown_subcommand_is_usage_error():
    assert main(["bogus"]) == 2


def test_unknown_flag_is_usage_error():
    assert main(["run", "--case", "case1", "--frobnicate"]) == 2


def test_scenario_source_is_required(tmp_path):
    assert main(["run", "--out", str(tmp_path)]) == 2
    assert main(["run", "--case", "case1", "--config", "x.json", "--out", str(tmp_path)]) == 2


def test_missing_or_malformed_config(tmp_path):
    assert main(["run", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 2
    old = tmp_path / "old.json"
    old.write_text(json.dumps({"schema_version": 99}))
    assert main(["run", "--config", str(old), "--out", str(tmp_path)]) == 2


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == 0
    assert "synthesize" in capsys.readouterr().out


def test_run_writes_report(tmp_path, capsys):
    cfg = tmp_path / "short.json"
    cfg.write_text(json.dumps({"schema_version": 1, "case": "short", "t_span": [0.0, 2.0],
                               "estimators": ["observer", "ekf"]}))
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--seed", "3"]) == 0
    assert (out / "short_observer.csv").exists() and (out / "short_ekf.csv").exists()
    summary = json.loads((out / "short_summary.json").read_text())
    assert summary["seed"] == 3
    assert "observer" in capsys.readouterr().out
