import json
import os

import pytest

from app import build_parser, main


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_run_command(tmp_path, capsys):
    code = main(["run", "--out", str(tmp_path), "--seed", "3", "--override", "signal.size=8",
                 "--override", "model.rows=48", "--override", "n_iters=2", "--override", "name=cli"])
    assert code == 0
    with open(tmp_path / "cli" / "summary.json") as fh:
        summary = json.load(fh)
    assert summary["config"]["seed"] == 3
    assert "final_nrmse" in capsys.readouterr().out


def test_run_command_with_config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"name": "fromfile", "n_iters": 1, "signal": {"size": 8},
                                "algorithm": {"name": "admm"}}))
    assert main(["run", "--config", str(path), "--out", str(tmp_path)]) == 0
    assert os.path.exists(tmp_path / "fromfile" / "trace.csv")


@pytest.mark.parametrize("argv", [
    ["run", "--override", "algorithm.name=gd"],
    ["run", "--override", "unknown=1"],
    ["run", "--config", "does-not-exist.json"],
])
def test_config_errors_exit_with_one(argv, tmp_path, capsys):
    assert main([*argv, "--out", str(tmp_path)]) == 1
    assert "Configuration error" in capsys.readouterr().err


def test_missing_background_for_mm_is_a_config_error(tmp_path):
    argv = ["run", "--out", str(tmp_path), "--override", "signal.size=8", "--override", "algorithm.name=mm",
            "--override", "model.background=0", "--override", "n_iters=1"]
    assert main(argv) == 1


def test_check_command(tmp_path, capsys):
    assert main(["check", "--only", "initialization", "adjoint_fidelity", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "PASS  initialization" in out
    with open(tmp_path / "check_report.json") as fh:
        report = json.load(fh)
    assert report["passed"] and [c["name"] for c in report["checks"]] == ["initialization", "adjoint_fidelity"]


def test_suite_command(tmp_path):
    argv = ["suite", "--preset", "poisson_vs_gaussian", "--seeds", "0", "1", "--out", str(tmp_path),
            "--override", "signal.size=8", "--override", "model.rows=48", "--override", "n_iters=2"]
    assert main(argv) == 0
    assert os.path.exists(tmp_path / "suite_poisson_vs_gaussian" / "summary.csv")
