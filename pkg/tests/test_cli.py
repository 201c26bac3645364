import csv
import json
import subprocess
import sys

import pytest

from episodic_bwk import cli
from episodic_bwk.errors import NumericalError


def run(*argv):
    return cli.main(list(argv))


def test_exact_opt_prints_values_and_dumps_table(tmp_path, capsys):
    env_path = tmp_path / "env.json"
    assert run("env", "make", "--kind", "auction", "--param", "H=2", "--param", "L=2",
               "--out", str(env_path)) == 0
    dump = tmp_path / "v.csv"
    assert run("exact-opt", str(env_path), "--budget", "2", "--dump-table", str(dump)) == 0
    out = capsys.readouterr().out
    assert "opt " in out and "fluid_ub " in out
    rows = list(csv.reader(dump.open()))
    assert rows[0] == ["h", "b", "theta", "V"]
    assert len(rows) - 1 == 2 * 5 * 4


def test_exact_opt_on_named_instance(capsys):
    assert run("exact-opt", "paper-c1", "-B", "5") == 0
    assert "opt 14.11041456" in capsys.readouterr().out


def test_simulate_writes_run_log(tmp_path, capsys):
    out = tmp_path / "log.csv"
    assert run("simulate", "--env", "auction", "--agent", "mimic", "--T", "6", "--seed", "2",
               "--budget", "3", "--debug", "--out", str(out)) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 6 and rows[0]["updated"] == "false"
    assert "cumulative regret" in capsys.readouterr().out


def test_bench_writes_outputs(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({
        "env": {"kind": "auction", "H": 3, "L": 2}, "T": 5, "budget": 2, "reps": 2, "seed": 1,
        "oracle": {"oracle": "karm"}, "agents": ["mimic-opt-dp", "oracle-dp"],
    }))
    assert run("bench", "--config", str(cfg), "--out", str(tmp_path / "out")) == 0
    for name in ("per_rep.csv", "aggregate.csv", "regret.svg"):
        assert (tmp_path / "out" / name).exists()


@pytest.mark.parametrize(
    "argv",
    [
        ("exact-opt", "missing.json", "-B", "1"),
        ("exact-opt", "paper-c1", "-B", "9999"),
        ("env", "make", "--kind", "auction", "--param", "colour=red", "--out", "x.json"),
    ],
)
def test_config_errors_exit_2(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert run(*argv) == 2
    assert "error" in capsys.readouterr().err


def test_bad_run_config_exit_2(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text("{not json")
    assert run("bench", "--config", str(cfg), "--out", str(tmp_path)) == 2


def test_numerical_failure_exit_3(monkeypatch, capsys):
    def boom(*args, **kwargs):
        raise NumericalError("no convergence", residual=1.0)

    monkeypatch.setattr(cli, "fluid_ub", boom)
    assert run("exact-opt", "paper-c1", "-B", "5") == 3
    assert "residual" in capsys.readouterr().err


def test_console_script_module_entry():
    proc = subprocess.run([sys.executable, "-m", "episodic_bwk.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "exact-opt" in proc.stdout


@pytest.mark.parametrize("name", ["smoke.json", "auction_c1.json", "pricing_c2.json"])
def test_shipped_configs_load(name):
    from pathlib import Path

    from episodic_bwk.harness import ExperimentConfig

    cfg = ExperimentConfig.load(Path(__file__).parents[1] / "configs" / name)
    assert cfg.T == len(cfg.budgets)
