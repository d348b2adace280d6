import json
import subprocess
import sys

import pytest

from conftest import TINY
from isacsim.cli import Command, UsageError, main, parse_args
from isacsim.io import read_csv
from isacsim.plotdata import KEYS


def sets(*overrides):
    out = []
    for o in TINY + list(overrides):
        out += ["--set", o]
    return out


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "s.json"
    p.write_text("{}")
    return str(p)


class TestParse:
    def test_run(self, cfg_file):
        cmd = parse_args(["run", "--config", cfg_file, "--seed", "7"])
        assert cmd == Command(verb="run", config=cfg_file, seed=7, out="results")

    def test_overrides(self, cfg_file):
        cmd = parse_args(["run", "--config", cfg_file, "--set", "marl.gamma_long=0.9"])
        assert cmd.overrides == ["marl.gamma_long=0.9"]

    @pytest.mark.parametrize("argv", [[], ["fly"], ["run", "--bogus"], ["plotdata", "--figure", "x"],
                                      ["run", "--config", "/nonexistent/s.json"], ["eval"]])
    def test_usage_errors(self, argv):
        with pytest.raises(UsageError):
            parse_args(argv)

    def test_bad_override_exit_2(self, tmp_path, capsys):
        assert main(["run", "--set", "counts.cavs=zero", "--out", str(tmp_path)]) == 2
        assert "counts.cavs" in capsys.readouterr().err

    def test_missing_config_exit_2(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2


@pytest.fixture(scope="module")
def finished(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["run", *sets("timing.episodes=3"), "--seed", "2", "--out", str(out)]) == 0
    return out


class TestRunAndPlotdata:
    def test_outputs(self, finished):
        for name in ("metrics.csv", "evaluation.csv", "voi.csv", "trace.csv", "checkpoint-3",
                     "config.json"):
            assert (finished / name).exists()
        assert json.loads((finished / "run.json").read_text()) == {"kind": "run", "seed": 2}

    def test_ttc_convergence_rows(self, finished):
        assert main(["plotdata", "--results", str(finished), "--figure", "ttc_convergence"]) == 0
        rows = read_csv(finished / "plotdata" / "ttc_convergence.csv")
        assert [int(r["x"]) for r in rows] == [0, 1, 2]

    @pytest.mark.parametrize("key", [k for k in KEYS if "_vs_" not in k])
    def test_per_run_keys_deterministic(self, finished, tmp_path, key):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["plotdata", "--results", str(finished), "--figure", key, "--out", str(a)]) == 0
        assert main(["plotdata", "--results", str(finished), "--figure", key, "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert a.read_text().splitlines()[0] == "series,x,y"

    def test_unknown_key(self, finished, capsys):
        assert main(["plotdata", "--results", str(finished), "--figure", "nope"]) == 2
        err = capsys.readouterr().err
        assert "ttc_convergence" in err and "input_acceleration" in err

    def test_missing_results_exit_1(self, tmp_path):
        assert main(["plotdata", "--results", str(tmp_path), "--figure", "ttc_convergence"]) == 1

    def test_eval_from_checkpoint(self, finished, tmp_path):
        out = tmp_path / "ev"
        assert main(["eval", str(finished / "checkpoint-3"), *sets(), "--seed", "2",
                     "--out", str(out)]) == 0
        # a restored policy replays the run's own evaluation exactly
        assert (out / "evaluation.csv").read_bytes() == (finished / "evaluation.csv").read_bytes()

    def test_inspect(self, finished, capsys):
        assert main(["inspect", str(finished / "checkpoint-3")]) == 0
        out = capsys.readouterr().out
        assert "format v1" in out and "agent cav0/L" in out
        assert "actor[0] W[" in out and ", 16]" in out

    def test_inspect_truncated(self, finished, tmp_path, capsys):
        bad = tmp_path / "ck"
        bad.write_bytes((finished / "checkpoint-3").read_bytes()[:100])
        assert main(["inspect", str(bad)]) == 1
        assert "format v1" in capsys.readouterr().err


def test_sweep_plotdata(tmp_path):
    for n in (2, 3):
        assert main(["baseline", *sets(f"counts.cavs={n}", "timing.episodes=1"),
                     "--out", str(tmp_path / f"cavs{n}")]) == 0
    assert main(["plotdata", "--results", str(tmp_path), "--figure", "crb_vs_cavs"]) == 0
    rows = read_csv(tmp_path / "plotdata" / "crb_vs_cavs.csv")
    assert {r["series"] for r in rows} == {"baseline:crb_theta", "baseline:crb_d"}
    assert sorted({int(float(r["x"])) for r in rows}) == [2, 3]
    assert main(["plotdata", "--results", str(tmp_path), "--figure", "ttc_vs_hdvs"]) == 0
    assert "desk-scale" in (tmp_path / "plotdata" / "ttc_vs_hdvs.csv").read_text()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "isacsim", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "plotdata" in res.stdout
