import csv
import io
import json
import subprocess
import sys

import pytest

from mrrxbar import __version__
from mrrxbar.cli import RunConfig, parse_matrix, run

FAST = {
    "spectra": ["--steps", "201"],
    "program": [],
    "transpose": [],
    "mvm": ["--backend", "crossbar", "--matrix", "random4", "--input", "0.5,-0.25,1,0"],
    "train": ["--epochs", "2"],
    "infer": ["--restarts", "1"],
    "bench": ["--n-min", "10", "--n-max", "200", "--points", "5"],
}


def invoke(cmd, out, *extra):
    return run([cmd, "--out", str(out), *FAST[cmd], *extra])


def files(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def rows(path):
    return list(csv.reader(io.StringIO(path.read_text())))


class TestExamples:
    def test_mvm_identity(self, tmp_path, capsys):
        code = run(["mvm", "--matrix", "identity4", "--input", "1,0,0,0", "--backend", "ideal",
                    "--out", str(tmp_path)])
        assert code == 0
        assert capsys.readouterr().out.strip() == "1,0,0,0"
        assert (tmp_path / "mvm.csv").read_text() == "1,0,0,0\n"
        assert json.loads((tmp_path / "mvm.json").read_text())["results"]["passes"] == 4

    def test_mvm_weights_scheme(self, tmp_path, capsys):
        code = run(["mvm", "--matrix", "1,-1;-1,1", "--input", "1,0", "--scheme", "weights",
                    "--out", str(tmp_path)])
        assert code == 0
        assert capsys.readouterr().out.strip() == "1,-1"

    def test_bench_row(self, tmp_path, capsys):
        assert run(["bench", "--n", "100", "--bits", "8", "--out", str(tmp_path)]) == 0
        table = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
        assert len(table) == 1
        assert float(table[0]["required_Q"]) == pytest.approx(2e5, rel=0.1)
        assert float(table[0]["tops"]) == 60
        for name in ("bench_required_q.csv", "bench_efficiency.csv", "bench_training_time.csv",
                     "bench_point.csv", "bench.json"):
            assert (tmp_path / name).exists()
        meta = json.loads((tmp_path / "bench.json").read_text())["results"]["training_time"]
        assert meta["reported_ratio"] == 2000.0

    @pytest.mark.slow
    def test_train_ideal_seed42(self, tmp_path):
        assert run(["train", "--backend", "ideal", "--seed", "42", "--out", str(tmp_path)]) == 0
        curve = rows(tmp_path / "train_curve.csv")
        assert curve[0] == ["round", "loss", "correct_rate"]
        assert len(curve) == 502
        assert float(curve[-1][2]) >= 0.95


class TestCommands:
    def test_spectra(self, tmp_path):
        assert invoke("spectra", tmp_path, "--port", "2") == 0
        table = rows(tmp_path / "spectra_port2.csv")
        assert len(table) == 202

    def test_spectra_bad_port(self, tmp_path):
        assert invoke("spectra", tmp_path, "--port", "9") == 1

    def test_program(self, tmp_path):
        assert invoke("program", tmp_path) == 0
        w = list(csv.DictReader(io.StringIO((tmp_path / "program_weights.csv").read_text())))
        assert len(w) == 16
        for r in w:
            expect = 9.0 if float(r["target"]) == 1 else 5.0
            assert float(r["current_uA"]) == pytest.approx(expect, abs=0.05)
        assert rows(tmp_path / "program_rounds.csv")[0] == ["round", "max_error"]

    def test_program_unit_operating_point(self, tmp_path):
        assert invoke("program", tmp_path, "--operating-point", "unit", "--matrix", "random4") == 0
        report = json.loads((tmp_path / "program.json").read_text())["results"]["report"]
        assert report["converged"]

    def test_transpose(self, tmp_path):
        assert invoke("transpose", tmp_path) == 0
        table = rows(tmp_path / "transpose.csv")
        assert table[0] == ["matrix", "pass", "row", "col", "current_uA"]
        assert len(table) == 1 + 3 * 3 * 16
        res = json.loads((tmp_path / "transpose.json").read_text())["results"]
        assert max(res["max_relative_error"].values()) < 0.05

    def test_train(self, tmp_path):
        assert invoke("train", tmp_path) == 0
        assert len(rows(tmp_path / "train_curve.csv")) == 4

    def test_infer(self, tmp_path, capsys):
        assert invoke("infer", tmp_path, "--backend", "ideal") == 0
        correct, total = map(int, capsys.readouterr().out.strip().split("/"))
        assert total == 100 and correct >= 90
        assert rows(tmp_path / "infer_confusion.csv")[0] == ["true", "pred_0", "pred_1", "pred_2"]

    def test_sidecar_contents(self, tmp_path):
        assert invoke("program", tmp_path) == 0
        side = json.loads((tmp_path / "program.json").read_text())
        assert side["command"] == "program" and side["version"] == __version__
        assert side["files"] == ["program_rounds.csv", "program_weights.csv"]
        assert side["config"] == RunConfig.from_dict(side).to_dict()

    def test_module_entry_point(self, tmp_path):
        out = subprocess.run([sys.executable, "-m", "mrrxbar", "mvm", "--out", str(tmp_path)],
                             capture_output=True, text=True)
        assert out.returncode == 0 and out.stdout.strip() == "1,0,0,0"


class TestExitCodes:
    def test_unknown_flag(self, tmp_path, capsys):
        assert run(["mvm", "--bogus-flag", "3", "--out", str(tmp_path)]) == 1
        assert "--bogus-flag" in capsys.readouterr().err

    def test_missing_command(self, capsys):
        assert run([]) == 1

    def test_bad_choice(self, tmp_path):
        assert run(["mvm", "--backend", "quantum", "--out", str(tmp_path)]) == 1

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"train": {"learnig_rate": 0.1}}))
        assert run(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 1
        assert "learnig_rate" in capsys.readouterr().err

    def test_unknown_top_level_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"sed": 3}))
        assert run(["bench", "--config", str(cfg), "--out", str(tmp_path)]) == 1
        assert "sed" in capsys.readouterr().err

    def test_unreadable_config(self, tmp_path):
        assert run(["bench", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 1

    def test_bad_matrix_text(self, tmp_path):
        assert run(["mvm", "--matrix", "1,x;0,1", "--out", str(tmp_path)]) == 1

    def test_unreachable_target(self, tmp_path, capsys):
        m = "1.5,0,0,0;0,1,0,0;0,0,1,0;0,0,0,1"
        assert run(["program", "--matrix", m, "--operating-point", "unit", "--out", str(tmp_path)]) == 2
        assert "simulation error" in capsys.readouterr().err

    def test_wrong_shape_target(self, tmp_path):
        assert run(["program", "--matrix", "1,0;0,1", "--out", str(tmp_path)]) == 2

    def test_out_of_range_weights(self, tmp_path):
        assert run(["mvm", "--matrix", "2,0;0,1", "--input", "1,0", "--out", str(tmp_path)]) == 2

    def test_bad_bench_range(self, tmp_path):
        assert run(["bench", "--n-min", "1", "--out", str(tmp_path)]) == 1

    def test_missing_dataset(self, tmp_path):
        assert run(["train", "--dataset", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 1

    def test_nothing_written_on_error(self, tmp_path):
        out = tmp_path / "o"
        run(["program", "--matrix", "1,0;0,1", "--out", str(out)])
        assert not out.exists()


class TestReproducibility:
    @pytest.mark.parametrize("cmd", sorted(FAST))
    def test_byte_identical(self, cmd, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        assert invoke(cmd, a) == 0
        assert invoke(cmd, b) == 0
        assert files(a) == files(b)

    @pytest.mark.parametrize("cmd", ["program", "mvm", "bench", "train"])
    def test_sidecar_round_trip(self, cmd, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        assert invoke(cmd, a, "--seed", "7") == 0
        assert run([cmd, "--config", str(a / f"{cmd}.json"), "--out", str(b)]) == 0
        assert files(a) == files(b)

    def test_seed_changes_output(self, tmp_path, capsys):
        assert invoke("mvm", tmp_path / "a", "--seed", "1") == 0
        assert invoke("mvm", tmp_path / "b", "--seed", "2") == 0
        assert files(tmp_path / "a")["mvm.csv"] != files(tmp_path / "b")["mvm.csv"]

    def test_flag_overrides_config(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"bench": {"n": 50}, "seed": 3}))
        assert run(["bench", "--config", str(cfg), "--n", "100", "--out", str(tmp_path)]) == 0
        side = json.loads((tmp_path / "bench.json").read_text())
        assert side["config"]["bench"]["n"] == 100 and side["config"]["seed"] == 3

    def test_env_out_fallback(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("MRRXBAR_OUT", str(tmp_path / "env"))
        monkeypatch.chdir(tmp_path)
        assert run(["mvm"]) == 0
        assert (tmp_path / "env" / "mvm.csv").exists()
        assert run(["mvm", "--out", str(tmp_path / "flag")]) == 0
        assert (tmp_path / "flag" / "mvm.csv").exists()

    def test_cwd_default(self, tmp_path, monkeypatch, capsys):
        monkeypatch.delenv("MRRXBAR_OUT", raising=False)
        monkeypatch.chdir(tmp_path)
        assert run(["mvm"]) == 0
        assert (tmp_path / "mvm.csv").exists()


def test_parse_matrix_forms():
    assert parse_matrix("identity4").shape == (4, 4)
    assert parse_matrix("random3").shape == (3, 3)
    assert parse_matrix("1,2;3,4").tolist() == [[1, 2], [3, 4]]
