import json

import numpy as np
import pytest

from pulseqml import cli, model


def _run(tmp_path, *argv):
    return cli.main(["--outdir", str(tmp_path / "runs"), *argv])


def _only_run_dir(tmp_path, prefix):
    dirs = sorted((tmp_path / "runs").glob(f"{prefix}-*"))
    assert len(dirs) == 1
    return dirs[0]


class TestLie:
    @pytest.mark.parametrize(
        "mid,n,dim,var",
        [("builtin:1", 5, 3, 1 / 3), ("builtin:3", 6, 15, 1 / 15), ("builtin:4", 3, 63, 1 / 9)],
    )
    def test_table_rows(self, tmp_path, capsys, mid, n, dim, var):
        assert _run(tmp_path, "lie", "--model", mid, "--n", str(n)) == cli.EXIT_OK
        out = capsys.readouterr().out
        assert f"dim: {dim}" in out
        summary = json.loads((_only_run_dir(tmp_path, "lie") / "summary.json").read_text())
        assert summary["dim"] == dim
        assert summary["variance"] == pytest.approx(var, abs=1e-10)

    def test_cap_exceeded_names_controllability(self, tmp_path, capsys):
        code = _run(tmp_path, "lie", "--model", "builtin:4", "--n", "2", "--max-dim", "8")
        assert code == cli.EXIT_ERROR
        assert "controllable" in capsys.readouterr().err

    def test_model_file(self, tmp_path, capsys):
        path = tmp_path / "m.json"
        model.save(model.paper_model(2, n=3), path)
        assert _run(tmp_path, "lie", "--model", str(path)) == cli.EXIT_OK
        assert "dim: 9" in capsys.readouterr().out

    def test_missing_file(self, tmp_path, capsys):
        assert _run(tmp_path, "lie", "--model", str(tmp_path / "nope.json")) == cli.EXIT_ERROR


class TestExpress:
    def test_ground_state_exits_two(self, tmp_path, capsys):
        code = _run(tmp_path, "express", "--model", "builtin:eq13", "--initial", "00", "--cutoff", "4")
        assert code == cli.EXIT_FAIL
        report = json.loads((_only_run_dir(tmp_path, "express") / "report.json").read_text())
        failed = [tuple(r["degrees"]) for r in report["rows"] if not r["passed"]]
        assert failed == [(1,), (3,)]

    def test_paper_state_exits_zero(self, tmp_path, capsys):
        assert _run(tmp_path, "express", "--model", "builtin:eq13", "--cutoff", "6") == cli.EXIT_OK

    def test_cutoff_zero_single_row(self, tmp_path, capsys):
        assert _run(tmp_path, "express", "--model", "builtin:eq13", "--cutoff", "0") == cli.EXIT_OK
        report = json.loads((_only_run_dir(tmp_path, "express") / "report.json").read_text())
        assert [r["degrees"] for r in report["rows"]] == [[0]]

    def test_dyson_column(self, tmp_path, capsys):
        _run(tmp_path, "express", "--model", "builtin:eq13", "--cutoff", "2", "--dyson-crosscheck")
        assert "|coef|" in capsys.readouterr().out

    def test_negative_cutoff(self, tmp_path, capsys):
        assert _run(tmp_path, "express", "--model", "builtin:eq13", "--cutoff", "-1") == cli.EXIT_ERROR


class TestTrain:
    ARGS = ["train", "--model", "builtin:eq13", "--target", "eq14", "--points", "6", "--T", "0.4",
            "--iters", "4", "--backend", "fd", "--seed", "2"]

    def test_outputs_and_manifest(self, tmp_path, capsys):
        assert _run(tmp_path, *self.ARGS) == cli.EXIT_OK
        run = _only_run_dir(tmp_path, "train")
        manifest = json.loads((run / "manifest.json").read_text())
        assert set(manifest["outputs"]) == {"loss.csv", "fit.csv", "pulses.csv", "model.json"}
        assert manifest["seed"] == 2 and manifest["command"] == "train"
        assert all((run / f).exists() for f in manifest["outputs"])
        loss = np.loadtxt(run / "loss.csv", delimiter=",", skiprows=1)
        assert loss.shape == (4, 2)
        fit = (run / "fit.csv").read_text().splitlines()
        assert fit[0] == "x1,target,fitted" and len(fit) == 7
        trained = model.load(run / "model.json")
        assert trained.schedule.K == 4

    def test_rerun_is_byte_identical(self, tmp_path, capsys):
        _run(tmp_path, *self.ARGS)
        run = _only_run_dir(tmp_path, "train")
        first = {f: (run / f).read_bytes() for f in ("loss.csv", "fit.csv", "pulses.csv", "model.json")}
        hash1 = json.loads((run / "manifest.json").read_text())["config_hash"]
        _run(tmp_path, *self.ARGS)
        assert _only_run_dir(tmp_path, "train") == run
        for f, content in first.items():
            assert (run / f).read_bytes() == content
        assert json.loads((run / "manifest.json").read_text())["config_hash"] == hash1

    def test_freeze(self, tmp_path, capsys):
        args = ["train", "--model", "builtin:eq15", "--target", "eq17", "--points", "3", "--T", "0.3",
                "--iters", "2", "--freeze", "theta1,theta2=1"]
        assert _run(tmp_path, *args) == cli.EXIT_OK
        trained = model.load(_only_run_dir(tmp_path, "train") / "model.json")
        np.testing.assert_array_equal(trained.schedule.amplitudes[:2], 1.0)
        assert not trained.schedule.tunable[:2].any()

    def test_empty_dataset(self, tmp_path, capsys):
        data = tmp_path / "empty.csv"
        data.write_text("x1,y\n")
        assert _run(tmp_path, "train", "--model", "builtin:eq13", "--target", str(data)) == cli.EXIT_ERROR
        assert "empty" in capsys.readouterr().err

    def test_parse_freeze_indices(self):
        spec = cli.parse_freeze("2=0.5", model.paper_model("eq13", T=0.2))
        np.testing.assert_array_equal(spec.schedule.amplitudes[2], 0.5)
        assert not spec.schedule.tunable[2].any()
        with pytest.raises(cli.CLIError):
            cli.parse_freeze("9", model.paper_model("eq13", T=0.2))


class TestSweep:
    def test_fig4a_loose_threshold_gives_smallest_duration(self, tmp_path, capsys):
        args = ["sweep", "fig4a", "--models", "1,2", "--n-range", "2", "--points", "8", "--iters", "5",
                "--t-grid", "0.5,1.0", "--threshold", "1e3"]
        assert _run(tmp_path, *args) == cli.EXIT_OK
        lines = (_only_run_dir(tmp_path, "sweep-fig4a") / "summary.csv").read_text().splitlines()
        assert lines[0].startswith("model,n,seed,min_T")
        for row in lines[1:]:
            assert row.split(",")[3] == "0.5"

    def test_fig4a_unreachable_threshold_is_recorded(self, tmp_path, capsys):
        args = ["sweep", "fig4a", "--models", "1", "--n-range", "2", "--points", "8", "--iters", "2",
                "--t-grid", "0.5", "--threshold", "1e-12"]
        assert _run(tmp_path, *args) == cli.EXIT_OK
        row = (_only_run_dir(tmp_path, "sweep-fig4a") / "summary.csv").read_text().splitlines()[1].split(",")
        assert row[3] == "" and row[5] == "false"

    def test_fig4b_trace(self, tmp_path, capsys):
        args = ["sweep", "fig4b", "--models", "1", "--n-range", "2", "--points", "4", "--draws", "40",
                "--T0", "1", "--variance-T-max", "3"]
        assert _run(tmp_path, *args) == cli.EXIT_OK
        row = (_only_run_dir(tmp_path, "sweep-fig4b") / "summary.csv").read_text().splitlines()[1].split(",")
        assert float(row[3]) > 0
        assert ":" in row[6]

    def test_t_grid(self):
        grid = cli.t_grid()
        assert grid[0] == pytest.approx(0.5) and grid[-1] == pytest.approx(40.0)
        assert np.all(np.diff(grid) > 0)
        ks = np.array(grid) / 0.1
        np.testing.assert_allclose(ks, np.round(ks), atol=1e-9)


class TestExport:
    def test_round_trip(self, tmp_path):
        out = tmp_path / "m4.json"
        assert cli.main(["export", "--model", "builtin:4", "--n", "2", "--T", "0.3", "--out", str(out)]) == 0
        spec = model.load(out)
        ref = model.paper_model(4, n=2, T=0.3)
        assert model.dumps(spec) == model.dumps(ref)


def test_config_hash_is_order_independent():
    assert cli.config_hash({"a": 1, "b": [1, 2]}) == cli.config_hash({"b": [1, 2], "a": 1})
    assert cli.config_hash({"a": 1}) != cli.config_hash({"a": 2})


def test_outdir_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.OUTDIR_ENV, str(tmp_path / "envruns"))
    assert cli.main(["lie", "--model", "builtin:1", "--n", "2"]) == 0
    assert list((tmp_path / "envruns").glob("lie-*/manifest.json"))
