import json
import os

import pytest
from click.testing import CliRunner

from qpme.cli import EXIT_DIVERGED, EXIT_IO, EXIT_OK, EXIT_USAGE, main


@pytest.fixture
def runner():
    return CliRunner()


def train_args(out, extra=()):
    return ["train", "-d", "1", "--steps", "5", "--width", "8",
            "--batch", "32", "--eval-every", "0", "--out", str(out),
            "--no-plot", *extra]


def test_help_screens(runner):
    assert runner.invoke(main, ["--help"]).exit_code == 0
    for cmd in ("train", "evaluate", "sample-check", "fdref"):
        res = runner.invoke(main, [cmd, "--help"])
        assert res.exit_code == 0, cmd


def test_train_writes_artifacts(runner, tmp_path):
    out = tmp_path / "run"
    res = runner.invoke(main, train_args(out))
    assert res.exit_code == EXIT_OK, res.output
    for name in ("model.ckpt", "optimizer.npz", "loss_history.csv",
                 "manifest.json"):
        assert (out / name).exists(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    assert "status ok" in res.output


def test_train_plot_renders_figure(runner, tmp_path):
    out = tmp_path / "run"
    args = [a for a in train_args(out) if a != "--no-plot"]
    res = runner.invoke(main, args)
    assert res.exit_code == EXIT_OK, res.output
    assert (out / "loss_history.png").stat().st_size > 0


def test_train_fixed_seed_reproducible(runner, tmp_path):
    r1 = runner.invoke(main, train_args(tmp_path / "a", ["--seed", "3"]))
    r2 = runner.invoke(main, train_args(tmp_path / "b", ["--seed", "3"]))
    assert r1.exit_code == 0 and r2.exit_code == 0
    csv_a = (tmp_path / "a" / "loss_history.csv").read_text()
    csv_b = (tmp_path / "b" / "loss_history.csv").read_text()
    assert csv_a == csv_b


def test_train_from_config_file(runner, tmp_path):
    cfg = {"formulation": "qsigma", "d": 1, "steps": 3, "width": 8,
           "batch_size": 32, "gamma": 10.0, "eval_every": 0}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "run"
    res = runner.invoke(main, ["train", "--config", str(path), "--out",
                               str(out), "--no-plot"])
    assert res.exit_code == EXIT_OK, res.output
    assert (out / "model_q.ckpt").exists()
    assert (out / "model_sigma.ckpt").exists()


def test_config_rejects_unknown_keys(runner, tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"steps": 3, "bogus_knob": 1}))
    res = runner.invoke(main, ["train", "--config", str(path)])
    assert res.exit_code == EXIT_USAGE
    assert "bogus_knob" in res.output


def test_config_parse_error_reports_line(runner, tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text('{\n  "steps": 3,\n  broken\n}\n')
    res = runner.invoke(main, ["train", "--config", str(path)])
    assert res.exit_code == EXIT_USAGE
    assert "line 3" in res.output


def test_paper_table_flag(runner, tmp_path):
    out = tmp_path / "run"
    res = runner.invoke(main, ["train", "--paper-table", "pinn", "-d", "1",
                               "--steps", "2", "--width", "8", "--batch",
                               "32", "--eval-every", "0", "--out", str(out),
                               "--no-plot"])
    assert res.exit_code == EXIT_OK, res.output
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["formulation"]["nu"] == 1e3


def test_evaluate_run_directory(runner, tmp_path):
    out = tmp_path / "run"
    assert runner.invoke(main, train_args(out)).exit_code == 0
    ev = tmp_path / "eval"
    res = runner.invoke(main, ["evaluate", str(out), "--out", str(ev),
                               "--n", "20", "--no-plot"])
    assert res.exit_code == EXIT_OK, res.output
    assert (ev / "slice.csv").exists()
    report = json.loads((ev / "errors.json").read_text())
    assert 0 < report["rel_l2"] < 10


def test_evaluate_renders_figure(runner, tmp_path):
    out = tmp_path / "run"
    assert runner.invoke(main, train_args(out)).exit_code == 0
    ev = tmp_path / "eval"
    res = runner.invoke(main, ["evaluate", str(out), "--out", str(ev),
                               "--n", "20"])
    assert res.exit_code == EXIT_OK, res.output
    assert (ev / "slice.png").stat().st_size > 0


def test_evaluate_missing_checkpoint_is_io_error(runner, tmp_path):
    res = runner.invoke(main, ["evaluate", str(tmp_path / "nope.ckpt")])
    assert res.exit_code == EXIT_IO


def test_evaluate_foreign_file_is_io_error(runner, tmp_path):
    bogus = tmp_path / "bogus.ckpt"
    bogus.write_bytes(b"garbage")
    res = runner.invoke(main, ["evaluate", str(bogus)])
    assert res.exit_code == EXIT_IO


def test_sample_check_outputs_table(runner, tmp_path):
    dump = tmp_path / "samples.csv"
    res = runner.invoke(main, ["sample-check", "-d", "2", "--n", "2000",
                               "--dump", str(dump), "--no-plot"])
    assert res.exit_code == EXIT_OK, res.output
    assert "V0" in res.output and "KS" in res.output
    assert dump.read_text().startswith("t,x_1,x_2,region,c")


def test_sample_check_rejects_tiny_n(runner):
    res = runner.invoke(main, ["sample-check", "--n", "10"])
    assert res.exit_code == EXIT_USAGE


def test_sample_check_figure(runner, tmp_path):
    res = runner.invoke(main, ["sample-check", "-d", "2", "--n", "2000",
                               "--out", str(tmp_path)])
    assert res.exit_code == EXIT_OK, res.output
    assert (tmp_path / "samples.png").stat().st_size > 0


def test_fdref_waiting_artifacts(runner, tmp_path):
    out = tmp_path / "fd"
    res = runner.invoke(main, ["fdref", "--problem", "waiting", "--h", "0.1",
                               "--t-end", "0.1", "--out", str(out),
                               "--no-plot"])
    assert res.exit_code == EXIT_OK, res.output
    assert (out / "radius.csv").read_text().startswith("t,radius")
    assert (out / "snapshot_t0.csv").exists()
    assert (out / "snapshot_t0.1.csv").exists()


def test_fdref_unstable_dt_is_usage_error(runner, tmp_path):
    res = runner.invoke(main, ["fdref", "--problem", "waiting", "--h", "0.1",
                               "--dt", "1.0", "--t-end", "0.1", "--out",
                               str(tmp_path / "fd"), "--no-plot"])
    assert res.exit_code == EXIT_USAGE
    assert "stability" in res.output


def test_fdref_barenblatt_validation(runner, tmp_path):
    out = tmp_path / "fd"
    res = runner.invoke(main, ["fdref", "--problem", "barenblatt-1d", "--h",
                               "0.05", "--t-end", "0.2", "--out", str(out),
                               "--no-plot"])
    assert res.exit_code == EXIT_OK, res.output
    assert "max-norm error" in res.output
    assert (out / "final.csv").exists()


def test_fdref_figure(runner, tmp_path):
    out = tmp_path / "fd"
    res = runner.invoke(main, ["fdref", "--problem", "waiting", "--h", "0.1",
                               "--t-end", "0.1", "--out", str(out)])
    assert res.exit_code == EXIT_OK, res.output
    assert (out / "snapshots.png").stat().st_size > 0


def test_train_divergence_exit_code(runner, tmp_path):
    out = tmp_path / "run"
    res = runner.invoke(main, ["train", "-d", "1", "--formulation", "phi",
                               "--steps", "40", "--width", "8", "--batch",
                               "32", "--lr", "10.0", "--eval-every", "0",
                               "--out", str(out), "--no-plot"])
    assert res.exit_code == EXIT_DIVERGED
    assert "diverged" in res.output
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "failed"
