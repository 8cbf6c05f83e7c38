import csv
import json

import numpy as np
import pytest

from tempohier import cli
from tempohier.cli import RunConfig, UsageError, main
from tempohier.data import load_m5
from tempohier.hierarchy import HierarchySpec, bin_average


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--series", "24", "--days", "200", "--seed", "1", "--out", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def trained(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--data-dir", str(data_dir), "--model", "encdec", "--lr", "4e-3",
                 "--epochs", "2", "--seed", "7", "--out", str(out)])
    assert code == 0
    return out


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_synth_files_are_reproducible(data_dir, tmp_path):
    names = sorted(p.name for p in data_dir.iterdir())
    assert names == ["calendar.csv", "sales_train_evaluation.csv", "sell_prices.csv"]
    assert main(["synth", "--series", "24", "--days", "200", "--seed", "1", "--out", str(tmp_path)]) == 0
    for n in names:
        assert (tmp_path / n).read_bytes() == (data_dir / n).read_bytes()
    assert load_m5(data_dir).n_series == 24


def test_train_outputs(trained):
    for name in ("model.ckpt", "history.csv", "run_config.txt", "training.png"):
        assert (trained / name).stat().st_size > 0
    assert len(read_rows(trained / "history.csv")) == 3


def test_config_echo_round_trips(trained):
    echo = RunConfig.from_text((trained / "run_config.txt").read_text())
    assert echo.lr == 4e-3 and echo.rescale is False and echo.seed == 7
    assert RunConfig.from_text(echo.to_text()) == echo


def test_same_seed_same_checkpoint(data_dir, trained, tmp_path):
    code = main(["train", "--data-dir", str(data_dir), "--model", "encdec", "--lr", "4e-3",
                 "--epochs", "2", "--seed", "7", "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "model.ckpt").read_bytes() == (trained / "model.ckpt").read_bytes()


def test_defaults_follow_model_and_loss():
    cfg = cli.config_from_args(["train", "--model", "encdec", "--loss", "mse"])[0].resolved()
    assert (cfg.lr, cfg.rescale) == (1e-4, False)
    cfg = cli.config_from_args(["train", "--model", "mono", "--loss", "nbnll"])[0].resolved()
    assert (cfg.lr, cfg.rescale) == (1e-3, True)


def test_flags_override_config_file(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("# grid cell\nlr=0.004\nrescale=yes\nepochs=3\n")
    cfg, _ = cli.config_from_args(["train", "--config", str(conf), "--epochs", "9"])
    assert (cfg.lr, cfg.rescale, cfg.epochs) == (0.004, True, 9)


def test_unknown_config_key_rejected(tmp_path):
    with pytest.raises(UsageError, match="hidden_units"):
        RunConfig.from_mapping({"hidden_units": "8"})
    conf = tmp_path / "bad.conf"
    conf.write_text("hidden_units=8\n")
    assert main(["train", "--config", str(conf)]) == 1


def test_exit_codes(tmp_path, data_dir, capsys):
    assert main(["train", "--data-dir", str(tmp_path / "nope"), "--epochs", "1"]) == 2
    assert "data error" in capsys.readouterr().err
    assert main(["train", "--loss", "mae"]) == 1
    assert main([]) == 1
    assert main(["train"]) == 1  # no data directory
    assert main(["evaluate", "--data-dir", str(data_dir), "--checkpoint", str(tmp_path / "x.ckpt"),
                 "--out", str(tmp_path)]) == 2
    assert main(["forecast", "--data-dir", str(data_dir), "--out", str(tmp_path)]) == 1


def test_evaluate_writes_finite_report(data_dir, trained, tmp_path, capsys):
    code = main(["evaluate", "--data-dir", str(data_dir), "--checkpoint", str(trained / "model.ckpt"),
                 "--out", str(tmp_path), "--audit-coherence"])
    assert code == 0
    report = json.loads((tmp_path / "metrics.json").read_text())
    assert set(report) == {"wrmsse", "rmse_daily", "rmse_weekly", "rmse_residual", "mfev", "mad"}
    assert all(np.isfinite(v) for v in report.values())
    assert (tmp_path / "forecasts.png").stat().st_size > 0
    assert "wrmsse=" in capsys.readouterr().out


def test_evaluate_baseline_without_checkpoint(data_dir, tmp_path):
    assert main(["evaluate", "--data-dir", str(data_dir), "--model", "ctxwindavg", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "metrics.txt").read_text().startswith("wrmsse=")


def test_forecast_files_and_scoring(data_dir, trained, tmp_path):
    ckpt = str(trained / "model.ckpt")
    args = ["forecast", "--data-dir", str(data_dir), "--checkpoint", ckpt, "--audit-coherence"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    daily, weekly = tmp_path / "a" / "forecast_daily.csv", tmp_path / "a" / "forecast_weekly.csv"
    assert daily.read_bytes() == (tmp_path / "b" / "forecast_daily.csv").read_bytes()
    d_rows, w_rows = read_rows(daily), read_rows(weekly)
    assert len(d_rows) == 25 and len(w_rows) == 25
    assert d_rows[0] == ["id"] + [f"F{i}" for i in range(1, 29)]
    assert w_rows[0] == ["id", "W1", "W2", "W3", "W4"]
    fine = np.array([[float(v) for v in r[1:]] for r in d_rows[1:]])
    coarse = np.array([[float(v) for v in r[1:]] for r in w_rows[1:]])
    assert np.abs(bin_average(fine, HierarchySpec()) - coarse).max() <= 1e-6
    assert all(len(v.split(".")[1]) == 6 for v in d_rows[1][1:])

    model_eval = tmp_path / "m"
    file_eval = tmp_path / "f"
    assert main(["evaluate", "--data-dir", str(data_dir), "--checkpoint", ckpt, "--out", str(model_eval)]) == 0
    assert main(["evaluate", "--data-dir", str(data_dir), "--forecast-file", str(daily), "--out", str(file_eval)]) == 0
    a = json.loads((model_eval / "metrics.json").read_text())
    b = json.loads((file_eval / "metrics.json").read_text())
    for k in a:
        assert a[k] == pytest.approx(b[k], abs=1e-5)


def test_coherence_audit_failure_is_numeric(data_dir, tmp_path, monkeypatch):
    def broken(cfg, ds, origin, spec):
        fine = np.ones((ds.n_series, spec.h))
        return fine, np.full((ds.n_series, spec.k), 2.0)

    monkeypatch.setattr(cli, "_model_forecasts", broken)
    code = main(["forecast", "--data-dir", str(data_dir), "--model", "ctxwindavg", "--audit-coherence",
                 "--out", str(tmp_path)])
    assert code == 3


def test_unwritable_output(data_dir, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["synth", "--out", str(blocker / "sub")]) == 2
