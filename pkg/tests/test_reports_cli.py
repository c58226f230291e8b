import csv

import numpy as np
import pytest
from conftest import smoke_config

from mocforecast.backtest import ForecastStore, run_backtest
from mocforecast.cli import EXIT_DATA, EXIT_OK, EXIT_USER, main
from mocforecast.evaluation import point_metrics
from mocforecast.market_data import ConfigurationError
from mocforecast.reports import evaluate_store, write_plot_data


@pytest.fixture(scope="module")
def small_store(smoke_data, tmp_path_factory):
    store = tmp_path_factory.mktemp("rep") / "store"
    cfg = smoke_config(smoke_data, store, models=("fpca-arx", "zst-arx", "price-arx", "naive"))
    run_backtest(cfg, smoke_data)
    return store


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_point_metrics_table_matches_direct_computation(small_store):
    evaluate_store(small_store)
    rows = {r["model"]: r for r in _rows(small_store / "reports" / "point_metrics.csv")}
    assert set(rows) == {"fpca-arx", "zst-arx", "price-arx", "naive"}
    assert float(rows["naive"]["rmae"]) == 1.0
    store = ForecastStore(small_store)
    _, actual = store.read_actual()
    _, naive = store.read_points("naive")
    _, pred = store.read_points("price-arx")
    ref = point_metrics(pred, actual, naive)
    assert float(rows["price-arx"]["mae"]) == pytest.approx(ref.mae, rel=1e-12)
    r2 = {r["model"]: r for r in _rows(small_store / "reports" / "curve_r2.csv")}
    assert set(r2) >= {"fpca-arx", "zst-arx"} and float(r2["fpca-arx"]["supply_r2"]) <= 1
    # 8 days: too short for DM tables
    assert not (small_store / "reports" / "dm_prices.csv").exists()


def test_plot_data(small_store, tmp_path):
    paths = write_plot_data(small_store, tmp_path / "plots")
    names = {p.name for p in paths}
    assert {"r2_function.csv", "pit_histogram.csv", "daily_absolute_loss.csv", "mae_by_hour.csv"} <= names
    assert len(_rows(tmp_path / "plots" / "daily_absolute_loss.csv")) == 8
    assert len(_rows(tmp_path / "plots" / "r2_function.csv")) == 301


def test_missing_store_is_an_error(tmp_path):
    with pytest.raises(ConfigurationError):
        evaluate_store(tmp_path / "nothing")


# command line


def test_help_exits_zero(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "backtest" in capsys.readouterr().out


def test_bad_flags_exit_one():
    assert main(["synth", "--days", "0", "--out", "x"]) == EXIT_USER
    assert main(["frobnicate"]) == EXIT_USER


def test_missing_config_exits_one(tmp_path):
    assert main(["backtest", "--config", str(tmp_path / "nope.cfg"), "-q"]) == EXIT_USER


def test_synth_then_evaluate(tmp_path, small_store):
    out = tmp_path / "synth"
    assert main(["synth", "--days", "10", "--out", str(out), "--seed", "3", "-q"]) == EXIT_OK
    assert (out / "orders.csv").exists() and (out / "exogenous.csv").exists()
    assert "test_start" in (out / "experiment.cfg").read_text()
    # refuses to overwrite
    assert main(["synth", "--days", "10", "--out", str(out), "-q"]) == EXIT_USER
    assert main(["evaluate", "--store", str(small_store), "--out", str(tmp_path / "r"), "-q"]) == EXIT_OK
    assert (tmp_path / "r" / "point_metrics.csv").exists()
    assert main(["evaluate", "--store", str(tmp_path / "none"), "-q"]) == EXIT_USER


def test_backtest_with_too_little_history(tmp_path):
    out = tmp_path / "synth"
    assert main(["synth", "--days", "10", "--out", str(out), "-q"]) == EXIT_OK
    # the generated config points at the last day with a 364-day window
    assert main(["backtest", "--config", str(out / "experiment.cfg"), "-q"]) == EXIT_USER


def test_corrupt_orders_exit_two(tmp_path):
    out = tmp_path / "synth"
    assert main(["synth", "--days", "40", "--out", str(out), "-q"]) == EXIT_OK
    lines = (out / "orders.csv").read_text().splitlines()
    lines[5] = lines[5].split(",")[0] + ",garbage"
    (out / "orders.csv").write_text("\n".join(lines) + "\n")
    cfg = out / "experiment.cfg"
    cfg.write_text(cfg.read_text() + "window_days = 28\nallow_short_window = true\n")
    assert main(["backtest", "--config", str(cfg), "-q"]) == EXIT_DATA


def test_forecast_one_day(tmp_path):
    out = tmp_path / "synth"
    assert main(["synth", "--days", "40", "--out", str(out), "-q"]) == EXIT_OK
    cfg = out / "experiment.cfg"
    cfg.write_text(cfg.read_text() + "window_days = 28\nallow_short_window = true\nmodels = naive, price-arx\n")
    dest = tmp_path / "fc.csv"
    assert main(["forecast", "--config", str(cfg), "--date", "2023-02-09", "--out", str(dest), "-q"]) == EXIT_OK
    rows = _rows(dest)
    assert len(rows) == 48 and {r["model"] for r in rows} == {"naive", "price-arx"}
    assert np.all(np.isfinite([float(r["price"]) for r in rows]))
