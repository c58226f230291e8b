from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from mocforecast.backtest import ExperimentConfig, MarketData
from mocforecast.market_data import generate_synthetic_market

# name -> (passed, detail); filled by tests/test_acceptance.py. ``None``
# marks a criterion that was not run (optional harness without data).
ACCEPTANCE: dict[str, tuple[bool | None, str]] = {}


def record_criterion(name: str, passed: bool | None, detail: str = "") -> None:
    ACCEPTANCE[name] = (None if passed is None else bool(passed), detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE.items():
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        tr.write_line(f"{status}  {name}" + (f"  ({detail})" if detail else ""))


SMOKE_SEED = 7
SMOKE_DAYS = 80
SMOKE_WINDOW = 28


@pytest.fixture(scope="session")
def smoke_market():
    """80 synthetic days as (snapshots, exogenous records)."""
    return generate_synthetic_market(SMOKE_SEED, SMOKE_DAYS)


@pytest.fixture(scope="session")
def smoke_data(smoke_market) -> MarketData:
    return MarketData.from_records(*smoke_market)


def smoke_config(data: MarketData, store: Path, **kw) -> ExperimentConfig:
    """8 test days on a 28-day window (too short for the probabilistic
    stage, which needs 28 days of stored forecasts)."""
    base = dict(
        orders=Path("unused"),
        exogenous=Path("unused"),
        test_start=data.days[44],
        test_end=data.days[51],
        store_dir=store,
        window_days=SMOKE_WINDOW,
        calibration_windows=(28,),
        allow_short_window=True,
        n_simulations=300,
    )
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
