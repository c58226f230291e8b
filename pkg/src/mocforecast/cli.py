"""Command-line entry point.

Exit codes: 0 success, 1 user error (bad flags, config or paths), 2 data
error (unparseable or gappy input), 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace
from datetime import date, timedelta
from pathlib import Path

from .backtest import BacktestError, ExperimentConfig, forecast_single_day, run_backtest
from .market_data import ConfigurationError, MarketDataError, format_number, generate_synthetic_market, write_dataset
from .models import HOURS
from .reports import ReportError, evaluate_store, write_plot_data

logger = logging.getLogger("mocforecast")

EXIT_OK, EXIT_USER, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _date(text: str) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {text!r}") from None


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--jobs", type=_positive, default=os.cpu_count() or 1, help="worker threads (default: all cores)")
    common.add_argument("--seed", type=int, default=None, help="master seed; overrides the config file")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    common.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")

    p = _Parser(prog="mocforecast", description="Merit-order curve and clearing-price forecasting experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset and a matching config")
    s.add_argument("--days", type=_positive, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--start", type=_date, default=date(2023, 1, 1), help="first day (default 2023-01-01)")

    b = sub.add_parser("backtest", parents=[common], help="run the rolling experiment into a new store")
    b.add_argument("--config", type=Path, required=True)

    f = sub.add_parser("forecast", parents=[common], help="point forecasts for one day")
    f.add_argument("--config", type=Path, required=True)
    f.add_argument("--date", type=_date, required=True)
    f.add_argument("--out", type=Path, default=None, help="CSV path (default: standard output)")

    e = sub.add_parser("evaluate", parents=[common], help="metric tables from a completed store")
    e.add_argument("--store", type=Path, required=True)
    e.add_argument("--out", type=Path, default=None, help="output directory (default: <store>/reports)")

    d = sub.add_parser("plot-data", parents=[common], help="tables plus series for external plotting")
    d.add_argument("--store", type=Path, required=True)
    d.add_argument("--out", type=Path, required=True)
    return p


def _configure_logging(verbose: int, quiet: bool) -> None:
    level = logging.WARNING if quiet else (logging.DEBUG if verbose > 1 else logging.INFO)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level)


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_synth(args) -> int:
    if args.out.exists() and any(args.out.iterdir()):
        raise ConfigurationError(f"{args.out} exists and is not empty")
    from .market_data import SyntheticConfig

    seed = 0 if args.seed is None else args.seed
    snaps, exo = generate_synthetic_market(seed, args.days, SyntheticConfig(start=args.start))
    paths = write_dataset(args.out, snaps, exo)
    end = args.start + timedelta(days=args.days - 1)
    lines = [
        "# synthetic dataset; edit the test period and window before running",
        "data_dir = .",
        f"test_start = {end.isoformat()}",
        f"test_end = {end.isoformat()}",
        "store_dir = store",
        f"seed = {seed}",
    ]
    (args.out / "experiment.cfg").write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("wrote %d days to %s", args.days, ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


def cmd_backtest(args) -> int:
    summary = run_backtest(_load_config(args), jobs=args.jobs)
    logger.info(
        "%d days written to %s; audit %d checks, %d violations; %d probabilistic days",
        summary.days,
        summary.store,
        summary.audit_checks,
        summary.audit_violations,
        summary.probabilistic_days,
    )
    return EXIT_OK if summary.audit_violations == 0 else EXIT_INTERNAL


def cmd_forecast(args) -> int:
    fc = forecast_single_day(_load_config(args), args.date, jobs=args.jobs)
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "model", "price"])
        for model, mf in fc.models.items():
            for h in range(HOURS):
                w.writerow([f"{fc.day.isoformat()}T{h:02d}:00:00Z", model, format_number(mf.prices[h])])
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def cmd_evaluate(args) -> int:
    for path in evaluate_store(args.store, args.out):
        logger.info("wrote %s", path)
    return EXIT_OK


def cmd_plot_data(args) -> int:
    for path in write_plot_data(args.store, args.out):
        logger.info("wrote %s", path)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "backtest": cmd_backtest,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
    "plot-data": cmd_plot_data,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USER
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USER
    _configure_logging(args.verbose, args.quiet)
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, ReportError, FileNotFoundError, NotADirectoryError) as exc:
        logger.error("%s", exc)
        return EXIT_USER
    except MarketDataError as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    except BacktestError as exc:
        cause = exc.__cause__
        if isinstance(cause, MarketDataError):
            logger.error("data error: %s", exc)
            return EXIT_DATA
        logger.exception("backtest failed: %s", exc)
        return EXIT_INTERNAL
    except Exception as exc:  # pragma: no cover - last resort
        logger.exception("internal error: %s", exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
