"""Day-type calendar: Monday / Saturday / Holiday dummies."""

from __future__ import annotations

from datetime import date
from pathlib import Path
from typing import Iterable

import numpy as np

# Italian national holidays 2023-2024
DEFAULT_HOLIDAYS = frozenset(
    date.fromisoformat(s)
    for s in [
        "2023-01-01", "2023-01-06", "2023-04-09", "2023-04-10", "2023-04-25", "2023-05-01",
        "2023-06-02", "2023-08-15", "2023-11-01", "2023-12-08", "2023-12-25", "2023-12-26",
        "2024-01-01", "2024-01-06", "2024-03-31", "2024-04-01", "2024-04-25", "2024-05-01",
        "2024-06-02", "2024-08-15", "2024-11-01", "2024-12-08", "2024-12-25", "2024-12-26",
    ]
)

DUMMY_NAMES = ("monday", "saturday", "holiday")


def load_holidays(path) -> frozenset[date]:
    """One ISO date per line; blank lines and ``#`` comments ignored."""
    out = set()
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            out.add(date.fromisoformat(line))
    return frozenset(out)


def day_type(day: date, holidays: Iterable[date] = DEFAULT_HOLIDAYS) -> str:
    if day.weekday() == 6 or day in holidays:
        return "holiday"
    if day.weekday() == 0:
        return "monday"
    if day.weekday() == 5:
        return "saturday"
    return "working"


def calendar_dummies(days: Iterable[date], holidays: Iterable[date] = DEFAULT_HOLIDAYS) -> np.ndarray:
    """``(n_days, 3)`` 0/1 matrix; working days are all zero."""
    holidays = frozenset(holidays)
    days = list(days)
    z = np.zeros((len(days), 3))
    for i, d in enumerate(days):
        kind = day_type(d, holidays)
        if kind != "working":
            z[i, DUMMY_NAMES.index(kind)] = 1.0
    return z


def naive_lag(day: date, holidays: Iterable[date] = DEFAULT_HOLIDAYS) -> int:
    """Days back the naive forecast copies from: a week for Mondays,
    Saturdays, Sundays and holidays, otherwise the previous day."""
    return 1 if day_type(day, holidays) == "working" else 7
