"""Time axis, series container and the shared normalisation arithmetic.

Weeks are counted on a global axis whose week 0 is the Monday 2000-01-03.
Yearly series reuse the same container with ``granularity="yearly"`` and an
index counted in 52-week blocks.
"""
from __future__ import annotations

import csv
import datetime as _dt
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

EPOCH = _dt.date(2000, 1, 3)
WEEKS_PER_YEAR = 52
WEEKLY = "weekly"
YEARLY = "yearly"


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class MissingDataError(LookupError):
    """A file, fixture or record the pipeline needs does not exist."""


class NumericError(ArithmeticError):
    """A numerical routine could not produce a finite answer."""


def week_of(date: _dt.date) -> int:
    """Whole weeks elapsed between the epoch Monday and ``date`` (floor)."""
    return (date - EPOCH).days // 7


def monday_of(week: int) -> _dt.date:
    return EPOCH + _dt.timedelta(weeks=int(week))


@dataclass(frozen=True, order=True)
class TimeInterval:
    """Closed week interval ``[start, end]`` with ``start < end``."""

    start: int
    end: int

    def __post_init__(self):
        if not self.start < self.end:
            raise ValidationError(f"interval start {self.start} must precede end {self.end}")

    @property
    def length(self) -> int:
        return self.end - self.start

    def shifted(self, weeks: int) -> "TimeInterval":
        return TimeInterval(self.start + weeks, self.end + weeks)


@dataclass(frozen=True)
class Series:
    """Uniformly sampled real series.

    ``start`` is the absolute index (week or year number) of ``values[0]``.
    """

    start: int
    values: tuple
    granularity: str = WEEKLY

    def __init__(self, start: int, values: Iterable[float], granularity: str = WEEKLY):
        vals = tuple(float(v) for v in values)
        if not vals:
            raise ValidationError("series must be non-empty")
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError("series values must be finite")
        if granularity not in (WEEKLY, YEARLY):
            raise ValidationError(f"unknown granularity {granularity!r}")
        object.__setattr__(self, "start", int(start))
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "granularity", granularity)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def index(self) -> range:
        return range(self.start, self.start + len(self.values))

    def to_numpy(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


@dataclass(frozen=True)
class Probe:
    """The new product: image id, technical-sheet tags and observation week."""

    image_id: str
    tags: tuple
    observation_week: int
    attributes: dict = field(default_factory=dict, compare=False)

    def __init__(self, image_id: str, tags: Sequence[str], observation_week: int,
                 attributes: dict | None = None):
        cleaned = tuple(str(t).strip().lower() for t in tags)
        if not cleaned:
            raise ValidationError(f"probe {image_id!r} has no tags")
        if any(not t for t in cleaned):
            raise ValidationError(f"probe {image_id!r} has a blank tag")
        object.__setattr__(self, "image_id", str(image_id))
        object.__setattr__(self, "tags", cleaned)
        object.__setattr__(self, "observation_week", int(observation_week))
        object.__setattr__(self, "attributes", dict(attributes or {}))


def min_max_normalize(s: Series) -> Series:
    """Rescale to [0, 1]; a constant series maps to all zeros."""
    x = s.to_numpy()
    lo, hi = x.min(), x.max()
    if hi == lo:
        out = np.zeros_like(x)
    else:
        out = (x - lo) / (hi - lo)
    return Series(s.start, out, s.granularity)


def aggregate_yearly(s: Series, weeks_per_year: int = WEEKS_PER_YEAR) -> Series:
    """Mean of consecutive ``weeks_per_year`` blocks, oldest block first.

    The yearly index of the result is ``s.start // weeks_per_year``.
    """
    if s.granularity != WEEKLY:
        raise ValidationError("aggregate_yearly expects a weekly series")
    if weeks_per_year < 1:
        raise ValidationError("weeks_per_year must be >= 1")
    rem = len(s) % weeks_per_year
    if rem:
        raise ValidationError(
            f"series length {len(s)} is not a multiple of {weeks_per_year} (remainder {rem})"
        )
    blocks = s.to_numpy().reshape(-1, weeks_per_year)
    return Series(s.start // weeks_per_year, blocks.mean(axis=1), YEARLY)


def average_series(series: Sequence[Series]) -> Series:
    """Pointwise arithmetic mean of aligned series."""
    if not series:
        raise ValidationError("need at least one series to average")
    first = series[0]
    for s in series[1:]:
        if len(s) != len(first):
            raise ValidationError(f"length mismatch: {len(s)} != {len(first)}")
        if s.granularity != first.granularity or s.start != first.start:
            raise ValidationError("series are not aligned (start/granularity differ)")
    stacked = np.vstack([s.to_numpy() for s in series])
    return Series(first.start, stacked.mean(axis=0), first.granularity)


def fmt(x: float) -> str:
    """Nine significant digits, the precision used by every CSV we write."""
    return format(float(x), ".9g")


def series_to_csv(s: Series) -> str:
    buf = io.StringIO()
    buf.write("index,value\n")
    for i, v in zip(s.index, s.values):
        buf.write(f"{i},{fmt(v)}\n")
    return buf.getvalue()


def series_from_csv(text: str, granularity: str = WEEKLY) -> Series:
    rows = [r for r in csv.reader(line for line in io.StringIO(text) if not line.startswith("#"))]
    if not rows or rows[0] != ["index", "value"]:
        raise ValidationError("series CSV must start with header 'index,value'")
    body = rows[1:]
    if not body:
        raise ValidationError("series CSV has no rows")
    idx = [int(r[0]) for r in body]
    if idx != list(range(idx[0], idx[0] + len(idx))):
        raise ValidationError("series CSV index must be contiguous and ascending")
    return Series(idx[0], (float(r[1]) for r in body), granularity)


def save_series(s: Series, path: str | Path) -> None:
    Path(path).write_text(series_to_csv(s))


def load_series(path: str | Path, granularity: str = WEEKLY) -> Series:
    p = Path(path)
    if not p.exists():
        raise MissingDataError(f"series file not found: {p}")
    return series_from_csv(p.read_text(), granularity)
