"""Ingest JHU-style cumulative case tables and turn them into daily count series.

The observation domain handed to the kernel regression is always the unit
interval; the affine map back to day units is kept on the series so that
simulators can be evaluated in their natural time scale.
"""
from __future__ import annotations

import csv
import datetime as dt
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, NotFound, RangeError

_META_COLUMNS = 4  # Province/State, Country/Region, Lat, Long


@dataclass(frozen=True)
class CumulativeSeries:
    country: str
    dates: tuple[dt.date, ...]
    cumulative: tuple[int, ...]

    def __post_init__(self):
        if len(self.dates) != len(self.cumulative):
            raise FormatError("dates and cumulative counts differ in length")
        for d0, d1 in zip(self.dates, self.dates[1:]):
            if (d1 - d0).days != 1:
                raise FormatError(f"dates are not consecutive days: {d0} -> {d1}")


@dataclass(frozen=True)
class TimeSeries:
    """Daily counts on the unit interval.

    ``x`` lives in [0, 1]; ``origin + scale * x`` gives the time in days
    relative to ``day0`` (so the first observation sits at day 0).
    """

    x: np.ndarray
    y: np.ndarray
    clamp_count: int = 0
    origin: float = 0.0
    scale: float = 1.0
    day0: dt.date | None = None
    country: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y)
        if x.shape != y.shape or x.ndim != 1:
            raise FormatError("x and y must be 1-d arrays of equal length")
        if np.any(y < 0):
            raise FormatError("counts must be non-negative")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y.astype(float))

    @property
    def n(self) -> int:
        return int(self.x.size)

    @property
    def days(self) -> np.ndarray:
        """Observation times in the simulator's time units."""
        return self.to_natural(self.x)

    def to_natural(self, z):
        return self.origin + self.scale * np.asarray(z, dtype=float)

    @property
    def domain(self) -> tuple[float, float]:
        return self.origin, self.origin + self.scale

    def to_json(self, start=None, end=None) -> dict:
        return {
            "country": self.country,
            "start": None if start is None else start.isoformat(),
            "end": None if end is None else end.isoformat(),
            "x": self.x.tolist(),
            "y": [int(v) for v in self.y],
            "clamp_count": int(self.clamp_count),
            "day0": None if self.day0 is None else self.day0.isoformat(),
            "origin": self.origin,
            "scale": self.scale,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TimeSeries":
        day0 = doc.get("day0")
        return cls(
            x=np.asarray(doc["x"], dtype=float),
            y=np.asarray(doc["y"], dtype=float),
            clamp_count=int(doc.get("clamp_count", 0)),
            origin=float(doc.get("origin", 0.0)),
            scale=float(doc.get("scale", len(doc["x"]) - 1 or 1)),
            day0=None if day0 is None else dt.date.fromisoformat(day0),
            country=doc.get("country", ""),
        )


def _parse_date(text: str) -> dt.date:
    try:
        return dt.datetime.strptime(text.strip(), "%m/%d/%y").date()
    except ValueError as exc:
        raise FormatError(f"unparseable date column {text!r}") from exc


def parse_cumulative_csv(raw: bytes | str, country: str) -> CumulativeSeries:
    """Sum every row of ``country`` in a JHU global time-series table."""
    text = raw.decode("utf-8-sig") if isinstance(raw, bytes) else raw
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise FormatError("empty CSV")
    header = rows[0]
    if len(header) <= _META_COLUMNS:
        raise FormatError("header has no date columns")
    dates = tuple(_parse_date(h) for h in header[_META_COLUMNS:])

    total = None
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise FormatError(f"row {lineno} has {len(row)} fields, expected {len(header)}")
        if row[1].strip() != country:
            continue
        try:
            values = np.array([int(float(v)) for v in row[_META_COLUMNS:]], dtype=np.int64)
        except ValueError as exc:
            raise FormatError(f"non-numeric count on row {lineno}") from exc
        total = values if total is None else total + values
    if total is None:
        raise NotFound(f"country {country!r} not found")
    return CumulativeSeries(country, dates, tuple(int(v) for v in total))


def to_daily_increments(s: CumulativeSeries, start: dt.date, end: dt.date) -> TimeSeries:
    """Daily new cases for the calendar days ``start .. end``.

    The cumulative total of the day before ``start`` is the baseline when the
    table has it; otherwise ``start`` itself is the baseline and the first
    count is for ``start + 1``. Negative revisions are clamped to zero.
    """
    if not start < end:
        raise RangeError("start must precede end")
    if start not in s.dates or end not in s.dates:
        raise RangeError(f"window {start}..{end} outside {s.dates[0]}..{s.dates[-1]}")
    i0 = max(s.dates.index(start) - 1, 0)
    i1 = s.dates.index(end)
    cum = np.asarray(s.cumulative[i0:i1 + 1], dtype=np.int64)
    raw = np.diff(cum)
    clamp = int(np.sum(raw < 0))
    y = np.maximum(raw, 0)
    n = y.size
    scale = float(n - 1) if n > 1 else 1.0
    x = np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)
    return TimeSeries(
        x=x,
        y=y,
        clamp_count=clamp,
        origin=0.0,
        scale=scale,
        day0=s.dates[i0 + 1],
        country=s.country,
    )


def write_series_json(ts: TimeSeries, path, start=None, end=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(ts.to_json(start, end), fh, indent=1)


def read_series_json(path) -> TimeSeries:
    with open(path, encoding="utf-8") as fh:
        return TimeSeries.from_json(json.load(fh))
