"""Synthetic case tables in the JHU global time-series layout.

The bundled table holds countries whose daily counts are Poisson draws around
``kappa * E(d)`` from the SEIR ODE with known parameters, so a deterministic
fit has no model error to absorb.
"""
from __future__ import annotations

import csv
import datetime as dt
import io
from importlib import resources

import numpy as np

from .seir import SeirParams, seir_incidence

SYNTHETIC_START = dt.date(2020, 3, 1)
SYNTHETIC_DAYS = 121
SYNTHETIC_COUNTRIES = {
    "Synthetica": SeirParams(0.5, 0.25, 0.2, 20.0, 20.0, 0.0, 500_000.0),
    "Testland": SeirParams(0.4, 0.2, 0.25, 20.0, 20.0, 0.0, 500_000.0),
}
SYNTHETIC_SEED = 20200301
BUNDLED = "synthetic_jhu.csv"


def _date_label(d: dt.date) -> str:
    return f"{d.month}/{d.day}/{d.strftime('%y')}"


def jhu_table(rows, first_date: dt.date) -> str:
    """Render (province, country, cumulative counts) rows as JHU CSV text."""
    rows = list(rows)
    width = len(rows[0][2])
    dates = [first_date + dt.timedelta(days=k) for k in range(width)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["Province/State", "Country/Region", "Lat", "Long", *map(_date_label, dates)])
    for province, country, cum in rows:
        w.writerow([province, country, "0.0", "0.0", *(int(v) for v in cum)])
    return buf.getvalue()


def synthetic_daily(params: SeirParams, days=SYNTHETIC_DAYS, seed=SYNTHETIC_SEED) -> np.ndarray:
    rate = seir_incidence(params, np.arange(days, dtype=float))
    return np.random.default_rng(seed).poisson(rate)


def synthetic_jhu_csv(countries=None, start=SYNTHETIC_START, days=SYNTHETIC_DAYS,
                      seed=SYNTHETIC_SEED) -> str:
    """Cumulative table starting with a zero baseline column the day before ``start``."""
    countries = SYNTHETIC_COUNTRIES if countries is None else countries
    seeds = np.random.SeedSequence(seed).spawn(len(countries))
    rows = []
    for (name, p), s in zip(countries.items(), seeds):
        daily = synthetic_daily(p, days, s)
        rows.append(("", name, np.concatenate([[0], np.cumsum(daily)])))
    return jhu_table(rows, start - dt.timedelta(days=1))


def bundled_csv() -> str:
    return resources.files("l2calib.data").joinpath(BUNDLED).read_text(encoding="utf-8")


def bundled_path():
    return resources.files("l2calib.data").joinpath(BUNDLED)
