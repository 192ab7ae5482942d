"""Regenerate jhu.csv: 366 daily columns from 2020-02-29, US split over provinces."""
import datetime as dt
from pathlib import Path

import numpy as np

from l2calib.fixtures import jhu_table

DAYS = 366
rng = np.random.default_rng(366)
t = np.arange(DAYS)


def cumulative(scale, peak, width):
    daily = rng.poisson(scale * np.exp(-0.5 * ((t - peak) / width) ** 2))
    daily[0] = 0
    return np.cumsum(daily)


revised = cumulative(40.0, 120, 30)
revised[200:] -= 25  # a reporting correction: one negative daily increment
rows = [
    ("Alaska", "US", cumulative(30.0, 150, 40)),
    ("Ohio", "US", cumulative(80.0, 200, 50)),
    ("Texas", "US", cumulative(120.0, 180, 45)),
    ("", "Revisia", revised),
    ("", "Smallville", cumulative(5.0, 100, 20)),
]
Path(__file__).with_name("jhu.csv").write_text(jhu_table(rows, dt.date(2020, 2, 29)))
