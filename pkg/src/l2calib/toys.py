"""Synthetic calibration problems with analytically known true processes."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .calibration import true_theta_oracle
from .emulator import Design, fit_emulator, joint_design
from .timeseries import TimeSeries


def _lam_1d(x):
    x = np.asarray(x, float)
    return np.exp(x / 2) * np.sin(x / 2) + 30.0


def _f_1d(x, theta):
    t = float(np.asarray(theta).reshape(-1)[0])
    x = np.asarray(x, float)
    return _lam_1d(x) - 5.0 * np.sqrt(t * t - t + 1.0) * (np.sin(t * x) + np.cos(t * x))


def _lam_3d(x):
    x = np.asarray(x, float)
    return 3 * x + 3 * x * np.sin(5 * x) + 3


def _f_3d(x, theta):
    t = np.asarray(theta, float).reshape(-1)
    x = np.asarray(x, float)
    return t[0] + t[1] * x + t[2] * x * x


def _lam_sq(x):
    return np.asarray(x, float) ** 2


def _f_lin(x, theta):
    return float(np.asarray(theta).reshape(-1)[0]) * np.asarray(x, float)


@dataclass(frozen=True, eq=False)
class Toy:
    """True rate ``lam``, imperfect simulator ``f`` and parameter box."""

    name: str
    lam: object
    f: object
    lower: tuple
    upper: tuple
    domain: tuple
    n: int
    # "grid": equispaced with both ends, "midpoint": cell centres, "uniform": iid
    inputs: str = "grid"

    @property
    def q(self) -> int:
        return len(self.lower)

    @cached_property
    def theta_star(self) -> np.ndarray:
        return true_theta_oracle(self.lam, self.f, self.lower, self.upper, self.domain)

    def inputs_unit(self, n, rng) -> np.ndarray:
        if self.inputs == "grid":
            return np.linspace(0.0, 1.0, n)
        if self.inputs == "midpoint":
            return (np.arange(n) + 0.5) / n
        return np.sort(rng.uniform(0.0, 1.0, n))

    def draw(self, n=None, rng=None) -> TimeSeries:
        """Poisson counts at ``n`` inputs; x on [0, 1], days in the natural domain."""
        rng = np.random.default_rng(rng)
        n = self.n if n is None else int(n)
        lo, hi = self.domain
        u = self.inputs_unit(n, rng)
        y = rng.poisson(self.lam(lo + (hi - lo) * u))
        return TimeSeries(u, y, origin=lo, scale=hi - lo, country=self.name)

    def design(self, m, seed=None, replicates=1) -> Design:
        lower = np.concatenate([[self.domain[0]], self.lower])
        upper = np.concatenate([[self.domain[1]], self.upper])
        return joint_design(m, lower, upper, seed, replicates)

    def simulate_replicates(self, design: Design, a, rng) -> np.ndarray:
        """Poisson(f(x, theta)) draws, one row per design point and ``a`` columns.

        Columns are drawn one at a time, so a smaller ``a`` with the same
        generator gives the leading columns of a larger one.
        """
        rng = np.random.default_rng(rng)
        pts = design.points
        mean = np.maximum(np.array([self.f(p[0:1], p[1:])[0] for p in pts]), 0.0)
        return rng.poisson(mean, size=(a, len(pts))).T.astype(float)

    def train_emulator(self, m, a, seed=0, starts=5):
        ss = np.random.SeedSequence(seed)
        d_seed, o_seed, h_seed = (int(c.generate_state(1)[0]) for c in ss.spawn(3))
        design = self.design(m, d_seed, a)
        outputs = self.simulate_replicates(design, a, o_seed)
        return fit_emulator(design, outputs, starts=starts, seed=h_seed % 2**31)

    def truth_at(self, points) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.array([self.f(p[0:1], p[1:])[0] for p in pts])


def _trig_moments(k_max, a, upper):
    """Exact integrals of x^k sin(a x) and x^k cos(a x) over [0, upper], k = 0..k_max."""
    s, c = np.sin(a * upper), np.cos(a * upper)
    sin_m = [(1 - c) / a]
    cos_m = [s / a]
    for k in range(1, k_max + 1):
        sin_m.append(-upper ** k * c / a + k / a * cos_m[k - 1])
        cos_m.append(upper ** k * s / a - k / a * sin_m[k - 1])
    return np.array(sin_m), np.array(cos_m)


def closed_form_theta_3d() -> np.ndarray:
    """L2 projection of the 3D toy rate onto quadratics from the normal equations.

    Every moment is exact: polynomial moments in closed form, x^k sin(5x)
    through the integration-by-parts recursion.
    """
    hi = 2.0
    mom = np.array([hi ** (k + 1) / (k + 1) for k in range(5)])
    sin_m, _ = _trig_moments(3, 5.0, hi)
    gram = np.array([[mom[i + j] for j in range(3)] for i in range(3)])
    rhs = np.array([3 * mom[i + 1] + 3 * sin_m[i + 1] + 3 * mom[i] for i in range(3)])
    return np.linalg.solve(gram, rhs)


TOY_1D = Toy("TOY_1D", _lam_1d, _f_1d, (-1.0,), (1.0,), (0.0, 2 * np.pi), 50, "grid")
TOY_3D = Toy("TOY_3D", _lam_3d, _f_3d, (0.0, 0.0, 0.0), (5.0, 5.0, 5.0), (0.0, 2.0), 50, "uniform")
MLE_TOY = Toy("MLE_INCONSISTENCY", _lam_sq, _f_lin, (0.05,), (2.0,), (0.0, 1.0), 5000, "midpoint")

TOYS = {t.name: t for t in (TOY_1D, TOY_3D, MLE_TOY)}
