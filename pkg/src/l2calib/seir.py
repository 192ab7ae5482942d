"""Deterministic and stochastic SEIR simulators.

The calibration output is daily incidence: ``kappa * E(x)`` for the ODE and the
number of E -> I transitions per day for the Gillespie chain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.integrate import solve_ivp

from .errors import SolverError

PARAM_NAMES = ("beta", "kappa", "gamma", "i0", "e0", "r0_init")


@dataclass(frozen=True)
class SeirParams:
    beta: float
    kappa: float
    gamma: float
    i0: float
    e0: float
    r0_init: float
    N: float

    def __post_init__(self):
        if not (self.beta >= 0 and self.kappa > 0 and self.gamma > 0):
            raise ValueError("rates must be positive (beta may be zero)")
        if min(self.i0, self.e0, self.r0_init) < 0:
            raise ValueError("initial counts must be non-negative")
        if self.i0 + self.e0 + self.r0_init > self.N:
            raise ValueError("initial counts exceed the population")

    @property
    def s0(self) -> float:
        return self.N - self.e0 - self.i0 - self.r0_init

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.beta, self.kappa, self.gamma, self.i0, self.e0, self.r0_init])

    @classmethod
    def from_theta(cls, theta, N) -> "SeirParams":
        beta, kappa, gamma, i0, e0, r0 = (float(v) for v in theta)
        return cls(beta, kappa, gamma, i0, e0, r0, float(N))


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    S: np.ndarray
    E: np.ndarray
    I: np.ndarray
    R: np.ndarray
    # cumulative number of E -> I transitions since time 0
    onsets: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.S + self.E + self.I + self.R


def _rhs(t, y, beta, kappa, gamma, n_pop):
    s, e, i, _, _ = y
    force = beta * i * s / n_pop
    return [-force, force - kappa * e, kappa * e - gamma * i, gamma * i, kappa * e]


def _integrate(p: SeirParams, t_eval, rtol=1e-8, atol_rel=1e-8):
    t_eval = np.asarray(t_eval, dtype=float)
    t_end = float(t_eval.max()) if t_eval.size else 0.0
    y0 = [p.s0, p.e0, p.i0, p.r0_init, 0.0]
    if t_end <= 0.0:
        return np.tile(np.array(y0)[:, None], (1, t_eval.size))
    sol = solve_ivp(_rhs, (0.0, t_end), y0, method="RK45", t_eval=t_eval,
                    args=(p.beta, p.kappa, p.gamma, p.N), rtol=rtol, atol=atol_rel * p.N)
    if not sol.success:
        raise SolverError(f"SEIR integration failed: {sol.message}")
    return sol.y


def solve_seir_ode(p: SeirParams, horizon: float, dt_out: float, rtol=1e-8) -> Trajectory:
    """Integrate the SEIR system with Dormand-Prince 5(4) and sample it every ``dt_out`` days."""
    if not (horizon > 0 and dt_out > 0):
        raise ValueError("horizon and dt_out must be positive")
    steps = int(math.floor(horizon / dt_out + 1e-9))
    times = dt_out * np.arange(steps + 1)
    y = _integrate(p, times, rtol=rtol)
    return Trajectory(times, *y)


def seir_incidence(p: SeirParams, x, rtol=1e-8):
    """``kappa * E(x)`` at one time or an array of times (days, >= 0)."""
    xs = np.asarray(x, dtype=float)
    if np.any(xs < 0):
        raise ValueError("incidence times must be non-negative")
    flat = xs.reshape(-1)
    order = np.argsort(flat, kind="stable")
    y = _integrate(p, flat[order], rtol=rtol)
    out = np.empty_like(flat)
    out[order] = p.kappa * y[1]
    return float(out[0]) if xs.ndim == 0 else out.reshape(xs.shape)


def ode_daily_onsets(p: SeirParams, days: int, rtol=1e-8) -> np.ndarray:
    """Expected E -> I transitions in each day bin [d, d+1) under the ODE."""
    y = _integrate(p, np.arange(days + 1, dtype=float), rtol=rtol)
    return np.diff(y[4])


class SeirSimulator:
    """Deterministic incidence ``f(x, theta)`` for calibration.

    ``free`` names the entries of theta being calibrated; the rest are taken
    from ``fixed``. ``x`` is in days.
    """

    def __init__(self, N, free=PARAM_NAMES, fixed=None, rtol=1e-8):
        self.N = float(N)
        self.free = tuple(free)
        self.fixed = dict(fixed or {})
        missing = set(PARAM_NAMES) - set(self.free) - set(self.fixed)
        if missing:
            raise ValueError(f"no value for SEIR parameters {sorted(missing)}")
        self.rtol = rtol

    def params(self, theta) -> SeirParams:
        vals = dict(self.fixed)
        vals.update(zip(self.free, np.asarray(theta, dtype=float)))
        return SeirParams(*(vals[k] for k in PARAM_NAMES), N=self.N)

    def __call__(self, x, theta):
        return seir_incidence(self.params(theta), x, rtol=self.rtol)


# -- Gillespie ---------------------------------------------------------------

def _seed_sequence(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def derive_seed(seed) -> int:
    """32-bit seed for the compiled generator, derived through SeedSequence."""
    return int(_seed_sequence(seed).generate_state(1)[0])


def replicate_seeds(seed, count) -> list:
    """Child seed sequences, one per replicate."""
    return _seed_sequence(seed).spawn(count)


@njit(cache=True)
def _ssa_daily(s, e, i, r, n_pop, beta, kappa, gamma, days, seed):
    np.random.seed(seed)
    counts = np.zeros(days, dtype=np.int64)
    t = 0.0
    while True:
        a_inf = beta * s * i / n_pop
        a_prog = kappa * e
        a_rec = gamma * i
        a0 = a_inf + a_prog + a_rec
        if a0 <= 0.0:
            break
        t += np.random.exponential(1.0 / a0)
        if t >= days:
            break
        u = np.random.random() * a0
        if u < a_inf:
            s -= 1
            e += 1
        elif u < a_inf + a_prog:
            e -= 1
            i += 1
            counts[int(t)] += 1
        else:
            i -= 1
            r += 1
    return counts, s, e, i, r


@njit(cache=True)
def _store(out, k, t, s, e, i, r):
    out[k, 0] = t
    out[k, 1] = s
    out[k, 2] = e
    out[k, 3] = i
    out[k, 4] = r


@njit(cache=True)
def _ssa_path(s, e, i, r, n_pop, beta, kappa, gamma, horizon, seed, max_events):
    np.random.seed(seed)
    out = np.empty((max_events + 1, 5))
    _store(out, 0, 0.0, s, e, i, r)
    t = 0.0
    k = 0
    while k < max_events:
        a_inf = beta * s * i / n_pop
        a_prog = kappa * e
        a_rec = gamma * i
        a0 = a_inf + a_prog + a_rec
        if a0 <= 0.0:
            break
        t += np.random.exponential(1.0 / a0)
        if t >= horizon:
            break
        u = np.random.random() * a0
        if u < a_inf:
            s -= 1
            e += 1
        elif u < a_inf + a_prog:
            e -= 1
            i += 1
        else:
            i -= 1
            r += 1
        k += 1
        _store(out, k, t, s, e, i, r)
    return out[:k + 1]


@njit(cache=True)
def _ssa_waiting_times(s, e, i, n_pop, beta, kappa, gamma, count, seed):
    # state is frozen: only the clock advances
    np.random.seed(seed)
    a0 = beta * s * i / n_pop + kappa * e + gamma * i
    out = np.empty(count)
    for k in range(count):
        out[k] = np.random.exponential(1.0 / a0)
    return out


def _integer_state(p: SeirParams):
    vals = (p.s0, p.e0, p.i0, p.r0_init, p.N)
    if any(abs(v - round(v)) > 0 for v in vals):
        raise ValueError("Gillespie simulation needs integer compartment counts")
    return tuple(int(round(v)) for v in vals)


def gillespie_seir(p: SeirParams, horizon: int, seed) -> np.ndarray:
    """Daily counts of E -> I transitions from one exact stochastic path.

    ``seed`` may be any SeedSequence entropy; it is hashed to the compiled
    generator's 32-bit seed, so equal seeds give identical output.
    """
    s, e, i, r, n_pop = _integer_state(p)
    counts, *_ = _ssa_daily(s, e, i, r, float(n_pop), p.beta, p.kappa, p.gamma,
                            int(horizon), derive_seed(seed))
    return counts


def gillespie_path(p: SeirParams, horizon: float, seed, max_events=1_000_000) -> np.ndarray:
    """Event-by-event path as rows (t, S, E, I, R)."""
    s, e, i, r, n_pop = _integer_state(p)
    return _ssa_path(s, e, i, r, float(n_pop), p.beta, p.kappa, p.gamma, float(horizon),
                     derive_seed(seed), int(max_events))


def gillespie_waiting_times(p: SeirParams, count: int, seed) -> np.ndarray:
    s, e, i, _, n_pop = _integer_state(p)
    return _ssa_waiting_times(s, e, i, float(n_pop), p.beta, p.kappa, p.gamma, int(count),
                              derive_seed(seed))


def replicate_gillespie(p: SeirParams, horizon: int, a: int, seed) -> np.ndarray:
    """``a`` independent daily-incidence paths, one per row.

    Replicate ``j`` uses the ``j``-th child of ``SeedSequence(seed)``, so
    ``gillespie_seir(p, horizon, child)`` reproduces that row.
    """
    s, e, i, r, n_pop = _integer_state(p)
    rows = np.empty((a, int(horizon)), dtype=np.int64)
    for j, child in enumerate(replicate_seeds(seed, a)):
        rows[j], *_ = _ssa_daily(s, e, i, r, float(n_pop), p.beta, p.kappa, p.gamma,
                                 int(horizon), derive_seed(child))
    return rows


class StochasticSeirSimulator:
    """Replicated Gillespie incidence at arbitrary (day, theta) inputs.

    Day ``x`` maps to the count in bin ``floor(x)``; one path is simulated per
    (theta, replicate) and read at every requested day.
    """

    def __init__(self, N, free=PARAM_NAMES, fixed=None):
        self.det = SeirSimulator(N, free, fixed)

    def params(self, theta) -> SeirParams:
        p = self.det.params(theta)
        # Gillespie needs whole individuals
        return SeirParams(p.beta, p.kappa, p.gamma, round(p.i0), round(p.e0),
                          round(p.r0_init), p.N)

    def replicates(self, days, theta, a, seed) -> np.ndarray:
        days = np.asarray(days, dtype=float)
        horizon = int(np.floor(days.max())) + 1
        paths = replicate_gillespie(self.params(theta), horizon, a, seed)
        return paths[:, np.floor(days).astype(int)].astype(float)
