"""Calibration estimators: L2 projection (direct or emulated), least squares, MLE.

Simulators are callables ``f(x, theta) -> array`` evaluated at a vector of
times ``x`` in natural units. An :class:`~l2calib.emulator.Emulator` may stand
in for the simulator in every estimator.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .emulator import Emulator, lhd
from .errors import CriterionError, OptError
from .kernel_poisson import KernelFit
from .timeseries import TimeSeries

QUAD_NODES = 1024


@dataclass(frozen=True)
class Quadrature:
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def volume(self) -> float:
        return float(np.sum(self.weights))

    def mean(self, values, axis=0):
        """Expectation under X ~ Uniform(domain)."""
        w = self.weights / self.volume
        return np.tensordot(w, values, axes=(0, axis))


def uniform_quadrature(lower, upper, size=QUAD_NODES) -> Quadrature:
    """Midpoint rule: equally spaced nodes, equal weights summing to the domain length."""
    h = (upper - lower) / size
    nodes = lower + h * (np.arange(size) + 0.5)
    return Quadrature(nodes, np.full(size, h))


@dataclass(frozen=True)
class OptimizerConfig:
    starts: int = 10
    max_evals: int = 2000
    xtol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.starts < 1 or self.max_evals < 1 or not self.xtol > 0:
            raise ValueError("optimizer settings must be positive")


@dataclass
class FitResult:
    method: str
    theta_hat: np.ndarray
    criterion: float
    n_evals: int
    boundary_contact: list
    seed: int
    start_values: list = field(default_factory=list, repr=False)
    grad_norm: float = float("nan")

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "theta_hat": np.asarray(self.theta_hat).tolist(),
            "criterion": self.criterion,
            "n_evals": self.n_evals,
            "boundary_contact": [bool(b) for b in self.boundary_contact],
            "seed": self.seed,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def natural_lambda(fit: KernelFit, data: TimeSeries):
    """Wrap a unit-interval kernel fit as a function of natural time."""
    return lambda x: fit((np.asarray(x, float) - data.origin) / data.scale)


@dataclass
class CalibProblem:
    lambda_hat: object
    simulator: object
    lower: np.ndarray
    upper: np.ndarray
    quadrature: Quadrature
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: TimeSeries | None = None

    def __post_init__(self):
        self.lower = np.atleast_1d(np.asarray(self.lower, float))
        self.upper = np.atleast_1d(np.asarray(self.upper, float))
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))
                and np.all(self.lower < self.upper)):
            raise ValueError("bounds must be finite with lower < upper")
        q = self.quadrature
        self.lam_nodes = np.asarray(self.lambda_hat(q.nodes), float)
        self._slice = None

    @property
    def emulated(self) -> bool:
        return isinstance(self.simulator, Emulator)

    @property
    def emulator_slice(self):
        if self._slice is None:
            self._slice = self.simulator.at_nodes(self.quadrature.nodes)
        return self._slice

    @property
    def dim(self) -> int:
        return self.lower.size


def make_problem(data: TimeSeries, lambda_hat, simulator, lower, upper, nodes=QUAD_NODES,
                 optimizer: OptimizerConfig | None = None) -> CalibProblem:
    """Problem over the data's natural domain; ``lambda_hat`` may be a KernelFit."""
    lam = natural_lambda(lambda_hat, data) if isinstance(lambda_hat, KernelFit) else lambda_hat
    lo, hi = data.domain
    return CalibProblem(lam, simulator, lower, upper, uniform_quadrature(lo, hi, nodes),
                        optimizer or OptimizerConfig(), data)


def evaluate_simulator(simulator, x, theta) -> np.ndarray:
    x = np.asarray(x, float)
    try:
        out = np.asarray(simulator(x, np.asarray(theta, float)), float)
    except CriterionError:
        raise
    except Exception as exc:
        raise CriterionError(f"simulator failed at theta={theta}: {exc}", node=x[0]) from exc
    out = np.broadcast_to(out, x.shape)
    bad = ~np.isfinite(out)
    if np.any(bad):
        node = float(x[np.argmax(bad)])
        raise CriterionError(f"simulator returned a non-finite value at x={node}", node=node)
    return out


def l2_criterion(problem: CalibProblem, theta) -> float:
    """Quadrature approximation of ||lambda_hat - f(., theta)||^2.

    With an emulator the integrated variance of its mean prediction is added.
    Run-to-run replicate noise is left out: its integral grows with f and
    would pull the estimate away from the projection.
    """
    q = problem.quadrature
    if problem.emulated:
        sl = problem.emulator_slice
        resid = problem.lam_nodes - sl.mean(theta)
        var = sl.integrated_variance(theta, q.weights, include_noise=False)
        return float(q.weights @ resid ** 2 + var)
    resid = problem.lam_nodes - evaluate_simulator(problem.simulator, q.nodes, theta)
    return float(q.weights @ resid ** 2)


def minimize_box(fun, lower, upper, cfg: OptimizerConfig):
    """Multi-start bounded Nelder-Mead from an LHD over the box, then a restart polish.

    Returns (best theta, best value, evaluation count, initial-point values).
    """
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    span = upper - lower
    q = lower.size
    evals = 0

    def f_unit(u):
        nonlocal evals
        evals += 1
        val = fun(lower + np.clip(u, 0.0, 1.0) * span)
        return val if np.isfinite(val) else 1e300

    starts = lhd(cfg.starts, q, cfg.seed)
    opts = {"maxfev": cfg.max_evals, "xatol": cfg.xtol, "fatol": np.inf}
    unit_bounds = [(0.0, 1.0)] * q
    best_u, best_f = None, np.inf
    start_values = []
    for u0 in starts:
        try:
            start_values.append(f_unit(u0))
        except CriterionError:
            start_values.append(np.inf)
            continue
        try:
            res = optimize.minimize(f_unit, u0, method="Nelder-Mead", bounds=unit_bounds,
                                    options=opts)
        except CriterionError:
            continue
        if res.fun < best_f:
            best_u, best_f = res.x, float(res.fun)
    if best_u is None or not best_f < 1e300:
        raise OptError("every optimizer start failed")
    res = optimize.minimize(f_unit, best_u, method="Nelder-Mead", bounds=unit_bounds,
                            options=opts)
    if res.fun <= best_f:
        best_u, best_f = res.x, float(res.fun)
    theta = lower + np.clip(best_u, 0.0, 1.0) * span
    return theta, best_f, evals, start_values


def _finish(method, fun, theta, value, evals, starts, lower, upper, seed) -> FitResult:
    span = upper - lower
    contact = list((theta - lower <= 1e-6 * span) | (upper - theta <= 1e-6 * span))
    grad = np.zeros_like(theta)
    h = 1e-5 * np.maximum(1.0, np.abs(theta))
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = min(h[j], max(theta[j] - lower[j], 0.0), max(upper[j] - theta[j], 0.0)) or h[j]
        try:
            grad[j] = (fun(theta + e) - fun(theta - e)) / (2 * e[j])
        except CriterionError:
            grad[j] = np.nan
    return FitResult(method, theta, value, evals, contact, seed, starts,
                     float(np.linalg.norm(grad)))


def fit_l2(problem: CalibProblem) -> FitResult:
    """Minimize the L2 distance between lambda_hat and the simulator."""
    fun = lambda th: l2_criterion(problem, th)  # noqa: E731
    cfg = problem.optimizer
    theta, val, evals, starts = minimize_box(fun, problem.lower, problem.upper, cfg)
    method = "L2_EMU" if problem.emulated else "L2"
    return _finish(method, fun, theta, val, evals, starts, problem.lower, problem.upper, cfg.seed)


def fit_l2_emulated(problem: CalibProblem) -> FitResult:
    if not problem.emulated:
        raise TypeError("problem.simulator must be an Emulator")
    return fit_l2(problem)


def _data_arrays(data):
    if isinstance(data, TimeSeries):
        return data.days, data.y
    x, y = data
    return np.asarray(x, float), np.asarray(y, float)


def ls_criterion(x, y, simulator, theta, emulator_slice=None) -> float:
    if emulator_slice is not None:
        resid = y - emulator_slice.mean(theta)
        return float(resid @ resid + np.sum(emulator_slice.variance(theta, include_noise=False)))
    resid = y - evaluate_simulator(simulator, x, theta)
    return float(resid @ resid)


def neg_poisson_loglik(x, y, simulator, theta, emulator_slice=None) -> float:
    """-(sum y log f - sum f); +inf when any f <= 0."""
    f = emulator_slice.mean(theta) if emulator_slice is not None else \
        evaluate_simulator(simulator, x, theta)
    if np.any(f <= 0):
        return np.inf
    return float(np.sum(f) - y @ np.log(f))


def fit_ls(data, simulator, lower, upper, optimizer: OptimizerConfig | None = None) -> FitResult:
    """Least squares; with an emulator the predictive variance at the data is added."""
    x, y = _data_arrays(data)
    cfg = optimizer or OptimizerConfig()
    lower = np.atleast_1d(np.asarray(lower, float))
    upper = np.atleast_1d(np.asarray(upper, float))
    sl = simulator.at_nodes(x) if isinstance(simulator, Emulator) else None
    fun = lambda th: ls_criterion(x, y, simulator, th, sl)  # noqa: E731
    theta, val, evals, starts = minimize_box(fun, lower, upper, cfg)
    method = "LS_EMU" if sl is not None else "LS"
    return _finish(method, fun, theta, val, evals, starts, lower, upper, cfg.seed)


def fit_mle(data, simulator, lower, upper, optimizer: OptimizerConfig | None = None) -> FitResult:
    """Poisson maximum likelihood treating the simulator (or emulator mean) as the rate."""
    x, y = _data_arrays(data)
    cfg = optimizer or OptimizerConfig()
    lower = np.atleast_1d(np.asarray(lower, float))
    upper = np.atleast_1d(np.asarray(upper, float))
    sl = simulator.at_nodes(x) if isinstance(simulator, Emulator) else None
    fun = lambda th: neg_poisson_loglik(x, y, simulator, th, sl)  # noqa: E731
    theta, val, evals, starts = minimize_box(fun, lower, upper, cfg)
    method = "MLE_EMU" if sl is not None else "MLE"
    return _finish(method, fun, theta, val, evals, starts, lower, upper, cfg.seed)


def true_theta_oracle(lam, simulator, lower, upper, domain, nodes=20000,
                      optimizer: OptimizerConfig | None = None) -> np.ndarray:
    """Minimizer of ||lam - f(., theta)||_L2 for an analytically known ``lam``."""
    q = uniform_quadrature(domain[0], domain[1], max(int(nodes), 10000))
    prob = CalibProblem(lam, simulator, lower, upper, q,
                        optimizer or OptimizerConfig(starts=10, xtol=1e-10))
    return fit_l2(prob).theta_hat
