"""Penalized kernel Poisson regression with a Matérn kernel.

The log-rate is modelled as ``b + sum_i a_i Phi(x_i, x)`` and fitted by
iteratively re-weighted least squares with step-halving. Inputs are assumed to
live on the unit interval; the length-scale ``rho`` is in those units.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special, stats

from .errors import NumericalError
from .timeseries import TimeSeries

DEFAULT_RHOS = (0.05, 0.1, 0.2, 0.4)
JITTER = 1e-8
SE_FACTOR = 0.0  # widen to k standard errors for a k-SE rule
MAX_EXTEND = 4  # decades the CV grid may grow past either end


@dataclass(frozen=True)
class MaternParams:
    nu: float = 2.5
    rho: float = 0.2

    def __post_init__(self):
        if not self.nu >= 1:
            raise ValueError(f"Matérn smoothness must be >= 1, got {self.nu}")
        if not self.rho > 0:
            raise ValueError(f"Matérn length-scale must be positive, got {self.rho}")


def _matern_from_distance(d, p: MaternParams):
    d = np.abs(np.asarray(d, dtype=float))
    u = 2.0 * math.sqrt(p.nu) * d / p.rho
    if p.nu == 1.5:
        return (1.0 + u) * np.exp(-u)
    if p.nu == 2.5:
        return (1.0 + u + u * u / 3.0) * np.exp(-u)
    return matern_bessel(d, p)


def matern_bessel(d, p: MaternParams):
    """General Matérn correlation through the modified Bessel function K_nu."""
    d = np.abs(np.asarray(d, dtype=float))
    u = 2.0 * math.sqrt(p.nu) * d / p.rho
    out = np.ones_like(u)
    pos = u > 0
    up = u[pos]
    coef = 1.0 / (special.gamma(p.nu) * 2.0 ** (p.nu - 1.0))
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        val = coef * up ** p.nu * special.kv(p.nu, up)
    # K_nu underflows for large arguments; the correlation is zero there.
    out[pos] = np.where(np.isfinite(val), val, 0.0)
    return out


def matern(x, x2, p: MaternParams) -> float:
    """Matérn correlation between two points; equals 1 at zero distance."""
    return float(_matern_from_distance(np.subtract(x, x2), p))


def matern_matrix(x1, x2, p: MaternParams) -> np.ndarray:
    x1 = np.asarray(x1, dtype=float).reshape(-1)
    x2 = np.asarray(x2, dtype=float).reshape(-1)
    return _matern_from_distance(x1[:, None] - x2[None, :], p)


@dataclass
class KernelFit:
    b: float
    a: np.ndarray
    x_train: np.ndarray
    kernel: MaternParams
    kappa_n: float
    edf: float
    converged: bool
    iterations: int
    objective_path: list = field(default_factory=list, repr=False)

    def log_rate(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self.b + matern_matrix(x, self.x_train, self.kernel) @ self.a

    def __call__(self, x) -> np.ndarray:
        return np.exp(self.log_rate(x))

    def to_json(self) -> dict:
        return {
            "b": self.b,
            "a": np.asarray(self.a).tolist(),
            "x_train": np.asarray(self.x_train).tolist(),
            "nu": self.kernel.nu,
            "rho": self.kernel.rho,
            "kappa_n": self.kappa_n,
            "edf": self.edf,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "KernelFit":
        return cls(
            b=float(doc["b"]),
            a=np.asarray(doc["a"], dtype=float),
            x_train=np.asarray(doc["x_train"], dtype=float),
            kernel=MaternParams(float(doc["nu"]), float(doc["rho"])),
            kappa_n=float(doc["kappa_n"]),
            edf=float(doc["edf"]),
            converged=True,
            iterations=0,
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def predict_lambda(fit: KernelFit, x):
    """Fitted Poisson rate ``exp(xi_hat(x))``; scalar in, scalar out."""
    out = fit(x)
    return float(out[0]) if np.ndim(x) == 0 else out


def penalized_objective(xi, a, gram, y, kappa_n) -> float:
    with np.errstate(over="ignore"):
        lik = np.mean(np.exp(xi) - y * xi)
    return float(lik + kappa_n * a @ gram @ a)


def _irls_solve(gram, w, eta, n, kappa_n):
    """Solve the penalized weighted least-squares step.

    With ``Phi`` invertible the system (Phi1' W Phi1 + 2 n kappa Phi0) beta =
    Phi1' W eta is equivalent to [Phi + 2 n kappa W^-1] a + b 1 = eta with
    1'a = 0, which is much better conditioned.
    """
    m = gram + np.diag(2.0 * n * kappa_n / w)
    m[np.diag_indices_from(m)] += JITTER * np.mean(np.diag(m))
    try:
        factor = linalg.cho_factor(m, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError("penalized IRLS system is singular") from exc
    ones = np.ones(n)
    u = linalg.cho_solve(factor, ones)
    v = linalg.cho_solve(factor, eta)
    b = float(ones @ v / (ones @ u))
    a = v - b * u
    return b, a, factor, u


def _hat_trace(gram, factor, u) -> float:
    n = gram.shape[0]
    p = linalg.cho_solve(factor, np.eye(n))
    s = float(np.sum(u))
    return float(np.sum(gram * p) + np.sum((1.0 - gram @ u) * u) / s)


def fit_kpr_arrays(x, y, kernel: MaternParams, kappa_n: float, max_iter=100, tol=1e-8,
                   max_halvings=20) -> KernelFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least two observations")
    if not kappa_n > 0:
        raise ValueError("kappa_n must be positive")
    gram = matern_matrix(x, x, kernel)

    b = math.log(max(float(np.mean(y)), 0.5))
    a = np.zeros(n)
    xi = np.full(n, b)
    obj = penalized_objective(xi, a, gram, y, kappa_n)
    path = [obj]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = np.exp(xi)
        eta = xi + (y - w) / w
        b_full, a_full, _, _ = _irls_solve(gram, w, eta, n, kappa_n)
        step = 1.0
        for _ in range(max_halvings + 1):
            b_new = b + step * (b_full - b)
            a_new = a + step * (a_full - a)
            xi_new = b_new + gram @ a_new
            obj_new = penalized_objective(xi_new, a_new, gram, y, kappa_n)
            if np.isfinite(obj_new) and obj_new <= obj:
                break
            step *= 0.5
        else:
            # No halving decreased the objective: we are at numerical stationarity.
            converged = True
            break
        change = obj - obj_new
        b, a, xi, obj = b_new, a_new, xi_new, obj_new
        path.append(obj)
        if change <= tol * max(abs(obj), 1.0):
            converged = True
            break

    w = np.exp(xi)
    _, _, factor, u = _irls_solve(gram, w, xi + (y - w) / w, n, kappa_n)
    edf = _hat_trace(gram, factor, u)
    return KernelFit(b=b, a=a, x_train=x.copy(), kernel=kernel, kappa_n=float(kappa_n),
                     edf=edf, converged=converged, iterations=it, objective_path=path)


def fit_kpr(data: TimeSeries, kernel: MaternParams, kappa_n: float, **kw) -> KernelFit:
    """Fit the kernel Poisson regression to a daily series."""
    return fit_kpr_arrays(data.x, data.y, kernel, kappa_n, **kw)


def default_kappa_grid(n: int, nu: float = 2.5, mean_count: float = 1.0, num=9,
                       decades=(-2.0, 2.0)) -> np.ndarray:
    """Log-spaced grid centred on the rate-optimal order.

    With noise variance 1/lambda on the log scale the optimal penalty scales
    as ybar^(1/(2m+1)) * n^(-2m/(2m+1)), m = nu + 1/2.
    """
    m = nu + 0.5
    rate = 2.0 * m / (2.0 * m + 1.0)
    centre = max(float(mean_count), 1.0) ** (1.0 / (2.0 * m + 1.0)) * n ** (-rate)
    return centre * np.logspace(decades[0], decades[1], num)


def _cv_scores(x, y, kernel, grid, folds):
    """Per-fold held-out Poisson log-likelihoods, shape (len(grid), folds)."""
    n = x.size
    fold_of = np.arange(n) % folds
    scores = np.full((len(grid), folds), -np.inf)
    for k, kappa in enumerate(grid):
        row = np.empty(folds)
        try:
            for f in range(folds):
                train = fold_of != f
                test = ~train
                fit = fit_kpr_arrays(x[train], y[train], kernel, kappa)
                xi = fit.log_rate(x[test])
                row[f] = float(np.sum(y[test] * xi - np.exp(xi)))
        except NumericalError:
            continue
        if np.all(np.isfinite(row)):
            scores[k] = row
    return scores


def _cv_scores_extended(x, y, kernel, grid, folds, max_extend=MAX_EXTEND):
    """CV scores, growing the grid by a decade while the best penalty sits on an edge."""
    grid = np.asarray(grid, float)
    scores = _cv_scores(x, y, kernel, grid, folds)
    if grid.size < 3:
        return grid, scores
    step = grid[1] / grid[0]
    per_decade = max(int(round(1.0 / np.log10(step))), 1)
    for _ in range(max_extend):
        mean = scores.mean(axis=1)
        if not np.any(np.isfinite(mean)):
            break
        best = int(np.argmax(mean))
        if best == 0:
            new = grid[0] / step ** np.arange(per_decade, 0, -1)
            scores = np.vstack([_cv_scores(x, y, kernel, new, folds), scores])
            grid = np.concatenate([new, grid])
        elif best == grid.size - 1:
            new = grid[-1] * step ** np.arange(1, per_decade + 1)
            scores = np.vstack([scores, _cv_scores(x, y, kernel, new, folds)])
            grid = np.concatenate([grid, new])
        else:
            break
    return grid, scores


def _grid_scores(x, y, kernel, grid, folds, extend):
    if extend:
        return _cv_scores_extended(x, y, kernel, grid, folds)
    return grid, _cv_scores(x, y, kernel, grid, folds)


def _pick(scores, grid, se_factor=None):
    """Largest penalty whose mean score ties the best (optionally within k standard errors)."""
    se_factor = SE_FACTOR if se_factor is None else se_factor
    mean = scores.mean(axis=1)
    best = int(np.argmax(mean))
    folds = scores.shape[1]
    se = float(np.std(scores[best], ddof=1) / math.sqrt(folds))
    ok = np.flatnonzero(mean >= mean[best] - se_factor * se - 1e-9 * max(abs(mean[best]), 1.0))
    k = ok[np.argmax(np.asarray(grid)[ok])]
    return k, mean[best], se


def select_kappa_cv(data: TimeSeries, kernel: MaternParams, grid=None, folds: int = 5) -> float:
    """Penalty maximizing the held-out Poisson log-likelihood.

    Folds are interleaved in time. Ties go to the larger penalty.
    """
    if folds < 2:
        raise ValueError("need at least two folds")
    extend = grid is None
    if extend:
        grid = default_kappa_grid(data.n, kernel.nu, np.mean(data.y))
    grid = np.asarray(grid, float)
    if grid.size == 0:
        raise ValueError("empty penalty grid")
    if grid.size == 1:
        return float(grid[0])
    grid, scores = _grid_scores(data.x, data.y, kernel, grid, folds, extend)
    if not np.any(np.isfinite(scores)):
        raise NumericalError("every penalty in the grid failed to fit")
    return float(grid[_pick(scores, grid)[0]])


def select_kernel_cv(data: TimeSeries, nu: float = 2.5, rhos=DEFAULT_RHOS, grid=None,
                     folds: int = 5) -> tuple[MaternParams, float]:
    """Joint cross-validation over length-scale and penalty.

    Across length-scales the best mean score wins; ties go to the longer
    length-scale. The default grid grows past an edge that holds the optimum;
    a supplied grid is used as given.
    """
    extend = grid is None
    base = default_kappa_grid(data.n, nu, np.mean(data.y)) if extend else np.asarray(grid, float)
    cands = []
    for rho in sorted(rhos):
        kernel = MaternParams(nu, rho)
        grid, scores = _grid_scores(data.x, data.y, kernel, base, folds, extend)
        if not np.any(np.isfinite(scores)):
            continue
        k, best, se = _pick(scores, grid)
        cands.append((best, se, kernel, float(grid[k])))
    if not cands:
        raise NumericalError("cross-validation failed for every kernel setting")
    top = max(range(len(cands)), key=lambda i: cands[i][0])
    floor = cands[top][0] - SE_FACTOR * cands[top][1]
    chosen = max(i for i in range(len(cands)) if cands[i][0] >= floor)
    return cands[chosen][2], cands[chosen][3]


def fit_kpr_cv(data: TimeSeries, nu: float = 2.5, rhos=DEFAULT_RHOS, grid=None,
               folds: int = 5) -> KernelFit:
    kernel, kappa = select_kernel_cv(data, nu, rhos, grid, folds)
    return fit_kpr(data, kernel, kappa)


@dataclass(frozen=True)
class GofReport:
    """Deviance test against a chi-square on the residual effective degrees of freedom.

    ``edf`` here is ``n - trace(H)``; ``model_edf`` is the smoother trace itself.
    """

    deviance: float
    edf: float
    p_value: float
    phi_hat: float
    model_edf: float


def poisson_deviance(y, mu) -> float:
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    ylog = special.xlogy(y, y) - special.xlogy(y, mu)
    return float(2.0 * np.sum(ylog - (y - mu)))


def deviance_gof(fit: KernelFit, data: TimeSeries) -> GofReport:
    mu = fit(data.x)
    dev = max(poisson_deviance(data.y, mu), 0.0)
    resid_df = data.n - fit.edf
    if not resid_df > 1e-8:
        raise NumericalError(f"non-positive residual degrees of freedom ({resid_df:g})")
    p = float(stats.chi2.sf(dev, resid_df)) if dev > 0 else 1.0
    return GofReport(deviance=dev, edf=resid_df, p_value=p, phi_hat=dev / resid_df,
                     model_edf=fit.edf)


def estimate_overdispersion(fit: KernelFit, data: TimeSeries) -> float:
    return deviance_gof(fit, data).phi_hat
