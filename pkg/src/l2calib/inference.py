"""Sandwich covariances, delta-method intervals and pointwise predictive bands.

Expectations over X use the calibration quadrature, normalized to a uniform
distribution on the domain, with the kernel estimate standing in for lambda.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .calibration import Quadrature, evaluate_simulator
from .emulator import Emulator
from .errors import DegenerateGradient, DomainError, SingularError

PIVOT_TOL = 1e-10
EMULATOR_STEP = 1e-2


def fd_steps(theta) -> np.ndarray:
    return 1e-4 * np.maximum(1.0, np.abs(np.asarray(theta, float)))


def _vector_hessian(fun, theta, h=None):
    """Central-difference gradient and Hessian of an array-valued ``fun(theta)``.

    Returns arrays of shape (q, ...) and (q, q, ...).
    """
    theta = np.asarray(theta, float)
    q = theta.size
    h = fd_steps(theta) if h is None else np.asarray(h, float)
    f0 = np.asarray(fun(theta), float)
    eye = np.eye(q) * h
    fp = [np.asarray(fun(theta + eye[j]), float) for j in range(q)]
    fm = [np.asarray(fun(theta - eye[j]), float) for j in range(q)]
    grad = np.stack([(fp[j] - fm[j]) / (2 * h[j]) for j in range(q)])
    hess = np.empty((q, q) + f0.shape)
    for j in range(q):
        hess[j, j] = (fp[j] - 2 * f0 + fm[j]) / h[j] ** 2
        for k in range(j + 1, q):
            fpp = fun(theta + eye[j] + eye[k])
            fpm = fun(theta + eye[j] - eye[k])
            fmp = fun(theta - eye[j] + eye[k])
            fmm = fun(theta - eye[j] - eye[k])
            hess[j, k] = hess[k, j] = (fpp - fpm - fmp + fmm) / (4 * h[j] * h[k])
    return grad, hess


def grad_hess_f(simulator, x, theta):
    """Finite-difference derivatives of ``f(x, theta)`` in theta.

    With scalar ``x`` the result is a q-vector and a q x q matrix; with an
    array of n points the shapes are (q, n) and (q, q, n). The Hessian is
    symmetric by construction.
    """
    xs = np.asarray(x, float)
    grad, hess = _vector_hessian(lambda th: evaluate_simulator(simulator, np.atleast_1d(xs), th),
                                 theta)
    if xs.ndim == 0:
        return grad[:, 0], hess[:, :, 0]
    return grad, hess


def gradient(fun, theta) -> np.ndarray:
    """Central-difference gradient of a scalar or array-valued function."""
    theta = np.asarray(theta, float)
    h = fd_steps(theta)
    eye = np.eye(theta.size) * h
    diff = [np.asarray(fun(theta + eye[j]), float) - np.asarray(fun(theta - eye[j]), float)
            for j in range(theta.size)]
    return np.stack([d / (2 * h[j]) for j, d in enumerate(diff)])


def sym_inverse(m) -> np.ndarray:
    """Inverse of a symmetric matrix through its eigendecomposition.

    Raises SingularError when the smallest pivot is below PIVOT_TOL relative to
    the largest, instead of quietly returning a pseudo-inverse.
    """
    m = 0.5 * (np.asarray(m, float) + np.asarray(m, float).T)
    vals, vecs = np.linalg.eigh(m)
    big = np.max(np.abs(vals))
    if not np.all(np.isfinite(vals)) or big == 0 or np.min(np.abs(vals)) <= PIVOT_TOL * big:
        raise SingularError(f"matrix is singular or nearly so (eigenvalues {vals})")
    return (vecs / vals) @ vecs.T


@dataclass
class SandwichCov:
    V: np.ndarray
    W: np.ndarray
    cov: np.ndarray
    method: str

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.cov), 0.0))


def _sandwich(V, W, scale, method) -> SandwichCov:
    vinv = sym_inverse(V)
    cov = scale * vinv @ W @ vinv
    return SandwichCov(V, W, 0.5 * (cov + cov.T), method)


def _outer_mean(q: Quadrature, weight, grad):
    # E[weight(X) g(X) g(X)^T] with grad of shape (q, nodes)
    return np.einsum("j,aj,bj->ab", q.weights * weight, grad, grad) / q.volume


def _lam(lambda_hat, q: Quadrature):
    return np.asarray(lambda_hat(q.nodes), float)


def _l2_parts(lambda_hat, simulator, theta, q: Quadrature):
    lam = _lam(lambda_hat, q)
    f = evaluate_simulator(simulator, q.nodes, theta)
    g, h = grad_hess_f(simulator, q.nodes, theta)
    V = 2 * (_outer_mean(q, np.ones_like(lam), g) - q.mean(((lam - f) * h).T).T)
    return lam, f, g, 0.5 * (V + V.T)


def sandwich_l2(lambda_hat, simulator, theta_hat, phi_hat, quadrature: Quadrature,
                n) -> SandwichCov:
    """Covariance 4 phi V0^-1 W0 V0^-1 / n of the L2 estimator."""
    lam, _, g, V = _l2_parts(lambda_hat, simulator, theta_hat, quadrature)
    W = _outer_mean(quadrature, lam, g)
    return _sandwich(V, W, 4.0 * phi_hat / n, "L2")


def sandwich_ls(lambda_hat, simulator, theta_hat, quadrature: Quadrature, n,
                phi_hat=1.0) -> SandwichCov:
    """Least-squares covariance; W adds the squared model discrepancy.

    ``phi_hat`` scales the Poisson-variance part of W only and defaults to 1.
    """
    lam, f, g, V = _l2_parts(lambda_hat, simulator, theta_hat, quadrature)
    W = _outer_mean(quadrature, phi_hat * lam + (lam - f) ** 2, g)
    return _sandwich(V, W, 4.0 / n, "LS")


def sandwich_mle(lambda_hat, simulator, theta_hat, quadrature: Quadrature, n,
                 phi_hat=1.0) -> SandwichCov:
    """Poisson MLE covariance V3^-1 W3 V3^-1 / n under a possibly wrong model."""
    q = quadrature
    lam = _lam(lambda_hat, q)
    f = evaluate_simulator(simulator, q.nodes, theta_hat)
    if np.any(f <= 0):
        node = float(q.nodes[np.argmax(f <= 0)])
        raise DomainError(f"simulator output is not positive at x={node}")
    g, h = grad_hess_f(simulator, q.nodes, theta_hat)
    V = q.mean(((lam / f - 1) * h).T).T - _outer_mean(q, lam / f ** 2, g)
    W = _outer_mean(q, ((lam - f) ** 2 + phi_hat * lam) / f ** 2, g)
    return _sandwich(0.5 * (V + V.T), W, 1.0 / n, "MLE")


def sandwich_l2_emulated(lambda_hat, emulator: Emulator, theta_tilde, quadrature: Quadrature, n,
                         phi_hat=1.0) -> SandwichCov:
    """Covariance of the emulated L2 estimator.

    V1 is the Hessian of the quadrature mean of (lambda - m)^2 + v^2, so the
    emulator variance contributes curvature; W1 uses the gradient of m only.
    The GP variance is a difference of nearly equal terms, so V1 is
    differenced with a step of 1% of the design range instead of the default.
    """
    q = quadrature
    lam = _lam(lambda_hat, q)
    sl = emulator.at_nodes(q.nodes)

    def crit(th):
        var = sl.integrated_variance(th, q.weights, include_noise=False)
        return q.mean((lam - sl.mean(th)) ** 2) + var / q.volume

    span = emulator.design.upper[1:] - emulator.design.lower[1:]
    _, V = _vector_hessian(crit, theta_tilde, h=EMULATOR_STEP * span)
    g = gradient(sl.mean, theta_tilde)
    W = _outer_mean(q, lam, g)
    return _sandwich(0.5 * (V + V.T), W, 4.0 * phi_hat / n, "L2_EMU")


# -- derived quantities ------------------------------------------------------

@dataclass(frozen=True)
class Interval:
    estimate: float
    lower: float
    upper: float
    level: float

    def __post_init__(self):
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if not self.lower <= self.estimate <= self.upper:
            raise ValueError("interval does not bracket its estimate")

    def contains(self, value) -> bool:
        return self.lower <= value <= self.upper

    def to_json(self) -> dict:
        return {"est": self.estimate, "lo": self.lower, "hi": self.upper}


def z_value(level) -> float:
    return float(stats.norm.ppf(0.5 * (1 + level)))


def delta_ci(theta_hat, cov, g, level=0.95, grad=None) -> Interval:
    """Delta-method interval for ``g(theta)``; ``grad`` may supply the analytic gradient."""
    theta_hat = np.asarray(theta_hat, float)
    cov = np.asarray(getattr(cov, "cov", cov), float)
    dg = np.asarray(grad(theta_hat) if grad is not None else gradient(g, theta_hat), float)
    if np.linalg.norm(dg) <= 1e-12:
        raise DegenerateGradient("gradient of g vanishes at the estimate")
    est = float(g(theta_hat))
    half = z_value(level) * float(np.sqrt(max(dg @ cov @ dg, 0.0)))
    return Interval(est, est - half, est + half, level)


def r0_function(names):
    """g(theta) = beta / gamma with its analytic gradient, for parameters ``names``."""
    ib, ig = names.index("beta"), names.index("gamma")

    def g(th):
        return th[ib] / th[ig]

    def grad(th):
        d = np.zeros(len(th))
        d[ib] = 1 / th[ig]
        d[ig] = -th[ib] / th[ig] ** 2
        return d

    return g, grad


def incubation_function(names):
    """g(theta) = 1 / kappa with its analytic gradient."""
    ik = names.index("kappa")

    def g(th):
        return 1 / th[ik]

    def grad(th):
        d = np.zeros(len(th))
        d[ik] = -1 / th[ik] ** 2
        return d

    return g, grad


# -- predictive bands --------------------------------------------------------

@dataclass
class Band:
    x: np.ndarray
    fit: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "fit", "lo", "hi"])
            w.writerows(zip(*(np.round(a, 10) for a in (self.x, self.fit, self.lower, self.upper))))


def _band(x, center, var, level) -> Band:
    sd = np.sqrt(np.maximum(var, 0.0))
    z = z_value(level)
    return Band(np.asarray(x, float), center, center - z * sd, center + z * sd, level)


def predictive_band_det(simulator, theta_hat, cov, x, level=0.95) -> Band:
    """Pointwise band f(x, theta) +- z sd, with sd from the delta method.

    ``cov`` is the estimator covariance (already divided by n and scaled by phi).
    """
    cov = np.asarray(getattr(cov, "cov", cov), float)
    xs = np.atleast_1d(np.asarray(x, float))
    center = evaluate_simulator(simulator, xs, theta_hat)
    g = gradient(lambda th: evaluate_simulator(simulator, xs, th), theta_hat)
    return _band(xs, center, np.einsum("aj,ab,bj->j", g, cov, g), level)


def predictive_band_stoch(emulator: Emulator, theta_tilde, cov, x, level=0.95) -> Band:
    """Band for the stochastic simulator: v^2 plus the delta-method term for m."""
    cov = np.asarray(getattr(cov, "cov", cov), float)
    xs = np.atleast_1d(np.asarray(x, float))
    sl = emulator.at_nodes(xs)
    center = sl.mean(theta_tilde)
    g = gradient(sl.mean, theta_tilde)
    var = sl.variance(theta_tilde) + np.einsum("aj,ab,bj->j", g, cov, g)
    return _band(xs, center, var, level)


# -- report ------------------------------------------------------------------

@dataclass
class EstimateReport:
    method: str
    theta_hat: np.ndarray
    cov: np.ndarray
    phi_hat: float
    derived: dict = field(default_factory=dict)
    param_names: tuple = ()
    band_csv: str | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        doc = {
            "method": self.method,
            "theta_hat": np.asarray(self.theta_hat).tolist(),
            "cov": np.asarray(self.cov).tolist(),
            "phi_hat": self.phi_hat,
            "derived": {k: v.to_json() for k, v in self.derived.items()},
        }
        if self.param_names:
            doc["param_names"] = list(self.param_names)
        if self.band_csv:
            doc["band"] = self.band_csv
        doc.update(self.extra)
        return doc

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1)
