"""Latin hypercube designs and a heteroscedastic Gaussian-process emulator.

The emulator follows the usual replicated-experiment recipe: a GP on the
replicate means with known per-point noise ``s_i^2 / a`` and a second GP
smoothing the log replicate variances. Both use an anisotropic
squared-exponential kernel on inputs rescaled to the unit cube.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .errors import ArgumentError, DesignError

LOG_LS_BOUNDS = (np.log(1e-2), np.log(20.0))
LOG_S2_BOUNDS = (np.log(1e-2), np.log(1e2))
LOG_G_BOUNDS = (np.log(1e-10), np.log(1.0))


def lhd(m: int, dims: int, seed=None) -> np.ndarray:
    """Random Latin hypercube: one point per stratum [(i-1)/m, i/m) in every column."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(seed)
    out = np.empty((m, dims))
    for k in range(dims):
        out[:, k] = (rng.permutation(m) + rng.uniform(0.0, 1.0, m)) / m
    return np.clip(out, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


@dataclass
class Design:
    """Design points in natural units together with the box they were drawn from."""

    points: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    replicates: int = 1

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.points.shape[1] != self.lower.size:
            raise DesignError("design dimension does not match the bounds")

    def unit(self, pts) -> np.ndarray:
        return (np.atleast_2d(pts) - self.lower) / (self.upper - self.lower)


def joint_design(m, lower, upper, seed=None, replicates=1) -> Design:
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    u = lhd(m, lower.size, seed)
    return Design(lower + u * (upper - lower), lower, upper, replicates)


def crossed_design(x_grid, theta_lower, theta_upper, runs, seed=None, replicates=1) -> Design:
    """Every LHD run over theta crossed with every time in ``x_grid``."""
    x_grid = np.asarray(x_grid, float)
    tl = np.asarray(theta_lower, float)
    tu = np.asarray(theta_upper, float)
    th = tl + lhd(runs, tl.size, seed) * (tu - tl)
    pts = np.array([[x, *t] for t in th for x in x_grid])
    lower = np.concatenate([[x_grid.min()], tl])
    upper = np.concatenate([[x_grid.max()], tu])
    return Design(pts, lower, upper, replicates)


def se_kernel(u1, u2, lengthscales) -> np.ndarray:
    a = np.atleast_2d(u1) / lengthscales
    b = np.atleast_2d(u2) / lengthscales
    d2 = np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2.0 * a @ b.T
    return np.exp(-np.maximum(d2, 0.0))


class _GP:
    """Zero-mean GP on standardized targets with a per-point noise vector."""

    def __init__(self, u, z, noise, ls, s2, g):
        self.u = u
        self.z = z
        self.noise = noise
        self.ls = np.asarray(ls, float)
        self.s2 = float(s2)
        self.g = float(g)
        k = self.s2 * se_kernel(u, u, self.ls)
        k[np.diag_indices_from(k)] += self.g + noise
        self.chol = linalg.cho_factor(k, lower=True)
        self.alpha = linalg.cho_solve(self.chol, z)
        self._kinv = None

    @property
    def kinv(self):
        if self._kinv is None:
            self._kinv = linalg.cho_solve(self.chol, np.eye(self.z.size))
        return self._kinv

    def predict(self, u_star, with_var=True):
        k = self.s2 * se_kernel(u_star, self.u, self.ls)
        mean = k @ self.alpha
        if not with_var:
            return mean, None
        v = linalg.cho_solve(self.chol, k.T)
        var = np.maximum(self.s2 - np.sum(k * v.T, 1), 0.0)
        return mean, var


def _nll(params, u, z, noise, dims):
    ls = np.exp(params[:dims])
    s2 = np.exp(params[dims])
    g = np.exp(params[dims + 1])
    k = s2 * se_kernel(u, u, ls)
    k[np.diag_indices_from(k)] += g + noise
    try:
        c, low = linalg.cho_factor(k, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return 1e25
    alpha = linalg.cho_solve((c, low), z, check_finite=False)
    return float(0.5 * z @ alpha + np.sum(np.log(np.diag(c))))


def _fit_hyper(u, z, noise, starts=5, maxiter=200, seed=0):
    """Multi-start bounded Nelder-Mead on the negative log marginal likelihood."""
    dims = u.shape[1]
    bounds = [LOG_LS_BOUNDS] * dims + [LOG_S2_BOUNDS, LOG_G_BOUNDS]
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    # first start at a conventional guess, the rest from an LHD over the box
    first = np.concatenate([np.full(dims, np.log(0.5)), [0.0], [np.log(1e-6)]])
    inits = [first] + list(lo + lhd(max(starts - 1, 1), lo.size, seed) * (hi - lo))
    best = None
    ok = False
    for x0 in inits[:starts]:
        res = optimize.minimize(_nll, x0, args=(u, z, noise, dims), method="Nelder-Mead",
                                bounds=bounds, options={"maxiter": maxiter, "xatol": 1e-4,
                                                        "fatol": 1e-6})
        if best is None or res.fun < best.fun:
            best = res
        ok = ok or bool(res.fun < 1e24)
    return best.x, ok


@dataclass
class EmulatorPrediction:
    mean: np.ndarray
    variance: np.ndarray
    mean_variance: np.ndarray
    noise: np.ndarray
    extrapolated: np.ndarray


class Emulator:
    """Trained emulator; ``predict`` gives m_N and v_N^2 at (x, theta) rows."""

    def __init__(self, design: Design, ybar, s2, a, hyper, noise_hyper=None,
                 optimizer_ok=True, digest=""):
        self.design = design
        self.ybar = np.asarray(ybar, float)
        self.s2_obs = np.asarray(s2, float)
        self.a = int(a)
        self.hyper = dict(hyper)
        self.noise_hyper = None if noise_hyper is None else dict(noise_hyper)
        self.optimizer_ok = optimizer_ok
        self.digest = digest
        self._build()

    def _build(self):
        u = self.design.unit(self.design.points)
        self.mu = float(np.mean(self.ybar))
        sd = float(np.std(self.ybar))
        self.sd = sd if sd > 0 else 1.0
        z = (self.ybar - self.mu) / self.sd
        noise = self._mean_noise()
        h = self.hyper
        self.gp = _GP(u, z, noise, h["lengthscales"], h["signal_var"], h["nugget"])
        self.noise_gp = None
        if self.noise_hyper is not None:
            nh = self.noise_hyper
            self.noise_gp = _GP(u, self._log_var_targets() - nh["offset"], np.zeros(len(z)),
                                nh["lengthscales"], nh["signal_var"], nh["nugget"])

    def _mean_noise(self):
        if self.a > 1:
            return self.s2_obs / self.a / self.sd ** 2
        return np.zeros(self.ybar.size)

    def _log_var_targets(self):
        floor = max(1e-8 * float(np.max(self.s2_obs)), 1e-300)
        return np.log(np.maximum(self.s2_obs, floor))

    @property
    def heteroscedastic(self) -> bool:
        return self.noise_gp is not None

    @property
    def signal_variance(self) -> float:
        return self.hyper["signal_var"] * self.sd ** 2

    def replicate_noise(self, u) -> np.ndarray:
        """Variance of a single simulator run, in output units."""
        if self.noise_gp is not None:
            m, _ = self.noise_gp.predict(u, with_var=False)
            return np.exp(m + self.noise_hyper["offset"])
        if self.a > 1:
            return np.full(len(u), float(np.mean(self.s2_obs)))
        return np.full(len(u), self.hyper["nugget"] * self.sd ** 2)

    def predict(self, points, include_noise=True) -> EmulatorPrediction:
        pts = np.atleast_2d(np.asarray(points, float))
        u = self.design.unit(pts)
        m, var = self.gp.predict(u)
        mean = self.mu + self.sd * m
        mvar = self.sd ** 2 * var
        noise = self.replicate_noise(u) if include_noise else np.zeros(len(u))
        extrap = np.any((u < -1e-12) | (u > 1 + 1e-12), axis=1)
        return EmulatorPrediction(mean, mvar + noise, mvar, noise, extrap)

    def at_nodes(self, x_nodes) -> "EmulatorSlice":
        return EmulatorSlice(self, x_nodes)

    def to_json(self) -> dict:
        d = self.design
        return {
            "design": {"points": d.points.tolist(), "lower": d.lower.tolist(),
                       "upper": d.upper.tolist(), "replicates": d.replicates},
            "ybar": self.ybar.tolist(),
            "s2": self.s2_obs.tolist(),
            "a": self.a,
            "outputs_digest": self.digest,
            "hyper": {k: np.asarray(v).tolist() for k, v in self.hyper.items()},
            "noise_hyper": None if self.noise_hyper is None else
            {k: np.asarray(v).tolist() for k, v in self.noise_hyper.items()},
            "optimizer_ok": bool(self.optimizer_ok),
        }

    @classmethod
    def from_json(cls, doc) -> "Emulator":
        d = doc["design"]
        design = Design(np.asarray(d["points"]), np.asarray(d["lower"]), np.asarray(d["upper"]),
                        d.get("replicates", doc["a"]))
        hyper = {k: np.asarray(v) if k == "lengthscales" else float(v)
                 for k, v in doc["hyper"].items()}
        nh = doc.get("noise_hyper")
        if nh is not None:
            nh = {k: np.asarray(v) if k == "lengthscales" else float(v) for k, v in nh.items()}
        return cls(design, doc["ybar"], doc["s2"], doc["a"], hyper, nh,
                   doc.get("optimizer_ok", True), doc.get("outputs_digest", ""))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "Emulator":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def fit_emulator(design: Design, outputs, starts=5, maxiter=200, seed=0) -> Emulator:
    """Train the mean GP and, with replicates, the log-variance GP.

    Rows of ``outputs`` are design points, columns replicates.
    """
    outputs = np.asarray(outputs, float)
    if outputs.ndim == 1:
        outputs = outputs[:, None]
    m, a = outputs.shape
    if m != design.points.shape[0]:
        raise DesignError("outputs rows do not match design points")
    if np.unique(np.round(design.points, 12), axis=0).shape[0] != m:
        raise DesignError("design has duplicated points; pass replicates as columns instead")
    ybar = outputs.mean(axis=1)
    s2 = outputs.var(axis=1, ddof=1) if a > 1 else np.zeros(m)
    digest = hashlib.sha256(np.ascontiguousarray(outputs).tobytes()).hexdigest()

    u = design.unit(design.points)
    mu = float(np.mean(ybar))
    sd = float(np.std(ybar)) or 1.0
    z = (ybar - mu) / sd
    noise = s2 / a / sd ** 2 if a > 1 else np.zeros(m)
    x, ok = _fit_hyper(u, z, noise, starts, maxiter, seed)
    d = u.shape[1]
    hyper = {"lengthscales": np.exp(x[:d]), "signal_var": float(np.exp(x[d])),
             "nugget": float(np.exp(x[d + 1]))}

    noise_hyper = None
    if a > 1 and np.max(s2) > 0:
        floor = max(1e-8 * float(np.max(s2)), 1e-300)
        t = np.log(np.maximum(s2, floor))
        offset = float(np.mean(t))
        tsd = float(np.std(t)) or 1.0
        xn, ok_n = _fit_hyper(u, (t - offset) / tsd, np.zeros(m), starts, maxiter, seed + 1)
        ok = ok and ok_n
        noise_hyper = {"lengthscales": np.exp(xn[:d]),
                       "signal_var": float(np.exp(xn[d])) * tsd ** 2,
                       "nugget": float(np.exp(xn[d + 1])) * tsd ** 2, "offset": offset}
    if not ok:
        warnings.warn("emulator hyperparameter search failed; using best values found")
    return Emulator(design, ybar, s2, a, hyper, noise_hyper, ok, digest)


def emulate(e: Emulator, x, theta, include_noise=True) -> tuple[float, float]:
    """(m_N, v_N^2) at a single (x, theta)."""
    pt = np.concatenate([[float(x)], np.atleast_1d(np.asarray(theta, float))])
    pred = e.predict(pt[None, :], include_noise)
    return float(pred.mean[0]), float(pred.variance[0])


def rmspe(e: Emulator, test_inputs, test_truth) -> float:
    test_inputs = np.atleast_2d(np.asarray(test_inputs, float))
    test_truth = np.asarray(test_truth, float).reshape(-1)
    if test_inputs.shape[0] != test_truth.size:
        raise ArgumentError("test inputs and truth differ in length")
    pred = e.predict(test_inputs, include_noise=False).mean
    return float(np.sqrt(np.mean((pred - test_truth) ** 2)))


@dataclass
class EmulatorSlice:
    """Emulator restricted to a fixed set of x nodes, fast in theta.

    The squared-exponential kernel factorizes over coordinates, so the x part
    of every kernel vector is computed once.
    """

    emulator: Emulator
    x_nodes: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        e = self.emulator
        d = e.design
        self.x_nodes = np.asarray(self.x_nodes, float).reshape(-1)
        ux = (self.x_nodes - d.lower[0]) / (d.upper[0] - d.lower[0])
        udes = d.unit(d.points)
        self._udes = udes
        self._kx = se_kernel(ux[:, None], udes[:, :1], e.gp.ls[:1])
        if e.noise_gp is not None:
            self._kx_noise = se_kernel(ux[:, None], udes[:, :1], e.noise_gp.ls[:1])

    def _ktheta(self, gp, theta):
        d = self.emulator.design
        ut = (np.asarray(theta, float) - d.lower[1:]) / (d.upper[1:] - d.lower[1:])
        return se_kernel(ut[None, :], self._udes[:, 1:], gp.ls[1:])[0]

    def mean(self, theta) -> np.ndarray:
        e = self.emulator
        kt = self._ktheta(e.gp, theta)
        return e.mu + e.sd * e.gp.s2 * (self._kx @ (kt * e.gp.alpha))

    def noise(self, theta) -> np.ndarray:
        e = self.emulator
        if e.noise_gp is None:
            return e.replicate_noise(np.zeros((self.x_nodes.size, 1)))
        kt = self._ktheta(e.noise_gp, theta)
        m = e.noise_gp.s2 * (self._kx_noise @ (kt * e.noise_gp.alpha))
        return np.exp(m + e.noise_hyper["offset"])

    def mean_variance(self, theta) -> np.ndarray:
        e = self.emulator
        kt = self._ktheta(e.gp, theta)
        b = e.gp.kinv * np.outer(kt, kt)
        quad = e.gp.s2 ** 2 * np.sum((self._kx @ b) * self._kx, axis=1)
        return e.sd ** 2 * np.maximum(e.gp.s2 - quad, 0.0)

    def variance(self, theta, include_noise=True) -> np.ndarray:
        v = self.mean_variance(theta)
        return v + self.noise(theta) if include_noise else v

    def integrated_variance(self, theta, weights, include_noise=True) -> float:
        """sum_j w_j v_N^2(x_j, theta) without forming per-node quadratic forms."""
        e = self.emulator
        w = np.asarray(weights, float)
        if "w" not in self._cache or not np.array_equal(self._cache["w"], w):
            self._cache.update(w=w.copy(), G=(self._kx * w[:, None]).T @ self._kx,
                               wsum=float(w.sum()))
        kt = self._ktheta(e.gp, theta)
        quad = e.gp.s2 ** 2 * float(kt @ (e.gp.kinv * self._cache["G"]) @ kt)
        # clipping of the per-node variance at zero is ignored here; it only binds
        # at round-off level near design points
        total = e.sd ** 2 * (e.gp.s2 * self._cache["wsum"] - quad)
        if include_noise:
            total += float(w @ self.noise(theta))
        return max(total, 0.0)
