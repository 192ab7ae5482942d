"""Replication studies: estimator MSE comparisons, interval coverage, emulator RMSPE."""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .calibration import OptimizerConfig, fit_l2, fit_ls, fit_mle, make_problem
from .emulator import lhd, rmspe
from .errors import L2CalibError, StudyError
from .inference import sandwich_l2, sandwich_l2_emulated, z_value
from .kernel_poisson import fit_kpr_cv
from .timeseries import TimeSeries
from .toys import TOYS, Toy

log = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.10
DIRECT = ("L2", "LS", "MLE")
EMULATED = ("L2_EMU", "LS_EMU", "MLE_EMU")
# blocks summed before the kernel fit when n is large
MAX_KERNEL_POINTS = 250


@dataclass(frozen=True)
class StudyConfig:
    study: str = "TOY_1D"
    n: int | None = None
    replicates: int = 100
    seed: int = 0
    with_emulator: bool = False
    emulator_m: int = 100
    emulator_a: int = 100
    coverage: bool = False
    level: float = 0.95
    direct: bool = True
    starts: int = 10

    def __post_init__(self):
        if self.study not in TOYS:
            raise ValueError(f"unknown study {self.study!r}; choose from {sorted(TOYS)}")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if not (self.direct or self.with_emulator):
            raise ValueError("nothing to run: enable direct or emulated fits")

    @property
    def toy(self) -> Toy:
        return TOYS[self.study]

    @property
    def methods(self) -> tuple:
        return (DIRECT if self.direct else ()) + (EMULATED if self.with_emulator else ())


@dataclass
class StudyResult:
    config: StudyConfig
    theta_star: np.ndarray
    methods: tuple
    estimates: dict
    coverage: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def n_ok(self) -> int:
        return len(next(iter(self.estimates.values()))) if self.estimates else 0

    def squared_errors(self, method) -> np.ndarray:
        return (np.asarray(self.estimates[method]) - self.theta_star) ** 2

    def mse(self, method) -> np.ndarray:
        """Per-coordinate mean squared error against the true projection."""
        return self.squared_errors(method).mean(axis=0)

    def rows(self):
        for m in self.methods:
            for j, v in enumerate(self.mse(m)):
                yield {"method": m, "coordinate": j + 1, "mse": float(v),
                       "coverage": self.coverage.get(m, [None] * (j + 1))[j]
                       if m in self.coverage else None}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, ["method", "coordinate", "mse", "coverage"])
            w.writeheader()
            for r in self.rows():
                w.writerow({k: "" if v is None else v for k, v in r.items()})

    def to_json(self) -> dict:
        return {
            "config": asdict(self.config),
            "theta_star": self.theta_star.tolist(),
            "replicates_ok": self.n_ok,
            "failures": self.failures,
            "wall_clock": self.wall_clock,
            "mse": {m: self.mse(m).tolist() for m in self.methods},
            "coverage": {m: list(map(int, c)) for m, c in self.coverage.items()},
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("L2CALIB_THREADS", "1")))
    except ValueError:
        return 1


def _kernel_series(data: TimeSeries) -> tuple[TimeSeries, float]:
    """Series used for the kernel fit, plus the factor mapping its rate back."""
    if data.n <= MAX_KERNEL_POINTS:
        return data, 1.0
    block = int(np.ceil(data.n / MAX_KERNEL_POINTS))
    nb = data.n // block
    y = data.y[:nb * block].reshape(nb, block).sum(axis=1)
    x = data.x[:nb * block].reshape(nb, block).mean(axis=1)
    return TimeSeries(x, y, origin=data.origin, scale=data.scale), float(block)


def fit_lambda_hat(data: TimeSeries):
    """Kernel estimate of the rate as a function of natural time."""
    series, factor = _kernel_series(data)
    fit = fit_kpr_cv(series)
    return lambda x: fit((np.asarray(x, float) - data.origin) / data.scale) / factor


def _covers(theta, cov, star, level):
    half = z_value(level) * np.sqrt(np.maximum(np.diag(cov), 0.0))
    return (np.abs(theta - star) <= half).astype(int)


def run_replicate(cfg: StudyConfig, index, data_seed, theta_star, emulator=None) -> dict:
    """Fit every requested method to one Poisson draw; returns method -> estimate."""
    toy = cfg.toy
    data = toy.draw(cfg.n, np.random.default_rng(data_seed))
    lam_hat = fit_lambda_hat(data)
    opt = OptimizerConfig(starts=cfg.starts, seed=int(index))
    out, cover = {}, {}
    if cfg.direct:
        prob = make_problem(data, lam_hat, toy.f, toy.lower, toy.upper, optimizer=opt)
        res = fit_l2(prob)
        out["L2"] = res.theta_hat
        if cfg.coverage:
            cov = sandwich_l2(lam_hat, toy.f, res.theta_hat, 1.0, prob.quadrature, data.n)
            cover["L2"] = _covers(res.theta_hat, cov.cov, theta_star, cfg.level)
        out["LS"] = fit_ls(data, toy.f, toy.lower, toy.upper, opt).theta_hat
        out["MLE"] = fit_mle(data, toy.f, toy.lower, toy.upper, opt).theta_hat
    if emulator is not None:
        prob = make_problem(data, lam_hat, emulator, toy.lower, toy.upper, optimizer=opt)
        res = fit_l2(prob)
        out["L2_EMU"] = res.theta_hat
        if cfg.coverage:
            cov = sandwich_l2_emulated(lam_hat, emulator, res.theta_hat, prob.quadrature, data.n)
            cover["L2_EMU"] = _covers(res.theta_hat, cov.cov, theta_star, cfg.level)
        out["LS_EMU"] = fit_ls(data, emulator, toy.lower, toy.upper, opt).theta_hat
        out["MLE_EMU"] = fit_mle(data, emulator, toy.lower, toy.upper, opt).theta_hat
    return {"index": index, "estimates": out, "cover": cover}


def _safe_replicate(args):
    try:
        return run_replicate(*args)
    except L2CalibError as exc:
        return {"index": args[1], "error": f"{type(exc).__name__}: {exc}"}


def run_mse_study(cfg: StudyConfig, emulator=None, workers=None) -> StudyResult:
    """Paired-seed study: every method sees the same data in each replicate.

    The emulator, when requested, is trained once per study and shared.
    """
    t0 = time.perf_counter()
    toy = cfg.toy
    star = np.asarray(toy.theta_star, float)
    ss = np.random.SeedSequence(cfg.seed)
    emu_ss, data_ss = ss.spawn(2)
    if cfg.with_emulator and emulator is None:
        emulator = toy.train_emulator(cfg.emulator_m, cfg.emulator_a,
                                      int(emu_ss.generate_state(1)[0]))
    seeds = [int(c.generate_state(1)[0]) for c in data_ss.spawn(cfg.replicates)]
    jobs = [(cfg, i, seeds[i], star, emulator if cfg.with_emulator else None)
            for i in range(cfg.replicates)]
    workers = worker_count() if workers is None else workers
    if workers > 1 and cfg.replicates > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_safe_replicate, jobs))
    else:
        results = [_safe_replicate(j) for j in jobs]
    results.sort(key=lambda r: r["index"])

    failures = [{"replicate": r["index"], "error": r["error"]} for r in results if "error" in r]
    if len(failures) > MAX_FAILURE_RATE * cfg.replicates:
        raise StudyError(f"{len(failures)} of {cfg.replicates} replicates failed: {failures[:3]}")
    good = [r for r in results if "error" not in r]
    if not good:
        raise StudyError("no replicate succeeded")
    estimates = {m: np.array([r["estimates"][m] for r in good]) for m in cfg.methods}
    coverage = {}
    if cfg.coverage:
        for m in good[0]["cover"]:
            coverage[m] = np.sum([r["cover"][m] for r in good], axis=0)
    for f in failures:
        log.warning("replicate %d failed: %s", f["replicate"], f["error"])
    return StudyResult(cfg, star, cfg.methods, estimates, coverage, failures,
                       time.perf_counter() - t0)


def run_coverage_study(cfg: StudyConfig, emulator=None, workers=None) -> dict:
    """Replicates whose interval contains theta*, per interval method and coordinate."""
    cfg = StudyConfig(**{**asdict(cfg), "coverage": True})
    return run_mse_study(cfg, emulator, workers).coverage


def run_rmspe_table(toy, settings, seed=0, test_points=10_000, starts=5) -> list[dict]:
    """Emulator accuracy on random untried inputs for each (m, a) setting.

    Settings share one training seed (common random numbers): equal m means
    the same design, and the runs for a smaller a are a subset of a larger a.
    """
    toy = TOYS[toy] if isinstance(toy, str) else toy
    lower = np.concatenate([[toy.domain[0]], toy.lower])
    upper = np.concatenate([[toy.domain[1]], toy.upper])
    test_ss, emu_ss = np.random.SeedSequence(seed).spawn(2)
    train_seed = int(emu_ss.generate_state(1)[0])
    u = np.random.default_rng(test_ss).uniform(size=(test_points, lower.size))
    pts = lower + u * (upper - lower)
    truth = toy.truth_at(pts)
    rows = []
    for m, a in settings:
        t0 = time.perf_counter()
        emu = toy.train_emulator(int(m), int(a), train_seed, starts=starts)
        t1 = time.perf_counter()
        err = rmspe(emu, pts, truth)
        rows.append({"m": int(m), "a": int(a), "rmspe": err, "fit_seconds": t1 - t0,
                     "predict_seconds": time.perf_counter() - t1})
    return rows


def write_rows_csv(rows, path) -> None:
    rows = list(rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, list(rows[0]))
        w.writeheader()
        w.writerows(rows)


__all__ = ["StudyConfig", "StudyResult", "run_mse_study", "run_coverage_study",
           "run_rmspe_table", "fit_lambda_hat", "lhd"]
