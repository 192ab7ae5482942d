"""End-to-end fitting: kernel estimate, calibration, covariance, intervals, bands."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .calibration import OptimizerConfig, fit_l2, fit_ls, fit_mle, make_problem
from .emulator import Emulator, crossed_design, fit_emulator
from .errors import ArgumentError, DegenerateGradient
from .inference import (EstimateReport, Interval, delta_ci, incubation_function,
                        predictive_band_det, predictive_band_stoch, r0_function, sandwich_l2,
                        sandwich_l2_emulated, sandwich_ls, sandwich_mle)
from .kernel_poisson import DEFAULT_RHOS, deviance_gof, fit_kpr_cv
from .seir import PARAM_NAMES, SeirSimulator, StochasticSeirSimulator
from .timeseries import TimeSeries
from .toys import TOY_1D, TOY_3D

MODELS = ("seir-det", "seir-stoch", "toy-1d", "toy-3d")
METHODS = ("l2", "ls", "mle")
SEIR_BOUNDS = {
    "beta": (0.05, 2.0),
    "kappa": (0.05, 1.0),
    "gamma": (0.05, 1.0),
    "i0": (0.0, 1000.0),
    "e0": (0.0, 1000.0),
    "r0_init": (0.0, 1000.0),
}
# the deviance test must reject at this level before phi_hat inflates the covariance
PHI_TEST_LEVEL = 0.05


@dataclass
class RunConfig:
    model: str = "seir-det"
    N: float = 50_000
    free: tuple = ("beta", "kappa", "gamma")
    fixed: dict = field(default_factory=lambda: {"i0": 20.0, "e0": 20.0, "r0_init": 0.0})
    lower: list | None = None
    upper: list | None = None
    nu: float = 2.5
    rhos: tuple = DEFAULT_RHOS
    method: str = "l2"
    level: float = 0.95
    seed: int = 0
    starts: int = 10
    phi: str = "auto"
    emu_runs: int = 60
    emu_times: int = 20
    emu_reps: int = 50
    emu_starts: int = 3
    band_points: int = 200

    def __post_init__(self):
        self.free = tuple(self.free)
        self.rhos = tuple(self.rhos)
        if self.model not in MODELS:
            raise ArgumentError(f"unknown model {self.model!r}; choose from {', '.join(MODELS)}")
        if self.method not in METHODS:
            raise ArgumentError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if not 0 < self.level < 1:
            raise ArgumentError("level must lie in (0, 1)")
        if self.phi not in ("auto", "on", "off"):
            raise ArgumentError("phi must be auto, on or off")
        if self.seir:
            unknown = set(self.free) - set(PARAM_NAMES)
            if unknown:
                raise ArgumentError(f"unknown SEIR parameters {sorted(unknown)}")
            missing = set(PARAM_NAMES) - set(self.free) - set(self.fixed)
            if missing:
                raise ArgumentError(f"no fixed value for {sorted(missing)}")
        if self.model == "seir-stoch" and min(self.emu_runs, self.emu_times, self.emu_reps) < 2:
            raise ArgumentError("stochastic model needs emulator runs, times and replicates >= 2")
        lo, hi = self.bounds()
        if lo.size != hi.size or np.any(lo >= hi):
            raise ArgumentError("bounds need lower < upper for every parameter")

    @property
    def seir(self) -> bool:
        return self.model.startswith("seir")

    @property
    def param_names(self) -> tuple:
        if self.seir:
            return self.free
        return tuple(f"theta{j + 1}" for j in range(self.toy.q))

    @property
    def toy(self):
        return {"toy-1d": TOY_1D, "toy-3d": TOY_3D}[self.model]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.seir:
            lo = [SEIR_BOUNDS[k][0] for k in self.free]
            hi = [SEIR_BOUNDS[k][1] for k in self.free]
        else:
            lo, hi = self.toy.lower, self.toy.upper
        lo = np.asarray(self.lower if self.lower is not None else lo, float)
        hi = np.asarray(self.upper if self.upper is not None else hi, float)
        return lo, hi

    def simulator(self):
        if self.seir:
            return SeirSimulator(self.N, self.free, self.fixed)
        return self.toy.f

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ArgumentError(f"unknown config keys {sorted(extra)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


def emulator_mean(emulator: Emulator):
    """The emulator mean as an ordinary simulator callable."""
    return lambda x, theta: emulator.at_nodes(np.atleast_1d(x)).mean(theta)


def train_seir_emulator(cfg: RunConfig, horizon: float, seed=None) -> Emulator:
    """Crossed design (time grid x LHD over theta) of replicated Gillespie runs."""
    seed = cfg.seed if seed is None else seed
    lo, hi = cfg.bounds()
    sim = StochasticSeirSimulator(cfg.N, cfg.free, cfg.fixed)
    x_grid = np.unique(np.round(np.linspace(0.0, horizon, cfg.emu_times)))
    ss = np.random.SeedSequence(seed)
    d_ss, r_ss = ss.spawn(2)
    design = crossed_design(x_grid, lo, hi, cfg.emu_runs, int(d_ss.generate_state(1)[0]),
                            cfg.emu_reps)
    thetas = design.points[::x_grid.size, 1:]
    outputs = np.vstack([sim.replicates(x_grid, th, cfg.emu_reps, child).T
                         for th, child in zip(thetas, r_ss.spawn(len(thetas)))])
    return fit_emulator(design, outputs, starts=cfg.emu_starts, seed=seed % 2**31)


def _phi(gof, mode) -> float:
    if mode == "off":
        return 1.0
    if mode == "on" or gof.p_value < PHI_TEST_LEVEL:
        return max(gof.phi_hat, 1.0) if mode == "auto" else gof.phi_hat
    return 1.0


def _derived(cfg: RunConfig, theta, cov) -> dict:
    """R0 and incubation period intervals; fixed inputs give a zero-width interval."""
    if not cfg.seir:
        return {}
    names = cfg.free
    out = {}
    specs = {"R0": (("beta", "gamma"), r0_function),
             "incubation": (("kappa",), incubation_function)}
    for key, (needs, make) in specs.items():
        if all(k in names for k in needs):
            g, grad = make(names)
            try:
                out[key] = delta_ci(theta, cov, g, cfg.level, grad)
                continue
            except DegenerateGradient:
                pass
        vals = dict(cfg.fixed)
        vals.update(zip(names, theta))
        est = vals["beta"] / vals["gamma"] if key == "R0" else 1.0 / vals["kappa"]
        out[key] = Interval(est, est, est, cfg.level)
    return out


@dataclass
class FitOutput:
    report: EstimateReport
    band: object
    kernel: object
    gof: object
    fit: object


def fit_series(series: TimeSeries, cfg: RunConfig, emulator: Emulator | None = None) -> FitOutput:
    """Kernel fit with deviance check, calibration, sandwich covariance, intervals, band."""
    kfit = fit_kpr_cv(series, cfg.nu, cfg.rhos)
    gof = deviance_gof(kfit, series)
    phi = _phi(gof, cfg.phi)
    lo, hi = cfg.bounds()
    opt = OptimizerConfig(starts=cfg.starts, seed=cfg.seed)
    stochastic = cfg.model == "seir-stoch"
    if stochastic and emulator is None:
        emulator = train_seir_emulator(cfg, series.domain[1])
    sim = emulator if stochastic else cfg.simulator()
    prob = make_problem(series, kfit, sim, lo, hi, optimizer=opt)
    lam = prob.lambda_hat
    n = series.n

    if cfg.method == "l2":
        res = fit_l2(prob)
        if stochastic:
            cov = sandwich_l2_emulated(lam, emulator, res.theta_hat, prob.quadrature, n, phi)
        else:
            cov = sandwich_l2(lam, sim, res.theta_hat, phi, prob.quadrature, n)
    else:
        fit = fit_ls if cfg.method == "ls" else fit_mle
        res = fit(series, sim, lo, hi, opt)
        plain = emulator_mean(emulator) if stochastic else sim
        sandwich = sandwich_ls if cfg.method == "ls" else sandwich_mle
        cov = sandwich(lam, plain, res.theta_hat, prob.quadrature, n,
                       phi_hat=phi if cfg.phi == "on" else 1.0)

    x = np.linspace(*series.domain, cfg.band_points)
    if stochastic:
        band = predictive_band_stoch(emulator, res.theta_hat, cov, x, cfg.level)
    else:
        band = predictive_band_det(sim, res.theta_hat, cov, x, cfg.level)

    report = EstimateReport(
        method=res.method,
        theta_hat=res.theta_hat,
        cov=cov.cov,
        phi_hat=phi,
        derived=_derived(cfg, res.theta_hat, cov.cov),
        param_names=cfg.param_names,
        extra={
            "country": series.country,
            "model": cfg.model,
            "criterion": res.criterion,
            "n_evals": res.n_evals,
            "boundary_contact": [bool(b) for b in res.boundary_contact],
            "seed": cfg.seed,
            "se": cov.se.tolist(),
            "gof": {"deviance": gof.deviance, "resid_df": gof.edf, "p_value": gof.p_value,
                    "phi_hat": gof.phi_hat},
            "kernel": {"nu": kfit.kernel.nu, "rho": kfit.kernel.rho, "kappa_n": kfit.kappa_n,
                       "edf": kfit.edf},
            "day0": None if series.day0 is None else series.day0.isoformat(),
        },
    )
    return FitOutput(report, band, kfit, gof, res)


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ArgumentError("config file must hold a JSON object")
    return doc
