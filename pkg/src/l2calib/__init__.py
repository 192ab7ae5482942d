"""L2-projection calibration of imperfect count-output simulators."""
from .calibration import (CalibProblem, FitResult, OptimizerConfig, fit_l2, fit_l2_emulated,
                          fit_ls, fit_mle, l2_criterion, make_problem, true_theta_oracle,
                          uniform_quadrature)
from .emulator import Emulator, crossed_design, emulate, fit_emulator, joint_design, lhd, rmspe
from .inference import (SandwichCov, delta_ci, grad_hess_f, predictive_band_det,
                        predictive_band_stoch, sandwich_l2, sandwich_l2_emulated, sandwich_ls,
                        sandwich_mle)
from .kernel_poisson import (KernelFit, MaternParams, deviance_gof, estimate_overdispersion,
                             fit_kpr, fit_kpr_cv, predict_lambda, select_kappa_cv)
from .seir import (SeirParams, SeirSimulator, StochasticSeirSimulator, gillespie_seir,
                   seir_incidence, solve_seir_ode)
from .timeseries import TimeSeries, parse_cumulative_csv, to_daily_increments

__version__ = "0.1.0"

__all__ = [
    "CalibProblem", "FitResult", "OptimizerConfig", "fit_l2", "fit_l2_emulated", "fit_ls",
    "fit_mle", "l2_criterion", "make_problem", "true_theta_oracle", "uniform_quadrature",
    "Emulator", "crossed_design", "emulate", "fit_emulator", "joint_design", "lhd", "rmspe",
    "SandwichCov", "delta_ci", "grad_hess_f", "predictive_band_det", "predictive_band_stoch",
    "sandwich_l2", "sandwich_l2_emulated", "sandwich_ls", "sandwich_mle", "KernelFit",
    "MaternParams", "deviance_gof", "estimate_overdispersion", "fit_kpr", "fit_kpr_cv",
    "predict_lambda", "select_kappa_cv", "SeirParams", "SeirSimulator",
    "StochasticSeirSimulator", "gillespie_seir", "seir_incidence", "solve_seir_ode",
    "TimeSeries", "parse_cumulative_csv", "to_daily_increments",
]
