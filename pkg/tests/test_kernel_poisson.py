import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from l2calib.errors import NumericalError
from l2calib.kernel_poisson import (KernelFit, MaternParams, default_kappa_grid, deviance_gof,
                                    fit_kpr, fit_kpr_arrays, fit_kpr_cv, matern, matern_bessel,
                                    matern_matrix, predict_lambda, select_kappa_cv)
from l2calib.timeseries import TimeSeries
from l2calib.toys import TOY_1D


def _grid_series(y):
    y = np.asarray(y)
    return TimeSeries(np.linspace(0, 1, y.size), y)


@given(st.floats(-3, 3), st.sampled_from([1.5, 2.5, 3.0]), st.floats(0.01, 5))
def test_matern_is_one_at_zero_distance(x, nu, rho):
    assert matern(x, x, MaternParams(nu, rho)) == 1.0


@pytest.mark.parametrize("nu", [1.5, 2.5])
def test_closed_forms_match_bessel(nu):
    p = MaternParams(nu, 0.3)
    d = np.random.default_rng(0).uniform(0, 2, 20)
    closed = matern_matrix(np.zeros(1), d, p)[0]
    np.testing.assert_allclose(closed, matern_bessel(d, p), rtol=0, atol=1e-10)


def test_matern_value_high_precision():
    # independent evaluation of 2^(1-nu)/Gamma(nu) u^nu K_nu(u) with u = 2 sqrt(nu) d / rho
    mpmath.mp.dps = 40
    nu = mpmath.mpf(5) / 2
    u = 2 * mpmath.sqrt(nu)
    ref = 2 ** (1 - nu) / mpmath.gamma(nu) * u ** nu * mpmath.besselk(nu, u)
    assert matern(0.0, 1.0, MaternParams(2.5, 1.0)) == pytest.approx(float(ref), abs=1e-14)


def test_invalid_params():
    with pytest.raises(ValueError):
        MaternParams(0.5, 1.0)
    with pytest.raises(ValueError):
        MaternParams(2.5, 0.0)


def test_gram_positive_definite():
    x = np.sort(np.random.default_rng(1).uniform(0, 1, 60))
    g = matern_matrix(x, x, MaternParams(2.5, 0.2))
    g[np.diag_indices_from(g)] += 1e-8 * np.mean(np.diag(g))
    assert np.allclose(g, g.T)
    assert np.linalg.eigvalsh(g).min() > 0


def test_constant_data_heavy_penalty():
    fit = fit_kpr(_grid_series(np.full(30, 7)), MaternParams(), 1e6)
    np.testing.assert_allclose(fit(np.linspace(0, 1, 11)), 7.0, atol=1e-6)
    assert fit.b == pytest.approx(math.log(7.0), abs=1e-9)


def test_two_points_equal_counts():
    fit = fit_kpr(_grid_series([1, 1]), MaternParams(), 0.1)
    np.testing.assert_allclose(fit(np.linspace(0, 1, 7)), 1.0, atol=1e-6)


def test_ridgeless_limit_interpolates():
    rng = np.random.default_rng(2)
    y = rng.integers(5, 40, 12)
    fit = fit_kpr(_grid_series(y), MaternParams(2.5, 0.1), 1e-9)
    np.testing.assert_allclose(fit(np.linspace(0, 1, 12)), y, rtol=0.05)


def test_all_zero_counts_stay_positive():
    fit = fit_kpr(_grid_series(np.zeros(20)), MaternParams(), 0.01)
    pred = fit(np.linspace(0, 1, 50))
    assert np.all(pred > 0) and np.all(np.isfinite(pred))


def test_prediction_is_continuous():
    data = TOY_1D.draw(50, np.random.default_rng(3))
    fit = fit_kpr(data, MaternParams(2.5, 0.2), 1e-3)
    for x in np.linspace(0.01, 0.99, 25):
        a, b = predict_lambda(fit, x), predict_lambda(fit, x + 1e-9)
        assert abs(a - b) <= 1e-6 * a
    assert isinstance(predict_lambda(fit, 0.5), float)


def test_objective_never_increases():
    for seed in range(5):
        data = TOY_1D.draw(50, np.random.default_rng(seed))
        for kappa in (1e-6, 1e-3, 1.0):
            fit = fit_kpr(data, MaternParams(2.5, 0.1), kappa)
            assert np.all(np.diff(fit.objective_path) <= 1e-12 * np.abs(fit.objective_path[0]))
            assert fit.converged


def test_edf_monotone_in_penalty():
    data = TOY_1D.draw(50, np.random.default_rng(4))
    edfs = [fit_kpr(data, MaternParams(), k).edf for k in np.logspace(-7, 1, 12)]
    assert np.all(np.diff(edfs) <= 1e-8)
    assert 0 < min(edfs) and max(edfs) <= data.n


def test_fit_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_kpr_arrays([0.5], [1], MaternParams(), 1.0)
    with pytest.raises(ValueError):
        fit_kpr_arrays([0, 1], [1, 1], MaternParams(), 0.0)


def test_l2_error_shrinks_with_n():
    """Average estimation error falls as the grid densifies (rate-order penalty)."""
    kernel = MaternParams(2.5, 0.2)
    xs = np.linspace(0, 1, 400)
    truth = TOY_1D.lam(2 * np.pi * xs)
    err = []
    for n in (50, 200, 800):
        e = []
        for seed in range(20):
            data = TOY_1D.draw(n, np.random.default_rng(seed))
            grid = default_kappa_grid(n, 2.5, np.mean(data.y))
            fit = fit_kpr(data, kernel, float(np.exp(np.mean(np.log(grid)))))
            e.append(np.sqrt(np.mean((fit(xs) - truth) ** 2)))
        err.append(np.mean(e))
    assert err[0] > err[1] > err[2]


def test_default_grid_centre():
    n, nu = 200, 2.5
    m = nu + 0.5
    grid = default_kappa_grid(n, nu)
    centre = float(np.exp(np.mean(np.log(grid))))
    assert centre == pytest.approx(n ** (-2 * m / (2 * m + 1)), rel=1e-12)
    assert np.allclose(np.diff(np.log(grid)), np.log(grid[1] / grid[0]))


def test_cv_singleton_grid():
    data = TOY_1D.draw(30, np.random.default_rng(0))
    assert select_kappa_cv(data, MaternParams(), [0.123]) == 0.123
    with pytest.raises(ValueError):
        select_kappa_cv(data, MaternParams(), [0.1, 1.0], folds=1)


def test_cv_prefers_smoothing_on_constant_truth():
    grid = default_kappa_grid(50, 2.5, 20.0)
    hits = 0
    for seed in range(50):
        y = np.random.default_rng(seed).poisson(20.0, 50)
        hits += select_kappa_cv(_grid_series(y), MaternParams(), grid) == grid[-1]
    assert hits >= 40


def test_cv_all_failures_raise(monkeypatch):
    import l2calib.kernel_poisson as kp

    def boom(*a, **k):
        raise NumericalError("forced")

    monkeypatch.setattr(kp, "fit_kpr_arrays", boom)
    with pytest.raises(NumericalError):
        select_kappa_cv(_grid_series(np.arange(10)), MaternParams(), [0.1, 1.0])


def test_perfect_fit_has_zero_deviance():
    data = _grid_series(np.full(10, 4))
    fit = KernelFit(math.log(4.0), np.zeros(10), data.x, MaternParams(), 1.0, 1.0, True, 1)
    gof = deviance_gof(fit, data)
    assert gof.deviance == 0.0 and gof.p_value == 1.0


def test_phi_hat_is_ratio():
    data = TOY_1D.draw(50, np.random.default_rng(5))
    gof = deviance_gof(fit_kpr_cv(data), data)
    assert gof.phi_hat == gof.deviance / gof.edf
    assert 0 <= gof.p_value <= 1


def test_phi_near_one_for_poisson_data():
    ok = 0
    for seed in range(100):
        data = TOY_1D.draw(50, np.random.default_rng(seed))
        ok += 0.6 <= deviance_gof(fit_kpr_cv(data), data).phi_hat <= 1.5
    assert ok >= 90


def test_phi_detects_overdispersion():
    ok = 0
    x = np.linspace(0, 1, 50)
    lam = TOY_1D.lam(2 * np.pi * x)
    for seed in range(100):
        # negative binomial with variance 5 lambda
        y = np.random.default_rng(seed).negative_binomial(lam / 4.0, 0.2)
        data = TimeSeries(x, y)
        ok += deviance_gof(fit_kpr_cv(data), data).phi_hat > 2
    assert ok >= 90


def test_kernel_fit_json_roundtrip():
    data = TOY_1D.draw(20, np.random.default_rng(6))
    fit = fit_kpr(data, MaternParams(2.5, 0.2), 1e-3)
    back = KernelFit.from_json(fit.to_json())
    xs = np.linspace(0, 1, 9)
    np.testing.assert_allclose(back(xs), fit(xs), rtol=1e-14)
