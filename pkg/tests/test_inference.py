import json

import numpy as np
import pytest

from l2calib.calibration import fit_l2, fit_mle, make_problem, natural_lambda, uniform_quadrature
from l2calib.errors import DegenerateGradient, DomainError, SingularError
from l2calib.inference import (EstimateReport, Interval, _vector_hessian, delta_ci, fd_steps,
                               grad_hess_f, incubation_function, predictive_band_det,
                               predictive_band_stoch, r0_function, sandwich_l2,
                               sandwich_l2_emulated, sandwich_ls, sandwich_mle, sym_inverse,
                               z_value)
from l2calib.kernel_poisson import fit_kpr_cv
from l2calib.seir import SeirSimulator
from l2calib.toys import TOY_1D, TOY_3D
from mocks import MockEmulator

Q01 = uniform_quadrature(0.0, 1.0)


def const_sim(x, theta):
    return np.full(np.shape(x), float(np.asarray(theta).reshape(-1)[0]))


def lin_sim(x, theta):
    return float(np.asarray(theta).reshape(-1)[0]) * np.asarray(x, float)


def _psd(m, slack=1e-10):
    return np.allclose(m, m.T, atol=1e-12 * np.abs(m).max()) and \
        np.linalg.eigvalsh(m).min() >= -slack * np.trace(m)


def test_polynomial_derivatives_exact():
    th = np.array([0.3, 0.5, 0.8])
    g, h = grad_hess_f(TOY_3D.f, 0.7, th)
    np.testing.assert_allclose(g, [1, 0.7, 0.49], atol=1e-8)
    np.testing.assert_allclose(h, 0, atol=1e-8)
    for th in (np.array([0.3, 0.5, 0.8]), np.array([3.5, 0.5, 1.8])):
        x = np.linspace(0, 2, 50)
        g, h = grad_hess_f(TOY_3D.f, x, th)
        np.testing.assert_allclose(g, [np.ones_like(x), x, x * x], atol=1e-8)
        assert np.array_equal(h, h.transpose(1, 0, 2))
        # second differences of a linear function are pure rounding: eps |f| / h^2
        floor = 4 * np.finfo(float).eps * np.abs(TOY_3D.f(x, th)).max() / fd_steps(th).min() ** 2
        assert np.abs(h).max() <= floor
    g, h = grad_hess_f(lin_sim, np.linspace(0, 1, 5), [1.3])
    np.testing.assert_allclose(g[0], np.linspace(0, 1, 5), atol=1e-8)
    assert np.abs(h).max() <= 4 * np.finfo(float).eps * 1.3 / fd_steps([1.3])[0] ** 2


def test_seir_gradient_richardson():
    sim = SeirSimulator(5e5, ("beta", "kappa", "gamma"), {"i0": 20, "e0": 20, "r0_init": 0})
    th = np.array([0.5, 0.25, 0.2])
    x = np.arange(10.0, 100.0, 10.0)
    fun = lambda t: sim(x, t)  # noqa: E731
    h = fd_steps(th)
    g1, _ = _vector_hessian(fun, th, h)
    g2, _ = _vector_hessian(fun, th, h / 2)
    assert np.max(np.abs(g1 - g2) / np.abs(g2).max(axis=1, keepdims=True)) <= 0.01


def test_sym_inverse_rejects_singular():
    np.testing.assert_allclose(sym_inverse([[2.0, 1.0], [1.0, 3.0]]) @ [[2, 1], [1, 3]],
                               np.eye(2), atol=1e-14)
    with pytest.raises(SingularError):
        sym_inverse([[1.0, 1.0], [1.0, 1.0]])


def test_l2_constant_model_anchor():
    c, n = 7.0, 40
    cov = sandwich_l2(lambda x: np.full_like(x, c), const_sim, [c], 1.0, Q01, n)
    assert cov.V[0, 0] == pytest.approx(2.0, rel=1e-6)
    assert cov.W[0, 0] == pytest.approx(c, rel=1e-12)
    assert cov.cov[0, 0] == pytest.approx(c / n, rel=1e-6)
    assert cov.method == "L2"


def test_phi_scales_l2_covariance():
    lam = lambda x: np.full_like(x, 3.0)  # noqa: E731
    a = sandwich_l2(lam, const_sim, [3.0], 1.0, Q01, 10).cov
    b = sandwich_l2(lam, const_sim, [3.0], 2.5, Q01, 10).cov
    np.testing.assert_allclose(b, 2.5 * a, rtol=1e-12)


def test_covariances_symmetric_psd_random():
    rng = np.random.default_rng(0)
    q = uniform_quadrature(0.0, 2.0)
    for _ in range(10):
        a, b = rng.uniform(0.5, 3, 2)
        lam = lambda x: a + b * x + np.sin(3 * x) + 1  # noqa: E731
        th = rng.uniform(0.5, 3, 3)
        for fn in (sandwich_ls, sandwich_mle):
            assert _psd(fn(lam, TOY_3D.f, th, q, 50).cov)
        assert _psd(sandwich_l2(lam, TOY_3D.f, th, 1.0, q, 50).cov)


def test_singular_when_parameter_is_inert():
    sim = lambda x, th: th[0] + 0.0 * th[1] * x  # noqa: E731
    with pytest.raises(SingularError):
        sandwich_l2(lambda x: np.ones_like(x), sim, [1.0, 0.5], 1.0, Q01, 10)


def test_ls_equals_l2_for_perfect_simulator():
    th = np.array([1.0, 2.0, 0.5])
    lam = lambda x: TOY_3D.f(x, th)  # noqa: E731
    q = uniform_quadrature(0.0, 2.0)
    l2 = sandwich_l2(lam, TOY_3D.f, th, 1.0, q, 50)
    ls = sandwich_ls(lam, TOY_3D.f, th, q, 50)
    np.testing.assert_allclose(ls.W, l2.W, rtol=1e-8)
    np.testing.assert_allclose(ls.cov, l2.cov, rtol=1e-8)


def test_ls_dominates_l2_on_imperfect_problem():
    star = TOY_1D.theta_star
    q = uniform_quadrature(*TOY_1D.domain)
    l2 = sandwich_l2(TOY_1D.lam, TOY_1D.f, star, 1.0, q, 50).cov
    ls = sandwich_ls(TOY_1D.lam, TOY_1D.f, star, q, 50).cov
    assert np.linalg.eigvalsh(ls - l2).min() >= -1e-8
    assert ls[0, 0] > l2[0, 0]


def test_ls_constant_model_adds_square():
    c, th = 4.0, 3.5
    cov = sandwich_ls(lambda x: np.full_like(x, c), const_sim, [th], Q01, 10)
    assert cov.W[0, 0] == pytest.approx(c + (c - th) ** 2, rel=1e-12)


def test_mle_constant_model_anchor():
    c, n = 5.0, 30
    cov = sandwich_mle(lambda x: np.full_like(x, c), const_sim, [c], Q01, n)
    assert cov.cov[0, 0] == pytest.approx(c / n, rel=1e-6)
    assert np.array_equal(cov.cov, cov.cov.T)
    with pytest.raises(DomainError):
        sandwich_mle(lambda x: x, lambda x, th: th[0] * (x - 0.5), [1.0], Q01, n)


def test_mle_interval_centred_near_two_thirds():
    x = (np.arange(5000) + 0.5) / 5000
    y = np.random.default_rng(0).poisson(x ** 2 * 1.0)
    res = fit_mle((x, y), lin_sim, [0.05], [2])
    cov = sandwich_mle(lambda z: z ** 2, lin_sim, res.theta_hat, Q01, x.size)
    ci = delta_ci(res.theta_hat, cov, lambda t: t[0])
    assert ci.contains(2 / 3) or abs(ci.estimate - 2 / 3) < 0.02
    assert not ci.contains(0.75)


def test_emulated_reduces_to_direct_for_exact_emulator():
    lam = lambda x: TOY_3D.lam(x)  # noqa: E731
    q = uniform_quadrature(0.0, 2.0)
    th = np.array([3.5, 0.6, 1.8])
    emu = MockEmulator(TOY_3D.f, lower=(0, 0, 0, 0), upper=(2, 5, 5, 5))
    a = sandwich_l2(lam, TOY_3D.f, th, 1.0, q, 50)
    b = sandwich_l2_emulated(lam, emu, th, q, 50)
    np.testing.assert_allclose(b.cov, a.cov, rtol=1e-6)
    # a variance surface that does not depend on theta leaves V unchanged
    flat = MockEmulator(TOY_3D.f, lambda x, t: 0.3 + x, lower=(0, 0, 0, 0), upper=(2, 5, 5, 5))
    c = sandwich_l2_emulated(lam, flat, th, q, 50)
    np.testing.assert_allclose(c.V, a.V, atol=1e-8 * np.abs(a.V).max())
    assert c.method == "L2_EMU"


def test_delta_identity_is_wald():
    th = np.array([1.0, 2.0])
    cov = np.array([[0.04, 0.01], [0.01, 0.09]])
    ci = delta_ci(th, cov, lambda t: t[1], 0.9)
    half = z_value(0.9) * 0.3
    assert (ci.lower, ci.upper) == pytest.approx((2 - half, 2 + half), abs=1e-12)


def test_delta_r0_hand_formula():
    names = ("beta", "kappa", "gamma")
    g, grad = r0_function(names)
    b, gm = 0.5, 0.2
    th = np.array([b, 0.25, gm])
    s1, s2 = 0.01, 0.003
    cov = np.diag([s1 ** 2, 0.0001, s2 ** 2])
    var = s1 ** 2 / gm ** 2 + b ** 2 * s2 ** 2 / gm ** 4
    for gr in (grad, None):
        ci = delta_ci(th, cov, g, 0.95, gr)
        assert ((ci.upper - ci.lower) / (2 * z_value(0.95))) ** 2 == pytest.approx(
            var, rel=1e-10 if gr else 1e-6)  # numeric gradient: O((h / gamma)^2) truncation
    assert ci.estimate == pytest.approx(2.5)
    ginc, gradinc = incubation_function(names)
    assert delta_ci(th, cov, ginc, 0.95, gradinc).estimate == pytest.approx(4.0)


def test_delta_degenerate_gradient():
    with pytest.raises(DegenerateGradient):
        delta_ci([1.0, 2.0], np.eye(2), lambda t: 3.0)


def test_interval_invariants():
    with pytest.raises(ValueError):
        Interval(1.0, 2.0, 3.0, 0.95)
    with pytest.raises(ValueError):
        Interval(1.0, 0.0, 2.0, 1.0)
    assert Interval(1.0, 0.5, 1.5, 0.95).to_json() == {"est": 1.0, "lo": 0.5, "hi": 1.5}


def test_band_zero_covariance_and_flat_gradient():
    x = np.linspace(0, 1, 21)
    band = predictive_band_det(lin_sim, [2.0], np.zeros((1, 1)), x)
    np.testing.assert_array_equal(band.lower, band.fit)
    band = predictive_band_det(lin_sim, [2.0], np.array([[0.1]]), x)
    assert band.width[0] == 0.0 and np.all(band.width[1:] > 0)


def _l2_band_width(n, seed):
    data = TOY_1D.draw(n, np.random.default_rng(seed))
    kfit = fit_kpr_cv(data)
    prob = make_problem(data, kfit, TOY_1D.f, TOY_1D.lower, TOY_1D.upper)
    res = fit_l2(prob)
    cov = sandwich_l2(natural_lambda(kfit, data), TOY_1D.f, res.theta_hat, 1.0,
                      prob.quadrature, n)
    x = np.linspace(0.5, 6.0, 40)
    return predictive_band_det(TOY_1D.f, res.theta_hat, cov, x).width


def test_band_width_root_n_scaling():
    ratios = [np.mean(_l2_band_width(200, s) / _l2_band_width(50, s)) for s in range(5)]
    assert np.mean(ratios) == pytest.approx(0.5, abs=0.1)


def test_stochastic_band_matches_and_dominates():
    x = np.linspace(0.1, 2, 30)
    th = np.array([3.5, 0.6, 1.8])
    cov = np.diag([0.05, 0.1, 0.02])
    det = predictive_band_det(TOY_3D.f, th, cov, x)
    exact = MockEmulator(TOY_3D.f, lower=(0, 0, 0, 0), upper=(2, 5, 5, 5))
    sto = predictive_band_stoch(exact, th, cov, x)
    np.testing.assert_allclose(sto.lower, det.lower, atol=1e-6)
    np.testing.assert_allclose(sto.upper, det.upper, atol=1e-6)
    noisy = MockEmulator(TOY_3D.f, lambda z, t: 0.5 + z, lower=(0, 0, 0, 0), upper=(2, 5, 5, 5))
    assert np.all(predictive_band_stoch(noisy, th, cov, x).width > det.width)


def test_band_csv_and_report(tmp_path):
    band = predictive_band_det(lin_sim, [2.0], np.array([[0.1]]), np.linspace(0, 1, 5))
    band.write_csv(tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "x,fit,lo,hi" and len(lines) == 6
    rep = EstimateReport("L2", np.array([0.5, 0.2]), np.eye(2), 1.0,
                         {"R0": Interval(2.5, 2.0, 3.0, 0.95)}, ("beta", "gamma"), "b.csv")
    rep.write(tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert set(doc) >= {"method", "theta_hat", "cov", "phi_hat", "derived", "band"}
    assert doc["derived"]["R0"] == {"est": 2.5, "lo": 2.0, "hi": 3.0}


@pytest.mark.slow
def test_plugin_variance_matches_empirical():
    n = 200
    est, var = [], []
    q = uniform_quadrature(*TOY_1D.domain)
    for seed in range(200):
        data = TOY_1D.draw(n, np.random.default_rng(seed))
        kfit = fit_kpr_cv(data)
        prob = make_problem(data, kfit, TOY_1D.f, TOY_1D.lower, TOY_1D.upper)
        res = fit_l2(prob)
        est.append(res.theta_hat[0])
        var.append(sandwich_l2(natural_lambda(kfit, data), TOY_1D.f, res.theta_hat, 1.0, q,
                               n).cov[0, 0])
    ratio = np.mean(var) / np.var(est)
    assert 0.5 <= ratio <= 2.0
