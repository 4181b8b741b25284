import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contagion.measures import DailyMeasures
from contagion.params import GARCH_NAMES, GarchParams, JumpSpec, MarketCalendar, default_box, map_structural_to_garch, design_structural_params
from contagion.qmle import FitError, FitOptions, filter_recursion, fit, garch_filter, loglik_gradient, quasi_loglik

CAL = MarketCalendar()
LAM = 0.25


def _measures(rv, jvp=None, jvn=None, ov=None, day0=1):
    rv = np.asarray(rv, dtype=float)
    z = np.zeros_like(rv)
    return DailyMeasures(
        np.arange(day0, day0 + rv.shape[1]), rv, z if jvp is None else jvp, z if jvn is None else jvn, z if ov is None else ov
    )


def _random_measures(rng, n, scale=0.05):
    rv = scale * rng.gamma(4.0, 0.25, (2, n))
    jvp = 0.005 * rng.gamma(2.0, 0.5, (2, n))
    jvn = 0.005 * rng.gamma(2.0, 0.5, (2, n))
    ov = 0.1 * rng.gamma(1.0, 1.0, (2, n))
    return _measures(rv, jvp, jvn, ov)


def _interior_point(rng):
    box = default_box()
    v = np.empty(18)
    for l in (0, 1):
        b = 9 * l
        v[b] = rng.uniform(0.01, 0.1)
        v[b + 1] = rng.uniform(0.05, 0.8)
        v[b + 2] = rng.uniform(0.05, 0.4)
        v[b + 3 : b + 5] = rng.uniform(-0.5, 0.5, 2)
        v[b + 5] = rng.uniform(0.0, 0.2)
        v[b + 6] = rng.uniform(0.0, 0.2)
        v[b + 7 : b + 9] = rng.uniform(-0.3, 0.3, 2)
    assert np.all((v > box.lower) & (v < box.upper))
    return v


def test_fixed_point_when_innovations_vanish():
    d = _measures(np.zeros((2, 20)))
    theta = GarchParams(np.zeros(18)).with_value("omega_1", 0.1).with_value("gamma_1", 0.5)
    theta = theta.with_value("omega_2", 0.1).with_value("gamma_2", 0.5)
    f = garch_filter(theta, d, h_init=(0.2, 0.2))
    np.testing.assert_allclose(f.h, 0.2, rtol=1e-14)


def test_one_step_arithmetic():
    rv = np.zeros((2, 3))
    rv[0, 0] = LAM  # RV / lambda = 1
    d = _measures(rv)
    theta = GarchParams(np.zeros(18)).with_value("omega_1", 0.1).with_value("alpha_1", 0.28)
    f = garch_filter(theta, d, h_init=(1.0, 1.0))
    assert f.h[0, 1] == pytest.approx(0.38, abs=1e-15)


def test_market_two_sees_same_day_market_one():
    rv = np.zeros((2, 3))
    rv[0, 1] = LAM
    d = _measures(rv)
    theta = GarchParams(np.zeros(18)).with_value("omega_2", 0.1).with_value("alpha_21", 0.5)
    f = garch_filter(theta, d, h_init=(1.0, 1.0))
    # day-2 RV of market 1 enters h_2 on day 2 (index 1), not day 3
    assert f.h[1, 1] == pytest.approx(0.6)
    assert f.h[1, 2] == pytest.approx(0.1)


def test_filter_reproduces_simulated_h_on_true_measures(design_panel):
    tr = design_panel.truth
    d = _measures(tr.iv, tr.ijp, tr.ijn, tr.ov)
    f = garch_filter(tr.theta, d, h_init=tr.h[:, 0])
    assert np.max(np.abs(f.h - tr.h)) <= 1e-10


def test_single_day_likelihood_at_ratio_one():
    v = np.array([0.3, 0.7])
    d = _measures((v * LAM)[:, None])
    theta = np.zeros(18)
    # with n = 1 the filter returns h_init; choose it equal to RV / lambda
    from contagion.qmle import _loglik_and_grad

    ll, _ = _loglik_and_grad(theta, d, v)
    assert ll == pytest.approx(-0.5 * (np.log(v[0]) + 1 + np.log(v[1]) + 1), rel=1e-15)


@settings(max_examples=40)
@given(v=st.floats(1e-4, 10.0), scale=st.floats(1.01, 20.0))
def test_likelihood_maximized_at_ratio(v, scale):
    # x -> log x + v / x is minimized at x = v
    def term(x):
        return -(np.log(x) + v / x)

    assert term(v) > term(v * scale)
    assert term(v) > term(v / scale)


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(42)
    d = _random_measures(rng, 200)
    for _ in range(5):
        x = _interior_point(rng)
        g = loglik_gradient(x, d)
        fd = np.empty(18)
        for j in range(18):
            e = np.zeros(18)
            e[j] = 1e-6
            fd[j] = (quasi_loglik(x + e, d) - quasi_loglik(x - e, d)) / 2e-6
        rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-8)
        assert rel.max() <= 1e-5


def test_market_two_score_independent_of_market_one_omega():
    rng = np.random.default_rng(3)
    d = _random_measures(rng, 100)
    x = _interior_point(rng)
    x[0] = 0.1
    g1 = loglik_gradient(x, d)
    x[0] = 0.2
    g2 = loglik_gradient(x, d)
    assert np.array_equal(g1[9:], g2[9:])


def test_floor_zeroes_derivative_where_active():
    d = _measures(np.full((2, 10), 0.05))
    theta = np.zeros(18)
    theta[0] = -1.0  # drives h_1 below the floor
    theta[9] = 0.1
    f = garch_filter(theta, d, grad=True)
    assert f.floored == 9
    assert np.all(f.h[0, 1:] == 1e-12)
    assert np.all(f.dh[0, 1:] == 0.0)


def _exact_filter_data(theta, n, rng):
    """Exogenous jump, overnight and cross inputs; each market's RV / lambda equals its own filter value."""
    jvp = 0.005 * rng.gamma(2.0, 0.5, (2, n))
    jvn = 0.005 * rng.gamma(2.0, 0.5, (2, n))
    ov = 0.1 * rng.gamma(1.0, 1.0, (2, n))
    rv = np.zeros((2, n))
    h = np.zeros((2, n))
    h[:, 0] = [0.2, 0.2]
    rv[:, 0] = LAM * h[:, 0]
    for i in range(1, n):
        for l, o in ((0, 1), (1, 0)):
            b = theta[9 * l : 9 * l + 9]
            cross = i - 1 if l == 0 else i
            h[l, i] = (
                b[0] + (b[1] + b[2]) * h[l, i - 1] + (b[3] * jvp[l, i - 1] + b[4] * jvn[l, i - 1]) / LAM
                + b[5] * ov[l, i - 1] / (1 - LAM)
                + (b[6] * rv[o, cross] + b[7] * jvp[o, cross] + b[8] * jvn[o, cross]) / LAM
            )
            rv[l, i] = LAM * h[l, i]
    return _measures(rv, jvp, jvn, ov), h


def test_exact_filter_data_recovered():
    # with RV / lambda equal to h the lagged RV and lagged h coincide, so only gamma + alpha is
    # identified; every other coordinate and that sum must come back to optimizer tolerance
    theta = map_structural_to_garch(design_structural_params(), JumpSpec()).values
    d, h = _exact_filter_data(theta, 2000, np.random.default_rng(8))
    res = fit(d, FitOptions(h_init=(0.2, 0.2)))
    est = res.theta.values
    ident = [j for j in range(18) if j % 9 not in (1, 2)]
    np.testing.assert_allclose(est[ident], theta[ident], atol=1e-3)
    for l in (0, 1):
        assert est[9 * l + 1] + est[9 * l + 2] == pytest.approx(theta[9 * l + 1] + theta[9 * l + 2], abs=1e-3)
    np.testing.assert_allclose(res.filter.h, h, rtol=1e-5)


def test_fit_converges_at_stationary_point(design_fit):
    assert design_fit.converged
    assert design_fit.grad_norm <= 1e-6


def test_truth_beats_random_box_draws(design_measures):
    theta0 = map_structural_to_garch(design_structural_params(), JumpSpec()).values
    box = default_box()
    rng = np.random.default_rng(100)
    l0 = quasi_loglik(theta0, design_measures)
    wins = 0
    for _ in range(100):
        draw = rng.uniform(box.lower, box.upper)
        wins += l0 >= quasi_loglik(draw, design_measures)
    assert wins >= 95


def test_fit_requires_thirty_days():
    rng = np.random.default_rng(0)
    with pytest.raises(FitError):
        fit(_random_measures(rng, 29))


def test_fit_report_lists_every_coordinate(tmp_path, design_fit):
    path = tmp_path / "fit.csv"
    design_fit.to_csv(path)
    lines = path.read_text().splitlines()
    assert [ln.split(",")[0] for ln in lines[1:]] == list(GARCH_NAMES)
    assert "converged = True" in design_fit.diagnostics()


def test_filter_recursion_matches_loop():
    rng = np.random.default_rng(6)
    d = _random_measures(rng, 50)
    x = _interior_point(rng)
    h, _ = filter_recursion(x, d.rv, d.jvp, d.jvn, d.ov, LAM, LAM, (0.1, 0.2))
    ref = np.zeros((2, 50))
    ref[:, 0] = [0.1, 0.2]
    for i in range(1, 50):
        for l, o in ((0, 1), (1, 0)):
            b = x[9 * l : 9 * l + 9]
            c = i - 1 if l == 0 else i
            ref[l, i] = (
                b[0] + b[1] * ref[l, i - 1] + b[2] * d.rv[l, i - 1] / LAM
                + (b[3] * d.jvp[l, i - 1] + b[4] * d.jvn[l, i - 1]) / LAM + b[5] * d.ov[l, i - 1] / (1 - LAM)
                + (b[6] * d.rv[o, c] + b[7] * d.jvp[o, c] + b[8] * d.jvn[o, c]) / LAM
            )
    np.testing.assert_allclose(h, ref, rtol=1e-12)
