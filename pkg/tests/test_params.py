import math
from dataclasses import replace

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contagion.params import (
    GARCH_NAMES,
    GarchParams,
    JumpSpec,
    MarketCalendar,
    ParamBox,
    default_box,
    map_structural_to_garch,
    design_structural_params,
    rho_constants,
    session_bounds,
    structural_from_mapping,
    structural_to_config,
    validate_garch_params,
)


def test_box_midpoint_is_valid():
    box = default_box()
    assert validate_garch_params(GarchParams(box.midpoint), box).valid


def test_gamma_above_upper_flags_coordinate_two():
    box = default_box()
    assert box.upper[1] == pytest.approx(0.999)
    p = GarchParams(box.midpoint).with_value("gamma_1", 1.0)
    rep = validate_garch_params(p, box)
    assert not rep.valid
    assert rep.violations == [2]


def test_mapped_design_point_inside_default_box():
    theta = map_structural_to_garch(design_structural_params(), JumpSpec())
    box = default_box()
    assert validate_garch_params(theta, box).valid
    assert np.all(theta.values > box.lower) and np.all(theta.values < box.upper)


def test_gamma_is_product_of_branch_gammas():
    theta = map_structural_to_garch(design_structural_params(), JumpSpec())
    assert theta["gamma_1"] == pytest.approx(0.4 * 0.3, abs=1e-15)
    assert theta["gamma_2"] == pytest.approx(0.4 * 0.4, abs=1e-15)


def test_rho11_direct_value():
    assert rho_constants(0.7, 0.3).r1 == pytest.approx(math.expm1(0.7) / 0.7, rel=1e-14)
    assert rho_constants(0.7, 0.3).r1 == pytest.approx(1.448218, abs=1e-6)


def test_rho_small_alpha_limits():
    # the constants approach 1, 1/2, 1/6 at rate alpha; at alpha = 1e-4 they agree
    # with the first-order series to 1e-6 and with the limits to within the linear term
    a = 1e-4
    c = rho_constants(a, 0.5)
    assert c.r1 == pytest.approx(1.0 + a / 2, abs=1e-6)
    assert c.r2 == pytest.approx(0.5 + a / 6, abs=1e-6)
    assert c.r3 == pytest.approx(1 / 6 + a / 24, abs=1e-6)
    c = rho_constants(1e-7, 0.5)
    assert (c.r1, c.r2, c.r3) == pytest.approx((1.0, 0.5, 1 / 6), abs=1e-6)


@pytest.mark.parametrize("a", [1e-8, 1e-3, 9.99e-3, 1.01e-2, 0.3, 0.7, 0.999])
def test_rho_constants_match_high_precision(a):
    mpmath.mp.dps = 40
    x = mpmath.mpf(a)
    r1 = (mpmath.e**x - 1) / x
    r2 = (mpmath.e**x - 1 - x) / x**2
    r3 = (mpmath.e**x - 1 - x - x**2 / 2) / x**3
    c = rho_constants(a, 0.3)
    assert c.r1 == pytest.approx(float(r1), rel=1e-13)
    assert c.r2 == pytest.approx(float(r2), rel=1e-13)
    assert c.r3 == pytest.approx(float(r3), rel=1e-12)


@pytest.mark.parametrize("a", [0.05, 0.28, 0.6, 0.7, 0.95])
def test_nu_weight_equals_quadrature(a):
    # r2 - 2 r3 is the integral of e^{a u} u (1 - u) over [0, 1]
    mpmath.mp.dps = 30
    q = mpmath.quad(lambda u: mpmath.e ** (a * u) * u * (1 - u), [0, 1])
    assert rho_constants(a, 0.5).nu_weight == pytest.approx(float(q), rel=1e-12)


def test_rho_positive_over_grid():
    g = np.linspace(1e-3, 1 - 1e-3, 60)
    for a in g:
        for gam in g:
            assert rho_constants(a, gam).rho > 0


def test_mapped_design_point_frozen():
    # frozen from a 40-digit mpmath evaluation of the closed forms at the design point
    theta = map_structural_to_garch(design_structural_params(), JumpSpec())
    expected = [
        0.044508037835131275, 0.12, 0.28, 0.1, 0.12, 0.1, 0.12, 0.1, 0.12,
        0.045823374565826678, 0.16, 0.24, 0.12, 0.16, 0.1, 0.12, 0.1, 0.1,
    ]
    np.testing.assert_allclose(theta.values, expected, rtol=1e-13)


def test_rho_is_one_when_gamma_h_equals_one_minus_alpha_h():
    for a in (0.1, 0.6, 0.7):
        assert rho_constants(a, 1 - a).rho == pytest.approx(1.0, abs=1e-14)


def test_mapping_rejects_alpha_outside_unit_interval():
    s = design_structural_params()
    bad = replace(s, market1=replace(s.market1, alpha_H=1.0))
    with pytest.raises(ValueError):
        map_structural_to_garch(bad, JumpSpec())


def test_mapping_is_lipschitz_in_every_structural_coordinate():
    s = design_structural_params()
    base = map_structural_to_garch(s, JumpSpec()).values
    eps = 1e-6
    for l, attr in (("market1", "market1"), ("market2", "market2")):
        mp = getattr(s, attr)
        for f in mp.__dataclass_fields__:
            pert = replace(s, **{attr: replace(mp, **{f: getattr(mp, f) + eps})})
            diff = map_structural_to_garch(pert, JumpSpec()).values - base
            assert np.max(np.abs(diff)) < 50 * eps


def test_session_bounds_examples():
    cal = MarketCalendar(0.25, 0.25, 0.5)
    assert session_bounds(cal, 1, 1) == (0.0, 0.25)
    assert session_bounds(cal, 2, 1) == (0.5, 0.75)
    cal5 = MarketCalendar(5.5 / 24, 6.5 / 24, 14 / 24)
    lo, hi = session_bounds(cal5, 1, 3)
    assert lo == 2.0 and hi == pytest.approx(2 + 5.5 / 24, abs=1e-15)
    with pytest.raises(ValueError):
        session_bounds(cal, 1, 0)


@given(
    l1=st.floats(0.01, 0.49),
    l2=st.floats(0.01, 0.49),
    frac=st.floats(0.0, 1.0),
    d1=st.integers(1, 400),
    d2=st.integers(1, 400),
)
def test_sessions_never_overlap(l1, l2, frac, d1, d2):
    tau = l1 + frac * (1 - l1 - l2)
    cal = MarketCalendar(l1, l2, tau)
    a = session_bounds(cal, 1, d1)
    b = session_bounds(cal, 2, d2)
    assert a[1] <= b[0] + 1e-12 or b[1] <= a[0] + 1e-12


def test_calendar_rejects_overlap():
    with pytest.raises(ValueError):
        MarketCalendar(0.6, 0.25, 0.5)


def test_garch_vector_csv_round_trip():
    theta = map_structural_to_garch(design_structural_params(), JumpSpec())
    back = GarchParams.from_csv_row(theta.to_csv_row())
    assert np.array_equal(back.values, theta.values)
    assert list(theta.as_dict()) == list(GARCH_NAMES)


def test_structural_config_round_trip():
    s = design_structural_params()
    cp = structural_to_config(s)
    back = structural_from_mapping(dict(cp["structural"]))
    assert back.market1 == s.market1 and back.market2 == s.market2 and back.rho == s.rho


def test_box_requires_ordered_bounds():
    with pytest.raises(ValueError):
        ParamBox(np.ones(18), np.ones(18))


@settings(max_examples=50)
@given(st.lists(st.floats(-10, 10), min_size=18, max_size=18))
def test_validity_matches_box_membership(vals):
    box = default_box()
    v = np.array(vals)
    rep = validate_garch_params(GarchParams(v), box)
    assert rep.valid == bool(np.all((v >= box.lower) & (v <= box.upper)))
