import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from conftest import book
from liquidation.calibrate import (
    FitError,
    FitResult,
    LinearImpactRegressor,
    PowerImpactRegressor,
    calibrate_scenario,
    compare_fits,
    fit_linear,
    fit_power,
    fit_quadratic,
    realized_volatility,
    average_spread,
    to_solver_form,
    write_report,
)
from liquidation.impact import ImpactForm, linear, power
from liquidation.lob import impact_curve, synthetic_series, volume_ladder

RATES = np.arange(1, 51, dtype=float)


def test_linear_exact():
    res = fit_linear(RATES, 2 * RATES + 1)
    np.testing.assert_allclose(res.form.params, (2.0, 1.0), atol=1e-12)
    assert res.sse == pytest.approx(0.0, abs=1e-20)
    assert res.r_squared == pytest.approx(1.0, abs=1e-15)


def test_linear_two_points():
    res = fit_linear([1.0, 3.0], [5.0, -1.0])
    np.testing.assert_allclose(res.form.params, (-3.0, 8.0), atol=1e-12)
    assert res.sse == pytest.approx(0.0, abs=1e-20)


def test_linear_matches_normal_equations():
    snaps = synthetic_series(20, level_qty=170)
    curve = impact_curve(snaps, volume_ladder(1200.0, 5.0, 50), 5.0)
    x, y = curve.rates, curve.tpi
    n, sx, sxx, sy, sxy = len(x), x.sum(), (x * x).sum(), y.sum(), (x * y).sum()
    det = n * sxx - sx * sx
    slope = (n * sxy - sx * sy) / det
    intercept = (sxx * sy - sx * sxy) / det
    res = fit_linear(x, y)
    assert res.form.params[0] == pytest.approx(slope, rel=1e-9)
    assert res.form.params[1] == pytest.approx(intercept, rel=1e-9, abs=1e-12)


def test_linear_degenerate():
    with pytest.raises(FitError):
        fit_linear([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        fit_linear([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        fit_linear([1.0, np.nan], [1.0, 2.0])


def test_power_exact():
    res = fit_power(RATES, -3 * RATES**0.5 + 1)
    np.testing.assert_allclose(res.form.params, (-3.0, 0.5, 1.0), rtol=1e-7)
    assert res.sse == pytest.approx(0.0, abs=1e-12)


def test_power_steep_exponent_recovered():
    # the sse is flat along the exponent here; the joint polish pins it down
    res = fit_power(RATES, 3.8 * RATES**3.85 - 0.97)
    np.testing.assert_allclose(res.form.params, (3.8, 3.85, -0.97), rtol=1e-9)


def test_power_on_a_line_is_linear():
    y = 0.7 * RATES - 0.2
    p, lin = fit_power(RATES, y), fit_linear(RATES, y)
    assert p.exponent == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_allclose(p.fitted, lin.fitted, atol=1e-6)


def test_power_preconditions():
    with pytest.raises(FitError):
        fit_power([1.0, 2.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(FitError):
        fit_power([0.0, 1.0, 2.0], [1.0, 2.0, 3.0])


def test_staircase_with_small_ladder_is_convex():
    snaps = synthetic_series(10, level_qty=170)
    curve = impact_curve(snaps, volume_ladder(50.0, 5.0, 50), 5.0)
    assert fit_power(curve.rates, curve.tpi).exponent > 1.0


def test_r_squared_definition():
    rng = np.random.default_rng(0)
    y = 0.3 * RATES**1.4 + rng.normal(0, 1, RATES.size)
    for res in (fit_linear(RATES, y), fit_power(RATES, y)):
        sst = np.sum((y - y.mean()) ** 2)
        assert res.r_squared == pytest.approx(1 - res.sse / sst, abs=1e-12)
        assert 0.0 <= res.r_squared <= 1.0
        assert res.mean_sq_resid == pytest.approx(res.sse / RATES.size)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(-5, 5), st.floats(-2, 2), st.integers(0, 2**31 - 1))
def test_power_never_worse_than_linear(e, k, c, seed):
    noise = np.random.default_rng(seed).normal(0, 0.1, RATES.size)
    y = k * RATES**e + c + noise * max(1.0, abs(k))
    p, lin = fit_power(RATES, y), fit_linear(RATES, y)
    assert p.sse <= lin.sse * (1 + 1e-9) + 1e-12


def _fit(rates, sse, r2, mean, std):
    rates = np.asarray(rates, dtype=float)
    return FitResult(linear(0, 0), sse, mean, std, r2, rates, rates.copy())


def test_compare_recorded_under_tpi():
    x = np.arange(1.0, 51.0)
    lin = _fit(x, 0.0000590, 0.990627, 0.0000012, 0.0000012)
    pw = _fit(x, 0.0000162, 0.997424, 0.0000003, 0.0000006)
    cmp = compare_fits(lin, pw)
    assert cmp.power_wins
    assert cmp.metrics["sse"] == (0.0000590, 0.0000162)


def test_compare_recorded_over_ppi():
    x = np.arange(1.0, 51.0)
    lin = _fit(x, 5.6188366, 0.955715, 0.1146701, 0.1361679)
    pw = _fit(x, 3.8335537, 0.969786, 0.0782358, 0.0732665)
    assert compare_fits(lin, pw).power_wins


def test_compare_identical_is_tie():
    res = fit_linear(RATES, 2 * RATES + 1 + np.sin(RATES))
    cmp = compare_fits(res, res)
    assert set(cmp.winners.values()) == {"tie"}
    assert not cmp.power_wins


def test_compare_mismatched_curves():
    a = fit_linear(RATES, 2 * RATES)
    b = fit_power(RATES + 1, 2 * RATES)
    with pytest.raises(ValueError):
        compare_fits(a, b)


def test_realized_volatility():
    assert realized_volatility([5.0, 5.0, 5.0]) == 0.0
    assert realized_volatility([100.0, 100.0 * math.exp(0.01)]) == pytest.approx(0.01, rel=1e-12)
    with pytest.raises(ValueError):
        realized_volatility([1.0, 0.0])
    with pytest.raises(ValueError):
        realized_volatility([1.0])


def test_average_spread():
    assert average_spread(synthetic_series(5)) == pytest.approx(0.1, abs=1e-12)
    snaps = [book([(100.0, 1)], [(100.1, 1)]), book([(100.0, 1)], [(100.3, 1)])]
    assert average_spread(snaps) == pytest.approx(0.2, abs=1e-12)
    with pytest.raises(ValueError):
        average_spread([])


def test_solver_form_examples():
    assert to_solver_form(power(-0.0011318, 0.97757467, 0.01148375)) == power(0.0011318, 0.97757467, -0.01148375)
    assert to_solver_form(linear(-0.00095984, 0.00209078)) == linear(0.00095984, -0.00209078)
    zero = linear(0.0, 0.0)
    assert to_solver_form(zero).params == (0.0, 0.0)


@given(st.sampled_from(["linear", "quadratic", "power"]), st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3))
def test_solver_form_is_involution(kind, params):
    n = {"linear": 2, "quadratic": 3, "power": 3}[kind]
    params = params[:n]
    if kind == "power":
        params[1] = abs(params[1]) + 0.1
    form = ImpactForm(kind, tuple(params))
    assert to_solver_form(to_solver_form(form)) == form


def test_quadratic_fit():
    res = fit_quadratic(RATES, 0.5 * RATES**2 - RATES + 3)
    np.testing.assert_allclose(res.form.params, (0.5, -1.0, 3.0), rtol=1e-9)


def test_regressors():
    X = RATES[:, None]
    lin = LinearImpactRegressor(scenario="average", target="tpi").fit(X, 2 * RATES + 1)
    np.testing.assert_allclose(lin.predict(X), 2 * RATES + 1, atol=1e-10)
    assert lin.score(X, 2 * RATES + 1) == pytest.approx(1.0)
    pw = clone(PowerImpactRegressor()).fit(X, -3 * RATES**0.5 + 1)
    assert pw.form_.params[1] == pytest.approx(0.5, rel=1e-7)
    with pytest.raises(ValueError):
        pw.predict(np.ones((3, 2)))
    with pytest.raises(ValueError):
        LinearImpactRegressor().fit(np.ones((4, 2)), np.ones(4))


def test_calibrate_scenario_and_report(tmp_path):
    snaps = synthetic_series(6, level_qty=170)
    cal = calibrate_scenario(snaps, "under", 50.0)
    assert set(cal.fits) == {("tpi", "linear"), ("tpi", "power"), ("ppi", "linear"), ("ppi", "power")}
    assert cal.fits[("tpi", "power")].exponent > 1
    payload = cal.to_dict()
    assert len(payload["fits"]) == 4 and set(payload["comparisons"]) == {"tpi", "ppi"}
    path = write_report(tmp_path / "cal.json", [cal], sigma=0.0, spread=0.1)
    assert path.read_text().count('"model"') == 4


def test_calibrate_needs_feasible_volumes():
    snaps = [book([(100.0, 1.0), (99.0, 1.0)], [(101.0, 1.0)])]
    with pytest.raises(FitError):
        calibrate_scenario(snaps, "over", 7000.0)
