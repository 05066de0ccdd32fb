import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from liquidation.analytic import (
    AnalyticSolution,
    policy_linear,
    policy_quadratic,
    supports,
    value_linear,
    value_quadratic,
)
from liquidation.impact import ProblemSpec, linear, power, quadratic
from liquidation.presets import SPREAD, scenario_spec


def spec_of(a1, a2=0.0, ppi=None, delta=0.0, sigma=0.0):
    return ProblemSpec(linear(a1, a2), ppi if ppi is not None else linear(0.0), sigma=sigma, delta=delta)


def test_value_linear_zero_inventory():
    assert value_linear(0.0, 100.0, 0.0, spec_of(0.3, 0.1, linear(0.2))) == 0.0


def test_value_linear_substitution():
    assert value_linear(0.0, 100.0, 1.0, spec_of(1.0)) == pytest.approx(99.0, abs=1e-12)


def test_value_linear_symbolic():
    t, S, q, a1, a2, b1, D, T = sp.symbols("t S q a1 a2 b1 Delta T")
    expr = q * (S - D / 2 - a2) - (b1 / 2 + a1 / (T - t)) * q**2
    subs = {
        t: sp.Rational(1, 2), S: 150, q: sp.Rational(1, 2), T: 1,
        a1: sp.Rational("0.00079754"), a2: sp.Rational("0.00066177"),
        b1: sp.Rational("0.00095264"), D: sp.Rational("0.100069"),
    }
    expected = float(expr.subs(subs))
    spec = scenario_spec("under", "linear", "linear", drop_ppi_intercept=True)
    assert value_linear(0.5, 150.0, 0.5, spec) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("t, q, expected", [(0.0, 0.5, 0.5), (0.9, 0.1, 1.0), (0.3, 0.0, 0.0)])
def test_policy_linear(t, q, expected):
    assert policy_linear(t, q, 1.0) == pytest.approx(expected, rel=1e-12)


def test_value_quadratic_zero_inventory():
    spec = spec_of(0.7, 0.2, quadratic(0.4, 0.1))
    assert value_quadratic(0.3, 42.0, 0.0, spec) == 0.0
    np.testing.assert_array_equal(value_quadratic(0.3, 42.0, np.array([0.0, 0.0]), spec), [0.0, 0.0])


def test_value_quadratic_substitution():
    spec = spec_of(1.0, 0.0, quadratic(1.0))
    assert value_quadratic(0.0, 10.0, 1.0, spec) == pytest.approx(10 - 32 / 9, abs=1e-12)


def test_value_quadratic_symbolic():
    t, S, q, a1, a2, c1, c2, D, T = sp.symbols("t S q a1 a2 c1 c2 Delta T")
    expr = q * (S - D / 2 - a2) - c2 * q**2 / 2 - 4 * (c1 * q + a1) ** 3 / (9 * c1**2 * (T - t))
    subs = {
        t: sp.Rational(1, 2), S: 150, q: sp.Rational(1, 2), T: 1, a1: sp.Rational(1, 1000), a2: 0,
        c1: sp.Rational(1, 2), c2: sp.Rational(1, 10), D: sp.Rational("0.100069"),
    }
    expected = float(expr.subs(subs))
    spec = spec_of(0.001, 0.0, quadratic(0.5, 0.1), delta=0.100069)
    assert value_quadratic(0.5, 150.0, 0.5, spec) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize(
    "t, q, c1, a1, expected",
    [(0.0, 0.5, 1.0, 1.0, 1.0), (0.5, 1.0, 2.0, 0.0, 4 / 3), (0.0, 0.2, 0.5, 0.001, 2 * 0.101 / 1.5)],
)
def test_policy_quadratic(t, q, c1, a1, expected):
    spec = spec_of(a1, 0.0, quadratic(c1))
    assert policy_quadratic(t, q, spec) == pytest.approx(expected, rel=1e-12)


def test_policy_quadratic_zero_inventory():
    assert policy_quadratic(0.2, 0.0, spec_of(1.0, 0.0, quadratic(1.0))) == 0.0


def test_domain_errors():
    lin = spec_of(1.0)
    quad = spec_of(1.0, 0.0, quadratic(1.0))
    for bad_t in (1.0, 1.5, -0.1):
        with pytest.raises(ValueError):
            value_linear(bad_t, 1.0, 1.0, lin)
        with pytest.raises(ValueError):
            policy_linear(bad_t, 1.0, 1.0)
        with pytest.raises(ValueError):
            value_quadratic(bad_t, 1.0, 1.0, quad)
    with pytest.raises(ValueError):
        value_quadratic(0.0, 1.0, 1.0, spec_of(1.0, 0.0, quadratic(0.0, 0.2)))
    with pytest.raises(ValueError):
        policy_quadratic(0.0, 1.0, spec_of(1.0, 0.0, quadratic(0.0, 0.2)))
    with pytest.raises(ValueError):
        value_linear(0.0, 1.0, -0.1, lin)


def test_supports():
    assert supports(scenario_spec("under", "linear", "linear", drop_ppi_intercept=True))
    assert not supports(scenario_spec("under", "linear", "linear"))  # PPI intercept
    assert not supports(scenario_spec("under", "power", "power", drop_ppi_intercept=True))
    assert supports(spec_of(1.0, 0.0, power(0.5, 2.0)))


def test_linear_policy_liquidates():
    # forward-integrate dq = -q/(T-t) dt exactly over each step: q shrinks by (T-t-dt)/(T-t)
    T, n = 1.0, 1000
    dt = T / n
    q = 0.7
    for k in range(n - 1):
        t = k * dt
        q -= policy_linear(t, q, T) * dt
        assert q >= 0
    assert q == pytest.approx(0.7 / n, rel=1e-9)
    assert q - policy_linear((n - 1) * dt, q, T) * dt == pytest.approx(0.0, abs=1e-15)


@settings(deadline=None)
@given(st.floats(1e-3, 0.99), st.floats(0, 300), st.floats(1e-3, 1))
def test_gradients_match_finite_differences(t, S, q):
    spec = ProblemSpec(linear(0.3, 0.01), quadratic(0.2, 0.05), sigma=0.2, delta=SPREAD)
    sol = AnalyticSolution(spec)
    h_t, h_s, _, h_q = sol.gradients(t, S, q)
    e = 1e-7
    fd_s = (sol.value(t, S + e, q) - sol.value(t, S - e, q)) / (2 * e)
    fd_q = (sol.value(t, S, q + e) - sol.value(t, S, q - e)) / (2 * e)
    fd_t = (sol.value(t + e, S, q) - sol.value(t - e, S, q)) / (2 * e)
    assert h_s == pytest.approx(fd_s, rel=1e-5, abs=1e-5)
    assert h_q == pytest.approx(fd_q, rel=1e-5, abs=1e-4)
    assert h_t == pytest.approx(fd_t, rel=1e-4, abs=1e-4)


def test_residual_vanishes_for_both_cases():
    rng = np.random.default_rng(3)
    t = rng.uniform(0, 0.99, 200)
    S = rng.uniform(0, 300, 200)
    q = rng.uniform(0, 1, 200)
    for ppi in (linear(0.002), quadratic(0.3, 0.01)):
        spec = ProblemSpec(linear(0.01, 0.002), ppi, sigma=0.05, delta=SPREAD)
        assert np.max(np.abs(AnalyticSolution(spec).residual(t, S, q))) < 1e-9


def test_analytic_requires_positive_slope():
    with pytest.raises(ValueError):
        AnalyticSolution(spec_of(0.0))
