"""Least-squares impact fits, fit diagnostics, and volatility/spread estimates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares, minimize_scalar
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, validate_data

from ._io import write_json
from .impact import ImpactForm
from .lob import ImpactCurve, LobSnapshot, impact_curve, volume_ladder

EXPONENT_BOUNDS = (0.05, 5.0)
EXPONENT_TOL = 1e-10
PRESCAN = 200
TARGETS = ("tpi", "ppi")


class FitError(RuntimeError):
    """Raised when a fit is degenerate or the exponent search cannot bracket a minimum."""


@dataclass(frozen=True, eq=False)
class FitResult:
    """A fitted form (calibrated signs) with residual diagnostics on the mean curve."""

    form: ImpactForm
    sse: float
    mean_sq_resid: float
    std_sq_resid: float
    r_squared: float
    rates: np.ndarray = field(repr=False)
    observed: np.ndarray = field(repr=False)
    scenario: str | None = None
    target: str | None = None

    @property
    def fitted(self) -> np.ndarray:
        return self.form(self.rates)

    @property
    def exponent(self) -> float:
        return self.form.params[1] if self.form.kind == "power" else 1.0

    def to_dict(self) -> dict:
        return {
            "impact": self.target,
            "scenario": self.scenario,
            "model": self.form.kind,
            "params": list(self.form.params),
            "total_sq_resid": self.sse,
            "mean_sq_resid": self.mean_sq_resid,
            "std_sq_resid": self.std_sq_resid,
            "r_squared": self.r_squared,
            "n": int(len(self.rates)),
        }


def _curve_arrays(rates, observed) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(rates, dtype=float).ravel()
    y = np.asarray(observed, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError(f"rates and observations differ in length ({x.size} vs {y.size})")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("curve contains non-finite values")
    return x, y


def _diagnostics(form, x, y, scenario, target) -> FitResult:
    sq = (y - form(x)) ** 2
    sse = float(sq.sum())
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst > 0:
        r2 = 1.0 - sse / sst
    else:
        r2 = 1.0 if sse == 0 else 0.0
    return FitResult(
        form=form,
        sse=sse,
        mean_sq_resid=float(sq.mean()),
        std_sq_resid=float(sq.std()),
        r_squared=r2,
        rates=x,
        observed=y,
        scenario=scenario,
        target=target,
    )


def fit_linear(rates, observed, scenario=None, target=None) -> FitResult:
    """Ordinary least squares ``a1 nu + a2``."""
    x, y = _curve_arrays(rates, observed)
    if np.unique(x).size < 2:
        raise FitError("linear fit needs at least two distinct rates")
    slope, intercept = np.polyfit(x, y, 1)
    return _diagnostics(ImpactForm("linear", (slope, intercept)), x, y, scenario, target)


def _inner(x, y, p):
    """Best ``(coef, intercept, sse)`` for a fixed exponent ``p``."""
    col = x**p
    scale = np.max(np.abs(col))
    A = np.column_stack((col / scale, np.ones_like(x)))
    (c, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    c /= scale
    resid = y - (c * col + b)
    return c, b, float(resid @ resid)


def fit_power(rates, observed, scenario=None, target=None) -> FitResult:
    """Least squares ``r1 nu^r2 + r3`` with ``r2`` in [0.05, 5].

    For a fixed exponent the fit is linear in ``(r1, r3)``; the exponent is
    located by a log-spaced scan followed by a bounded Brent search on the best
    bracket.
    """
    x, y = _curve_arrays(rates, observed)
    if np.unique(x).size < 3:
        raise FitError("power fit needs at least three distinct rates")
    if np.any(x <= 0):
        raise FitError("power fit needs positive rates")
    lo, hi = EXPONENT_BOUNDS
    grid = np.geomspace(lo, hi, PRESCAN)
    sse = np.array([_inner(x, y, p)[2] for p in grid])
    best = int(np.argmin(sse))
    a = grid[max(best - 1, 0)]
    b = grid[min(best + 1, PRESCAN - 1)]
    res = minimize_scalar(
        lambda p: _inner(x, y, p)[2],
        bounds=(a, b),
        method="bounded",
        options={"xatol": EXPONENT_TOL, "maxiter": 500},
    )
    if not res.success:
        raise FitError(f"exponent search failed: {res.message} (bracket [{a:g}, {b:g}], {res.nfev} evaluations)")
    # exponent 1 is tried exactly so the nested linear model is never beaten
    candidates = [(res.fun, float(res.x)), (sse[best], float(grid[best])), (_inner(x, y, 1.0)[2], 1.0)]
    best_sse, p = min(candidates)
    c, intercept, _ = _inner(x, y, p)
    params = (c, p, intercept)
    polished = _polish(x, y, params)
    if polished is not None and polished[1] < best_sse:
        params = polished[0]
    return _diagnostics(ImpactForm("power", params), x, y, scenario, target)


def _polish(x, y, start):
    """Joint Levenberg-Marquardt refinement of ``(r1, r2, r3)``.

    The profile search pins the exponent only to about the square root of
    machine precision, since the sse is flat at its minimum.
    """
    lx = np.log(x)

    def resid(v):
        return v[0] * x ** v[1] + v[2] - y

    def jac(v):
        xp = x ** v[1]
        return np.column_stack((xp, v[0] * xp * lx, np.ones_like(x)))

    try:
        sol = least_squares(resid, np.asarray(start, dtype=float), jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    except (ValueError, FloatingPointError):
        return None
    c, p, b = (float(v) for v in sol.x)
    lo, hi = EXPONENT_BOUNDS
    if not (np.all(np.isfinite(sol.x)) and lo <= p <= hi):
        return None
    r = resid(sol.x)
    return (c, p, b), float(r @ r)


def fit_quadratic(rates, observed, scenario=None, target=None) -> FitResult:
    """Ordinary least squares ``c1 nu^2 + c2 nu + c3``."""
    x, y = _curve_arrays(rates, observed)
    if np.unique(x).size < 3:
        raise FitError("quadratic fit needs at least three distinct rates")
    c1, c2, c3 = np.polyfit(x, y, 2)
    return _diagnostics(ImpactForm("quadratic", (c1, c2, c3)), x, y, scenario, target)


FITTERS = {"linear": fit_linear, "quadratic": fit_quadratic, "power": fit_power}
#: forms fitted to every measured curve
CALIBRATED_KINDS = ("linear", "power")


@dataclass(frozen=True)
class FitComparison:
    """Metric pairs ``(linear, power)`` and the winning form for each."""

    metrics: dict
    winners: dict

    @property
    def power_wins(self) -> bool:
        return all(w == "power" for w in self.winners.values())

    def to_dict(self) -> dict:
        return {"metrics": {k: list(v) for k, v in self.metrics.items()}, "winners": dict(self.winners)}


def compare_fits(linear: FitResult, power: FitResult, rtol: float = 1e-12) -> FitComparison:
    if not (
        np.array_equal(linear.rates, power.rates) and np.array_equal(linear.observed, power.observed)
    ):
        raise ValueError("fits come from different curves")
    metrics, winners = {}, {}
    for name, higher_better in (
        ("sse", False),
        ("mean_sq_resid", False),
        ("std_sq_resid", False),
        ("r_squared", True),
    ):
        lv, pv = getattr(linear, name), getattr(power, name)
        metrics[name] = (lv, pv)
        if math.isclose(lv, pv, rel_tol=rtol, abs_tol=1e-300):
            winners[name] = "tie"
        elif (pv > lv) == higher_better:
            winners[name] = "power"
        else:
            winners[name] = "linear"
    return FitComparison(metrics, winners)


def to_solver_form(fit) -> ImpactForm:
    """Additive inverse of every coefficient except the exponent."""
    form = fit.form if isinstance(fit, FitResult) else fit
    return form.negated()


def realized_volatility(prices) -> float:
    """Square root of the summed squared log returns (no annualization)."""
    s = np.asarray(prices, dtype=float)
    if s.ndim != 1 or s.size < 2:
        raise ValueError("need at least two prices")
    if np.any(~np.isfinite(s)) or np.any(s <= 0):
        raise ValueError("prices must be positive and finite")
    r = np.diff(np.log(s))
    return float(math.sqrt(r @ r))


def average_spread(snapshots: Sequence[LobSnapshot]) -> float:
    if len(snapshots) == 0:
        raise ValueError("no snapshots")
    return float(np.mean([b.spread for b in snapshots]))


class _ImpactRegressor(RegressorMixin, BaseEstimator):
    _kind = ""

    def __init__(self, scenario=None, target=None):
        self.scenario = scenario
        self.target = target

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_min_samples=2, y_numeric=True)
        if X.shape[1] != 1:
            raise ValueError("impact regressors take a single rate column")
        self.n_features_in_ = 1
        self.result_ = FITTERS[self._kind](X[:, 0], y, self.scenario, self.target)
        self.form_ = self.result_.form
        return self

    def predict(self, X):
        check_is_fitted(self, "form_")
        X = validate_data(self, X, reset=False)
        return self.form_(X[:, 0])


class LinearImpactRegressor(_ImpactRegressor):
    """``a1 nu + a2`` as a scikit-learn regressor on a single rate column."""

    _kind = "linear"


class PowerImpactRegressor(_ImpactRegressor):
    """``r1 nu^r2 + r3`` as a scikit-learn regressor on a single rate column."""

    _kind = "power"


@dataclass(frozen=True)
class ScenarioCalibration:
    scenario: str
    nu_max: float
    curve: ImpactCurve
    fits: dict  # (target, kind) -> FitResult

    def comparison(self, target: str) -> FitComparison:
        return compare_fits(self.fits[(target, "linear")], self.fits[(target, "power")])

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "nu_max": self.nu_max,
            "fits": [f.to_dict() for f in self.fits.values()],
            "comparisons": {t: self.comparison(t).to_dict() for t in TARGETS},
            "skipped_volumes": {repr(k): v for k, v in self.curve.errors.items()},
        }


def calibrate_scenario(
    snapshots: Sequence[LobSnapshot],
    scenario: str,
    nu_max: float,
    tau: float = 5.0,
    m: int = 50,
    depth_policy: str = "skip",
) -> ScenarioCalibration:
    """Measure the impact curve on the ``nu_max`` ladder and fit both forms to TPI and PPI."""
    curve = impact_curve(snapshots, volume_ladder(nu_max, tau, m), tau, depth_policy)
    if len(curve.samples) < 3:
        raise FitError(f"only {len(curve.samples)} feasible volumes on the {scenario} ladder")
    fits = {}
    for target in TARGETS:
        y = getattr(curve, target)
        for kind in CALIBRATED_KINDS:
            fits[(target, kind)] = FITTERS[kind](curve.rates, y, scenario, target)
    return ScenarioCalibration(scenario, float(nu_max), curve, fits)


def write_report(path, calibrations: Sequence[ScenarioCalibration], sigma=None, spread=None):
    payload = {
        "sigma": sigma,
        "spread": spread,
        "scenarios": [c.to_dict() for c in calibrations],
    }
    return write_json(path, payload)
