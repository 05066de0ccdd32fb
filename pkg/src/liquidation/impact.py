"""Impact functional forms and the optimal-rate first-order condition.

Every form is stored as a tagged tuple of parameters. Internally each form is
also expressed as ``k1 * nu**e1 + k2 * nu**e2 + const`` so the numerical
kernels can treat linear, quadratic and power impact uniformly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ImpactForm",
    "ProblemSpec",
    "linear",
    "quadratic",
    "power",
    "evaluate",
    "derivative",
    "hamiltonian",
    "foc_residual",
    "foc_optimal_rate",
]

KINDS = ("linear", "quadratic", "power")
_N_PARAMS = {"linear": 2, "quadratic": 3, "power": 3}

# sign-change scan for non-monotone FOCs: log-spaced points near 0, then linear
LINEAR_SCAN = 32
LOG_SCAN = 40
LOG_SCAN_FLOOR = 1e-9
FOC_TOL = 1e-10


@dataclass(frozen=True)
class ImpactForm:
    """Parametrized price impact.

    ``linear``:    a1 * nu + a2
    ``quadratic``: c1 * nu**2 + c2 * nu + c3
    ``power``:     r1 * nu**r2 + r3
    """

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown impact kind {self.kind!r}; expected one of {KINDS}")
        params = tuple(float(p) for p in self.params)
        if len(params) != _N_PARAMS[self.kind]:
            raise ValueError(
                f"{self.kind} impact takes {_N_PARAMS[self.kind]} parameters, got {len(params)}"
            )
        if not all(math.isfinite(p) for p in params):
            raise ValueError(f"non-finite impact parameters {params}")
        if self.kind == "power" and params[1] <= 0:
            raise ValueError(f"power exponent must be > 0, got {params[1]}")
        object.__setattr__(self, "params", params)

    def __call__(self, nu):
        return evaluate(self, nu)

    @property
    def terms(self) -> tuple[float, float, float, float, float]:
        """``(k1, e1, k2, e2, const)`` with ``form(nu) = k1 nu^e1 + k2 nu^e2 + const``."""
        p = self.params
        if self.kind == "linear":
            return (p[0], 1.0, 0.0, 1.0, p[1])
        if self.kind == "quadratic":
            return (p[0], 2.0, p[1], 1.0, p[2])
        return (p[0], p[1], 0.0, 1.0, p[2])

    @property
    def intercept(self) -> float:
        return self.params[-1]

    @property
    def is_linear(self) -> bool:
        return self.kind == "linear" or (self.kind == "power" and self.params[1] == 1.0)

    def negated(self) -> "ImpactForm":
        """Additive inverse of every coefficient except the exponent."""
        if self.kind == "power":
            r1, r2, r3 = self.params
            return ImpactForm("power", (-r1, r2, -r3))
        return ImpactForm(self.kind, tuple(-p for p in self.params))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": list(self.params)}

    @classmethod
    def from_dict(cls, data: dict) -> "ImpactForm":
        try:
            return cls(str(data["kind"]), tuple(data["params"]))
        except KeyError as exc:
            raise ValueError(f"impact form is missing field {exc.args[0]!r}") from None


def linear(slope: float, intercept: float = 0.0) -> ImpactForm:
    return ImpactForm("linear", (slope, intercept))


def quadratic(c1: float, c2: float = 0.0, c3: float = 0.0) -> ImpactForm:
    return ImpactForm("quadratic", (c1, c2, c3))


def power(coef: float, exponent: float, intercept: float = 0.0) -> ImpactForm:
    return ImpactForm("power", (coef, exponent, intercept))


ZERO = linear(0.0, 0.0)


@dataclass(frozen=True)
class ProblemSpec:
    """One liquidation problem: impact pair, volatility, spread, horizon, inventory.

    The impact forms must already be in solver sign convention (positive
    coefficients penalize selling); see :func:`liquidation.calibrate.to_solver_form`.
    """

    tpi: ImpactForm
    ppi: ImpactForm
    sigma: float = 0.0
    delta: float = 0.0
    horizon: float = 1.0
    upsilon: float = 1.0
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if not isinstance(self.tpi, ImpactForm) or not isinstance(self.ppi, ImpactForm):
            raise TypeError("tpi and ppi must be ImpactForm instances")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not self.delta >= 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be > 0, got {self.horizon}")
        if not self.upsilon > 0:
            raise ValueError(f"upsilon must be > 0, got {self.upsilon}")

    def to_dict(self) -> dict:
        return {
            "tpi": self.tpi.to_dict(),
            "ppi": self.ppi.to_dict(),
            "sigma": self.sigma,
            "delta": self.delta,
            "horizon": self.horizon,
            "upsilon": self.upsilon,
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemSpec":
        return cls(
            tpi=ImpactForm.from_dict(data["tpi"]),
            ppi=ImpactForm.from_dict(data["ppi"]),
            sigma=float(data.get("sigma", 0.0)),
            delta=float(data.get("delta", 0.0)),
            horizon=float(data.get("horizon", 1.0)),
            upsilon=float(data.get("upsilon", 1.0)),
            label=str(data.get("label", "")),
        )


def _check_rate(nu):
    arr = np.asarray(nu, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise ValueError(f"trade rate must be >= 0, got {nu!r}")
    return arr


def evaluate(form: ImpactForm, nu):
    """Evaluate ``form`` at trade rate(s) ``nu >= 0``."""
    arr = _check_rate(nu)
    k1, e1, k2, e2, c = form.terms
    out = k1 * arr**e1 + k2 * arr**e2 + c
    return float(out) if np.ndim(out) == 0 else out


def _dterm(k: float, e: float, nu: float) -> float:
    if k == 0.0:
        return 0.0
    if nu == 0.0:
        if e > 1.0:
            return 0.0
        if e == 1.0:
            return k
        return math.copysign(math.inf, k)
    return k * e * nu ** (e - 1.0)


def derivative(form: ImpactForm, nu: float) -> float:
    """d form / d nu; infinite at 0 for power exponents below one."""
    nu = float(_check_rate(nu))
    k1, e1, k2, e2, _ = form.terms
    return _dterm(k1, e1, nu) + _dterm(k2, e2, nu)


def _mul(a: float, b: float) -> float:
    # inf * 0 is treated as 0: a vanishing gradient switches the term off
    if a == 0.0 or b == 0.0:
        return 0.0
    return a * b


def hamiltonian(spec: ProblemSpec, nu: float, dH_ds: float, dH_dq: float, S: float) -> float:
    """The maximand ``-g(nu) H_s - nu H_q + (S - delta/2 - f(nu)) nu``."""
    g = evaluate(spec.ppi, nu)
    f = evaluate(spec.tpi, nu)
    return -_mul(g, dH_ds) - nu * dH_dq + (S - 0.5 * spec.delta - f) * nu


def foc_residual(spec: ProblemSpec, nu: float, dH_ds: float, dH_dq: float, S: float) -> float:
    """d hamiltonian / d nu."""
    f = evaluate(spec.tpi, nu)
    df = derivative(spec.tpi, nu)
    dg = derivative(spec.ppi, nu)
    return -_mul(dg, dH_ds) - dH_dq + S - 0.5 * spec.delta - (_mul(df, nu) + f)


def _closed_form_root(spec: ProblemSpec, dH_ds: float, dH_dq: float, S: float):
    """Root of the FOC for linear TPI with linear/quadratic PPI, or None.

    Returns None when the Hamiltonian is not strictly concave in nu.
    """
    a1, _, _, _, a2 = spec.tpi.terms
    k1, e1, k2, e2, _ = spec.ppi.terms
    # g(nu) = c1 nu^2 + c2 nu + c3
    c1 = k1 if e1 == 2.0 else 0.0
    c2 = (k1 if e1 == 1.0 else 0.0) + k2
    curvature = a1 + _mul(c1, dH_ds)
    if not curvature > 0:
        return None
    return (S - 0.5 * spec.delta - a2 - dH_dq - _mul(c2, dH_ds)) / (2.0 * curvature)


def closed_form_eligible(spec: ProblemSpec) -> bool:
    if spec.tpi.kind != "linear" and not spec.tpi.is_linear:
        return False
    ppi = spec.ppi
    return ppi.kind in ("linear", "quadratic") or ppi.is_linear


def _bisect(fun, lo: float, hi: float, tol: float = FOC_TOL) -> float:
    flo = fun(lo)
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        fmid = fun(mid)
        if fmid == 0.0:
            return mid
        if (fmid > 0) == (flo > 0):
            lo, flo = mid, fmid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def scan_nodes(nu_max: float) -> np.ndarray:
    m = np.arange(1, LOG_SCAN + 1)
    near_zero = nu_max * LOG_SCAN_FLOOR ** (1.0 - (m - 1.0) / LOG_SCAN) / LINEAR_SCAN
    rest = nu_max * np.arange(1, LINEAR_SCAN + 1) / LINEAR_SCAN
    rest[-1] = nu_max
    return np.concatenate([[0.0], near_zero, rest])


def foc_optimal_rate(
    spec: ProblemSpec, dH_ds: float, dH_dq: float, S: float, nu_max: float
) -> float:
    """Maximize the Hamiltonian over ``[0, nu_max]`` via its first-order condition.

    Linear TPI with linear or quadratic PPI has a closed-form root. Otherwise
    the FOC is scanned for downward sign changes, each bracket is bisected to
    ``FOC_TOL``, and the candidate (roots plus both ends) with the largest
    Hamiltonian wins.
    """
    if not nu_max > 0 or not math.isfinite(nu_max):
        raise ValueError(f"nu_max must be a positive finite number, got {nu_max}")
    if not (math.isfinite(dH_ds) and math.isfinite(dH_dq) and math.isfinite(S)):
        raise ValueError("value gradients and price must be finite")

    def ham(nu):
        return hamiltonian(spec, nu, dH_ds, dH_dq, S)

    candidates = [0.0, nu_max]
    if closed_form_eligible(spec):
        root = _closed_form_root(spec, dH_ds, dH_dq, S)
        if root is not None:
            return min(max(root, 0.0), nu_max)
    else:

        def foc(nu):
            return foc_residual(spec, nu, dH_ds, dH_dq, S)

        nodes = scan_nodes(nu_max)
        values = [foc(float(x)) for x in nodes]
        for a, b, fa, fb in zip(nodes[:-1], nodes[1:], values[:-1], values[1:]):
            if fa > 0 and fb <= 0:
                candidates.append(float(b) if fb == 0 else _bisect(foc, float(a), float(b)))
    scores = [ham(nu) for nu in candidates]
    return candidates[int(np.argmax(scores))]
