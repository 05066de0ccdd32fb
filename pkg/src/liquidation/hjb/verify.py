"""Verification studies for the finite-difference solver."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from ..analytic import AnalyticSolution
from ..impact import ProblemSpec
from .grid import PolicySurface, SolverGrid, ValueSurface
from .solver import solve

AXES = ("t", "s", "q")


class UnsupportedSpecError(ValueError):
    pass


@dataclass(frozen=True)
class ConvergenceRow:
    spacing: float
    n: int
    error: float
    order: float | None


def oracle_error(value: ValueSurface, oracle: AnalyticSolution, k: int = 0) -> float:
    """Max |H_num - H_exact| over interior price nodes and q > 0 at layer ``k``."""
    g = value.grid
    t = k * g.dt
    exact = oracle.value(t, g.s[1:-1, None], g.q[None, 1:])
    return float(np.max(np.abs(value.interior(k) - exact)))


def _spacing(grid: SolverGrid, axis: str) -> float:
    return {"t": grid.dt, "s": grid.ds, "q": grid.dq}[axis]


def _count(grid: SolverGrid, axis: str) -> int:
    return {"t": grid.n_t, "s": grid.n_s, "q": grid.n_q}[axis]


def convergence_study(
    spec: ProblemSpec,
    base_grid: SolverGrid,
    axis: str,
    refinements: int = 3,
    reference: str = "oracle",
    **solve_kw,
) -> list[ConvergenceRow]:
    """Halve the spacing along ``axis`` ``refinements`` times and estimate the order.

    With ``reference="oracle"`` the error of each level is measured against the
    closed-form value at t = 0 and the order is ``log2(e_l / e_{l+1})``.
    ``reference="self"`` instead uses differences between successive levels at
    the base grid's nodes (three-grid estimate) and needs no closed form.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
    if refinements < 1:
        raise ValueError("need at least one refinement")
    if reference not in ("oracle", "self"):
        raise ValueError(f"unknown reference {reference!r}")
    oracle = None
    if reference == "oracle":
        try:
            oracle = AnalyticSolution(spec)
        except ValueError as exc:
            raise UnsupportedSpecError(f"no closed-form oracle for this spec: {exc}") from None

    grids = [base_grid]
    for _ in range(refinements + (reference == "self")):
        grids.append(grids[-1].refined(axis))

    if reference == "oracle":
        errors = [oracle_error(solve(spec, g, **solve_kw)[0], oracle) for g in grids]
    else:
        layers = []
        for level, g in enumerate(grids):
            H0 = solve(spec, g, **solve_kw)[0].H[0]
            stride = 2**level
            if axis == "s":
                H0 = H0[::stride, :]
            elif axis == "q":
                H0 = H0[:, ::stride]
            layers.append(H0[1:-1, 1:])
        errors = [float(np.max(np.abs(a - b))) for a, b in zip(layers[:-1], layers[1:])]
        grids = grids[:-1]

    rows = []
    for idx, (g, err) in enumerate(zip(grids, errors)):
        order = None
        if idx > 0:
            prev = errors[idx - 1]
            order = math.log2(prev / err) if prev > 0 and err > 0 else float("nan")
        rows.append(ConvergenceRow(_spacing(g, axis), _count(g, axis), err, order))
    return rows


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    cells: int
    dof: int
    critical: float
    p_value: float

    @property
    def significant(self) -> bool:
        return self.statistic >= self.critical


def compare_policies(
    numeric: PolicySurface,
    analytic_policy: Callable,
    epsilon: float = 1e-8,
    alpha: float = 0.05,
) -> ChiSquareResult:
    """Chi-square statistic ``sum (nu_num - nu_ana)^2 / nu_ana`` over cells with ``nu_ana > epsilon``.

    ``analytic_policy(t, q)`` is evaluated on every node with t < T.
    """
    g = numeric.grid
    t = g.t[:-1, None]
    expected = np.asarray(analytic_policy(t, g.q[None, :]), dtype=float)
    expected = np.broadcast_to(expected, (g.n_t, g.n_q + 1))
    observed = numeric.nu[:-1]
    mask = expected > epsilon
    cells = int(mask.sum())
    if cells == 0:
        raise ValueError("no grid cell has an analytic rate above epsilon")
    stat = float(np.sum((observed[mask] - expected[mask]) ** 2 / expected[mask]))
    dof = max(cells - 1, 1)
    return ChiSquareResult(
        statistic=stat,
        cells=cells,
        dof=dof,
        critical=float(stats.chi2.ppf(1.0 - alpha, dof)),
        p_value=float(stats.chi2.sf(stat, dof)),
    )


def price_independence_check(
    policy_by_price, exclude_edges: bool = False, relative: bool = False
) -> float:
    """Max over (k, j) of the policy spread across interior price nodes.

    ``exclude_edges`` also drops the two nodes next to the Dirichlet price
    boundaries, which carry most of the boundary pollution. ``relative``
    divides the spread at inventory node j by that node's rate cap (needs a
    :class:`PolicySurface`); j = 0 is skipped since its cap is zero.
    """
    cap = None
    if isinstance(policy_by_price, PolicySurface):
        surface = policy_by_price
        if surface.by_price is None:
            raise ValueError("policy surface was solved without keep_price_policies=True")
        cap = surface.grid.rate_cap(surface.cap_factor)
        policy_by_price = surface.by_price
    elif relative:
        raise ValueError("relative=True needs a PolicySurface")
    nu = np.asarray(policy_by_price, dtype=float)
    interior = nu[:, 2:-2, :] if exclude_edges else nu[:, 1:-1, :]
    if interior.shape[1] == 0:
        raise ValueError("no price nodes left to compare")
    spread = interior.max(axis=1) - interior.min(axis=1)
    if relative:
        spread = spread[:, 1:] / cap[1:]
    return float(np.max(spread))


def row_residuals(spec: ProblemSpec, value: ValueSurface, policy: PolicySurface) -> np.ndarray:
    """Residual of every solved tridiagonal row, relative to ``max |H|`` of that row.

    Returns an array shaped ``(m, n_q)`` over the implicitly solved layers
    ``k < m`` and j >= 1.
    """
    if policy.by_price is None:
        raise ValueError("row residuals need the per-price policy (keep_price_policies=True)")
    g = value.grid
    m = value.implicit_layers
    H = value.H[: m + 1]
    nu = policy.by_price[:m, 1:-1, 1:]
    s = g.s[1:-1][None, :, None]
    f = spec.tpi(nu)
    gg = spec.ppi(nu)
    diff = 0.5 * spec.sigma**2 / g.ds**2
    adv = gg / (2 * g.ds)
    A = diff + adv
    C = diff - adv
    B = -1.0 / g.dt - 2 * diff - nu / g.dq
    cur = H[:-1, :, 1:]
    lhs = A * cur[:, :-2] + B * cur[:, 1:-1] + C * cur[:, 2:]
    rhs = -H[1:, 1:-1, 1:] / g.dt - nu * H[:-1, 1:-1, :-1] / g.dq - (s - 0.5 * spec.delta - f) * nu
    scale = np.maximum(np.max(np.abs(cur[:, 1:-1]), axis=1), 1e-300)
    return np.max(np.abs(lhs - rhs), axis=1) / scale
