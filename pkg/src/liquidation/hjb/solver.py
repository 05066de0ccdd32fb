"""Implicit directional finite-difference solver with policy iteration.

For each time layer (stepping backwards from the terminal penalty) the
inventory rows are swept in ascending order. Each row is an implicit
tridiagonal system across the price axis; the control at every price node is
found by alternating the first-order-condition update with a re-solve of the
row until the policy stops moving.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..impact import ProblemSpec, closed_form_eligible
from . import _kernel
from .grid import PolicyPath, PolicySurface, SolverGrid, ValueSurface

DEFAULT_CAP_FACTOR = 1.0
PENALTY_SCALE = 1e6
TERMINAL_MODES = ("liquidate", "penalty")


class SolverError(RuntimeError):
    """Policy iteration failed; carries the offending node and residual."""

    def __init__(self, message, k=None, j=None, residual=None):
        super().__init__(message)
        self.k = k
        self.j = j
        self.residual = residual


class NumericalError(SolverError):
    pass


def default_penalty(grid: SolverGrid) -> float:
    return PENALTY_SCALE * grid.s_max * grid.q_max


def initial_surface(grid: SolverGrid, penalty: float) -> np.ndarray:
    """Boundary and terminal layers; interior entries are overwritten by the sweep."""
    H = np.zeros(grid.shape)
    H[:, -1, :] = grid.s_max * grid.q
    H[-1, 1:-1, 1:] = -penalty
    return H


def solve(
    spec: ProblemSpec,
    grid: SolverGrid,
    *,
    penalty: float | None = None,
    cap_factor: float = DEFAULT_CAP_FACTOR,
    tol: float | None = None,
    max_iters: int = 100,
    keep_price_policies: bool = False,
    terminal: str = "liquidate",
) -> tuple[ValueSurface, PolicySurface]:
    """Solve the HJB equation for ``spec`` on ``grid``.

    ``penalty`` stands in for the infinite terminal loss on leftover inventory
    (default ``1e6 * s_max * q_max``) and fills the layer ``k = N_t``.
    With ``terminal="liquidate"`` the layer ``k = N_t - 1`` sells the whole
    inventory over the last step at rate ``q / dt``, which is the only way to
    avoid the infinite loss; ``terminal="penalty"`` instead runs the implicit
    step against the finite penalty, which leaks into earlier layers.

    Rates are bounded by ``cap_factor * j dq / dt`` at inventory node ``j``.
    ``tol`` is the policy iteration stopping threshold on ``max |delta nu|``
    (default ``1e-8 * q_max / dt``).
    """
    if not isinstance(spec, ProblemSpec):
        raise TypeError(f"expected ProblemSpec, got {type(spec).__name__}")
    penalty = default_penalty(grid) if penalty is None else float(penalty)
    tol = 1e-8 * grid.q_max / grid.dt if tol is None else float(tol)
    if not penalty > 0:
        raise ValueError("penalty must be > 0")
    if not cap_factor >= 1:
        raise ValueError("cap_factor must be >= 1")
    if terminal not in TERMINAL_MODES:
        raise ValueError(f"terminal must be one of {TERMINAL_MODES}, got {terminal!r}")

    H = initial_surface(grid, penalty)
    if keep_price_policies:
        NU = np.zeros(grid.shape)
    else:
        NU = np.zeros((grid.n_t + 1, 1, grid.n_q + 1))
    ft = np.asarray(spec.tpi.terms, dtype=float)
    gt = np.asarray(spec.ppi.terms, dtype=float)
    first_layer = grid.n_t - 1
    if terminal == "liquidate":
        _kernel.liquidation_layer(
            H, NU, ft, gt, float(spec.delta), grid.dt, grid.ds, grid.dq, bool(keep_price_policies)
        )
        first_layer -= 1
    status, k, j, worst, _ = _kernel.sweep(
        H,
        NU,
        ft,
        gt,
        closed_form_eligible(spec),
        float(spec.sigma),
        float(spec.delta),
        grid.dt,
        grid.ds,
        grid.dq,
        float(cap_factor),
        tol,
        int(max_iters),
        bool(keep_price_policies),
        first_layer,
    )
    if status == _kernel.NOT_CONVERGED:
        raise SolverError(
            f"policy iteration did not converge at k={k}, j={j} after {max_iters} "
            f"iterations (max |delta nu| = {worst:.3e})",
            k=k, j=j, residual=worst,
        )
    if status == _kernel.NON_FINITE:
        raise NumericalError(f"non-finite values at k={k}, j={j}", k=k, j=j)

    if keep_price_policies:
        nu = NU[:, grid.i_mid, :].copy()
        by_price = NU
    else:
        nu = NU[:, 0, :]
        by_price = None
    value = ValueSurface(H=H, grid=grid, penalty=penalty, terminal=terminal)
    policy = PolicySurface(nu=nu, grid=grid, cap_factor=float(cap_factor), by_price=by_price)
    return value, policy


def extract_policy_path(policy: PolicySurface, q0: float, label: str = "") -> PolicyPath:
    """Follow the policy from inventory ``q0`` at t = 0.

    Rates between inventory nodes are linearly interpolated. A step never sells
    more than what is left, and the final step sells whatever remains, so the
    path ends at exactly ``q = 0``.
    """
    grid = policy.grid
    if not 0 < q0 <= grid.q_max:
        raise ValueError(f"q0 must lie in (0, {grid.q_max}], got {q0}")
    n = grid.n_t
    dt = grid.dt
    q = np.zeros(n + 1)
    nu = np.zeros(n + 1)
    q[0] = q0
    for k in range(n):
        if q[k] <= 0:
            continue
        rate = max(float(np.interp(q[k], grid.q, policy.nu[k])), 0.0)
        # the last step always clears what is left
        if k == n - 1 or rate * dt >= q[k]:
            nu[k] = q[k] / dt
            continue
        nu[k] = rate
        q[k + 1] = q[k] - rate * dt
    return PolicyPath(t=grid.t.copy(), nu=nu, q=q, label=label)


class HJBSolver(BaseEstimator):
    """Estimator-style wrapper around :func:`solve`.

    ``fit(spec)`` solves the problem; ``predict(t, q)`` returns the optimal rate
    at the mid price, linear in q between nodes and read at the nearest time
    layer at or before ``t``.
    """

    def __init__(
        self,
        T=1.0,
        s_max=300.0,
        q_max=1.0,
        n_t=360,
        n_s=10,
        n_q=100,
        penalty=None,
        cap_factor=DEFAULT_CAP_FACTOR,
        tol=None,
        max_iters=100,
        keep_price_policies=False,
        terminal="liquidate",
    ):
        self.T = T
        self.s_max = s_max
        self.q_max = q_max
        self.n_t = n_t
        self.n_s = n_s
        self.n_q = n_q
        self.penalty = penalty
        self.cap_factor = cap_factor
        self.tol = tol
        self.max_iters = max_iters
        self.keep_price_policies = keep_price_policies
        self.terminal = terminal

    def _grid(self) -> SolverGrid:
        return SolverGrid(self.T, self.s_max, self.q_max, self.n_t, self.n_s, self.n_q)

    def fit(self, spec: ProblemSpec, y=None):
        self.grid_ = self._grid()
        self.value_, self.policy_ = solve(
            spec,
            self.grid_,
            penalty=self.penalty,
            cap_factor=self.cap_factor,
            tol=self.tol,
            max_iters=self.max_iters,
            keep_price_policies=self.keep_price_policies,
            terminal=self.terminal,
        )
        self.spec_ = spec
        return self

    def predict(self, t, q):
        check_is_fitted(self, "policy_")
        g = self.grid_
        t, q = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(q, dtype=float))
        if np.any((t < 0) | (t > g.T)) or np.any((q < 0) | (q > g.q_max)):
            raise ValueError("(t, q) outside the solved domain")
        k = np.minimum(np.floor(t / g.dt + 1e-9).astype(int), g.n_t)
        out = np.array([np.interp(qq, g.q, self.policy_.nu[kk]) for kk, qq in zip(k.ravel(), q.ravel())])
        out = out.reshape(t.shape)
        return float(out) if out.ndim == 0 else out

    def value_at(self, k: int = 0) -> np.ndarray:
        check_is_fitted(self, "value_")
        return self.value_.H[k]

    def path(self, q0: float, label: str = "") -> PolicyPath:
        check_is_fitted(self, "policy_")
        return extract_policy_path(self.policy_, q0, label=label)
