"""Closed-form value functions and policies for linear temporary impact.

Two cases have exact solutions:

* linear permanent impact ``g(nu) = b1 nu``::

      H = q (S - delta/2 - a2) - (b1/2 + a1/(T-t)) q**2,   nu* = q/(T-t)

* quadratic permanent impact ``g(nu) = c1 nu**2 + c2 nu``::

      H = q (S - delta/2 - a2) - c2/2 q**2 - 4 (c1 q + a1)**3 / (9 c1**2 (T-t)),
      nu* = 2 (c1 q + a1) / (3 c1 (T-t))

with ``H = 0`` at ``q = 0`` in the quadratic case. Both serve as oracles for
the finite-difference solver.
"""
from __future__ import annotations

import numpy as np

from .impact import ProblemSpec

__all__ = [
    "AnalyticSolution",
    "supports",
    "value_linear",
    "policy_linear",
    "value_quadratic",
    "policy_quadratic",
]


def _linear_tpi(spec: ProblemSpec) -> tuple[float, float]:
    if not spec.tpi.is_linear:
        raise ValueError(f"closed forms need linear temporary impact, got {spec.tpi.kind}")
    a1, _, _, _, a2 = spec.tpi.terms
    return a1, a2


def _ppi_coefficients(spec: ProblemSpec) -> tuple[float, float]:
    """``(c1, c2)`` of ``g = c1 nu^2 + c2 nu``; c1 = 0 for linear PPI."""
    ppi = spec.ppi
    if ppi.intercept != 0.0:
        raise ValueError("closed forms need a permanent impact without independent term")
    if ppi.is_linear:
        return 0.0, ppi.terms[0]
    if ppi.kind == "quadratic":
        return ppi.params[0], ppi.params[1]
    if ppi.kind == "power" and ppi.params[1] == 2.0:
        return ppi.params[0], 0.0
    raise ValueError(f"no closed form for {ppi.kind} permanent impact")


def supports(spec: ProblemSpec) -> bool:
    """True when ``spec`` has an exact solution in this module."""
    try:
        AnalyticSolution(spec)
    except ValueError:
        return False
    return True


def _check_time(t, T):
    t = np.asarray(t, dtype=float)
    if np.any(t >= T) or np.any(t < 0):
        raise ValueError(f"closed forms are defined for 0 <= t < T={T}")
    return t


def _check_inventory(q):
    q = np.asarray(q, dtype=float)
    if np.any(q < 0):
        raise ValueError("inventory must be >= 0")
    return q


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def value_linear(t, S, q, spec: ProblemSpec):
    a1, a2 = _linear_tpi(spec)
    c1, b1 = _ppi_coefficients(spec)
    if c1 != 0.0:
        raise ValueError("value_linear needs linear permanent impact")
    T = spec.horizon
    t = _check_time(t, T)
    q = _check_inventory(q)
    S = np.asarray(S, dtype=float)
    return _out(q * (S - 0.5 * spec.delta - a2) - (0.5 * b1 + a1 / (T - t)) * q**2)


def policy_linear(t, q, T: float):
    t = _check_time(t, T)
    q = _check_inventory(q)
    return _out(q / (T - t))


def value_quadratic(t, S, q, spec: ProblemSpec):
    a1, a2 = _linear_tpi(spec)
    c1, c2 = _ppi_coefficients(spec)
    if c1 == 0.0:
        raise ValueError("value_quadratic needs c1 != 0")
    T = spec.horizon
    t = _check_time(t, T)
    q = _check_inventory(q)
    S = np.asarray(S, dtype=float)
    h = q * (S - 0.5 * spec.delta - a2) - 0.5 * c2 * q**2
    h = h - 4.0 * (c1 * q + a1) ** 3 / (9.0 * c1**2 * (T - t))
    return _out(np.where(q == 0, 0.0, h))


def policy_quadratic(t, q, spec: ProblemSpec):
    """Optimal rate of the quadratic case; 0 at q = 0 where the formula would trade anyway."""
    a1, _ = _linear_tpi(spec)
    c1, _ = _ppi_coefficients(spec)
    if c1 == 0.0:
        raise ValueError("policy_quadratic needs c1 != 0")
    T = spec.horizon
    t = _check_time(t, T)
    q = _check_inventory(q)
    nu = 2.0 * (c1 * q + a1) / (3.0 * c1 * (T - t))
    return _out(np.where(q == 0, 0.0, nu))


class AnalyticSolution:
    """Exact value and policy for a supported :class:`ProblemSpec`."""

    def __init__(self, spec: ProblemSpec):
        a1, _ = _linear_tpi(spec)
        c1, _ = _ppi_coefficients(spec)
        if c1 == 0.0 and not a1 > 0:
            raise ValueError(f"linear case requires a1 > 0, got {a1}")
        self.spec = spec
        self.kind = "linear" if c1 == 0.0 else "quadratic"

    def value(self, t, S, q):
        if self.kind == "linear":
            return value_linear(t, S, q, self.spec)
        return value_quadratic(t, S, q, self.spec)

    def policy(self, t, q):
        if self.kind == "linear":
            return policy_linear(t, q, self.spec.horizon)
        return policy_quadratic(t, q, self.spec)

    def gradients(self, t, S, q):
        """Exact ``(H_t, H_s, H_ss, H_q)``."""
        spec = self.spec
        a1, a2 = _linear_tpi(spec)
        c1, c2 = _ppi_coefficients(spec)
        T = spec.horizon
        t = _check_time(t, T)
        q = _check_inventory(q)
        S = np.asarray(S, dtype=float)
        tau = T - t
        base = S - 0.5 * spec.delta - a2
        if self.kind == "linear":
            h_t = -a1 * q**2 / tau**2
            h_q = base - (c2 + 2.0 * a1 / tau) * q
        else:
            h_t = -4.0 * (c1 * q + a1) ** 3 / (9.0 * c1**2 * tau**2)
            h_q = base - c2 * q - 4.0 * (c1 * q + a1) ** 2 / (3.0 * c1 * tau)
        return h_t, q + 0.0 * S, np.zeros_like(h_t + S), h_q

    def residual(self, t, S, q):
        """HJB residual with the closed-form policy plugged into the Hamiltonian."""
        spec = self.spec
        h_t, h_s, h_ss, h_q = self.gradients(t, S, q)
        nu = np.asarray(self.policy(t, q), dtype=float)
        S = np.asarray(S, dtype=float)
        g = spec.ppi(nu)
        f = spec.tpi(nu)
        ham = -g * h_s - nu * h_q + (S - 0.5 * spec.delta - f) * nu
        return _out(h_t + 0.5 * spec.sigma**2 * h_ss + ham)
