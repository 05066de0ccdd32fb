"""Compiled inner loops of the HJB solver.

Impact forms arrive as ``(k1, e1, k2, e2, const)`` term tuples, see
:attr:`liquidation.impact.ImpactForm.terms`.
"""
import math

import numpy as np
from numba import njit

OK = 0
NOT_CONVERGED = 1
NON_FINITE = 2

LINEAR_SCAN = 32
LOG_SCAN = 40
LOG_SCAN_FLOOR = 1e-9
BISECT_TOL = 1e-10
STALL_FACTOR = 100.0
# a policy update that moves the row by less than this (relative) changes nothing
VALUE_TOL = 1e-13


@njit(cache=True)
def thomas(lower, diag, upper, rhs, out):
    """Solve ``lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]``.

    ``lower[0]`` and ``upper[-1]`` are ignored. Writes the solution to ``out``.
    """
    n = diag.shape[0]
    cp = np.empty(n)
    dp = np.empty(n)
    cp[0] = upper[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        m = diag[i] - lower[i] * cp[i - 1]
        cp[i] = upper[i] / m
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / m
    out[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        out[i] = dp[i] - cp[i] * out[i + 1]


@njit(cache=True)
def _mul(a, b):
    if a == 0.0 or b == 0.0:
        return 0.0
    return a * b


@njit(cache=True)
def _term(k, e, nu):
    if k == 0.0:
        return 0.0
    return k * nu**e


@njit(cache=True)
def _dterm(k, e, nu):
    if k == 0.0:
        return 0.0
    if nu == 0.0:
        if e > 1.0:
            return 0.0
        if e == 1.0:
            return k
        return math.copysign(math.inf, k)
    return k * e * nu ** (e - 1.0)


@njit(cache=True)
def form_value(t, nu):
    return _term(t[0], t[1], nu) + _term(t[2], t[3], nu) + t[4]


@njit(cache=True)
def _ham(ft, gt, half_spread, hs, hq, s, nu):
    return -_mul(form_value(gt, nu), hs) - nu * hq + (s - half_spread - form_value(ft, nu)) * nu


@njit(cache=True)
def _foc(ft, gt, half_spread, hs, hq, s, nu):
    f = form_value(ft, nu)
    df = _dterm(ft[0], ft[1], nu) + _dterm(ft[2], ft[3], nu)
    dg = _dterm(gt[0], gt[1], nu) + _dterm(gt[2], gt[3], nu)
    return -_mul(dg, hs) - hq + s - half_spread - (_mul(df, nu) + f)


@njit(cache=True)
def optimal_rate(ft, gt, closed_form, half_spread, hs, hq, s, nu_max):
    """Argmax of the Hamiltonian on ``[0, nu_max]``; mirrors ``impact.foc_optimal_rate``."""
    if closed_form:
        a1 = ft[0]
        a2 = ft[4]
        c1 = gt[0] if gt[1] == 2.0 else 0.0
        c2 = (gt[0] if gt[1] == 1.0 else 0.0) + gt[2]
        curv = a1 + _mul(c1, hs)
        if curv > 0.0:
            root = (s - half_spread - a2 - hq - _mul(c2, hs)) / (2.0 * curv)
            return min(max(root, 0.0), nu_max)
        best = 0.0
        best_h = _ham(ft, gt, half_spread, hs, hq, s, 0.0)
        if _ham(ft, gt, half_spread, hs, hq, s, nu_max) > best_h:
            best = nu_max
        return best

    best = 0.0
    best_h = _ham(ft, gt, half_spread, hs, hq, s, 0.0)
    h_end = _ham(ft, gt, half_spread, hs, hq, s, nu_max)
    if h_end > best_h:
        best = nu_max
        best_h = h_end
    # log-spaced points resolve the region near 0 where exponents < 1 make
    # the FOC steep; linear points cover the rest of the interval
    a = 0.0
    fa = _foc(ft, gt, half_spread, hs, hq, s, a)
    n_scan = LOG_SCAN + LINEAR_SCAN
    for m in range(1, n_scan + 1):
        if m <= LOG_SCAN:
            b = nu_max * LOG_SCAN_FLOOR ** (1.0 - (m - 1.0) / LOG_SCAN) / LINEAR_SCAN
        else:
            b = nu_max * (m - LOG_SCAN) / LINEAR_SCAN
        fb = _foc(ft, gt, half_spread, hs, hq, s, b)
        if fa > 0.0 and fb <= 0.0:
            lo = a
            hi = b
            if fb == 0.0:
                lo = b
            for _ in range(200):
                if hi - lo <= BISECT_TOL:
                    break
                mid = 0.5 * (lo + hi)
                fm = _foc(ft, gt, half_spread, hs, hq, s, mid)
                if fm > 0.0:
                    lo = mid
                else:
                    hi = mid
            root = 0.5 * (lo + hi)
            h = _ham(ft, gt, half_spread, hs, hq, s, root)
            if h > best_h:
                best = root
                best_h = h
        a = b
        fa = fb
    return best


@njit(cache=True)
def _assemble(h_next, h_prev_q, nu, ft, gt, sigma2, half_spread, dt, ds, dq, s_max_val, i_lo,
              lower, diag, upper, rhs):
    # rows are interior price nodes i = 1..n; unknown order matches H[1:n+1]
    n = diag.shape[0]
    diff = 0.5 * sigma2 / (ds * ds)
    for r in range(n):
        i = r + 1
        s = i * ds
        g = form_value(gt, nu[r])
        f = form_value(ft, nu[r])
        adv = g / (2.0 * ds)
        a = diff + adv
        c = diff - adv
        b = -1.0 / dt - 2.0 * diff - nu[r] / dq
        z = -h_next[i] / dt - nu[r] * h_prev_q[i] / dq - (s - half_spread - f) * nu[r]
        if r == 0:
            z -= a * i_lo
        if r == n - 1:
            z -= c * s_max_val
        lower[r] = a
        diag[r] = b
        upper[r] = c
        rhs[r] = z


@njit(cache=True)
def liquidation_layer(H, NU, ft, gt, delta, dt, ds, dq, keep_all):
    """Layer ``k = N_t - 1``: sell everything over the last step at rate ``q / dt``.

    Revenue is ``(S - delta/2 - f(nu)) q`` less the permanent-impact drift
    accrued during the step, ``g(nu) q dt / 2``.
    """
    k = H.shape[0] - 2
    n_s = H.shape[1] - 1
    n_q = H.shape[2] - 1
    for j in range(1, n_q + 1):
        q = j * dq
        nu = q / dt
        f = form_value(ft, nu)
        g = form_value(gt, nu)
        for i in range(1, n_s):
            H[k, i, j] = (i * ds - 0.5 * delta - f) * q - 0.5 * g * q * dt
            if keep_all:
                NU[k, i, j] = nu
        if not keep_all:
            NU[k, 0, j] = nu


@njit(cache=True)
def sweep(H, NU, ft, gt, closed_form, sigma, delta, dt, ds, dq, cap_factor, tol, max_iters,
          keep_all, first_layer):
    """Fill ``H[k, i, j]`` for k = N_t-1 .. 0 given terminal and boundary layers.

    ``NU`` has shape (N_t+1, N_s+1, N_q+1) when ``keep_all`` else (N_t+1, 1, N_q+1)
    and receives the mid-price policy in slot 0.

    Returns (status, k, j, worst_change, total_iterations).
    """
    n_t = H.shape[0] - 1
    n_s = H.shape[1] - 1
    n_q = H.shape[2] - 1
    n = n_s - 1
    i_mid = n_s // 2
    sigma2 = sigma * sigma
    half_spread = 0.5 * delta
    lower = np.empty(n)
    diag = np.empty(n)
    upper = np.empty(n)
    rhs = np.empty(n)
    sol = np.empty(n)
    nu = np.empty(n)
    nu_new = np.empty(n)
    nu_prev_layer = np.empty((n_q + 1, n))
    total = 0
    for j in range(n_q + 1):
        for r in range(n):
            nu_prev_layer[j, r] = j * dq / dt
    for k in range(first_layer, -1, -1):
        for j in range(1, n_q + 1):
            cap = cap_factor * j * dq / dt
            h_next = H[k + 1, :, j]
            h_prev_q = H[k, :, j - 1]
            row = H[k, :, j]
            s_max_val = row[n_s]
            for r in range(n):
                nu[r] = min(nu_prev_layer[j, r], cap)
            converged = False
            worst = 0.0
            prev_worst = math.inf
            for it in range(max_iters):
                total += 1
                _assemble(h_next, h_prev_q, nu, ft, gt, sigma2, half_spread, dt, ds, dq,
                          s_max_val, row[0], lower, diag, upper, rhs)
                thomas(lower, diag, upper, rhs, sol)
                moved = 0.0
                scale = 1.0
                for r in range(n):
                    moved = max(moved, abs(sol[r] - row[r + 1]))
                    scale = max(scale, abs(sol[r]))
                    row[r + 1] = sol[r]
                if it > 0 and moved <= VALUE_TOL * scale:
                    # flat Hamiltonian: the policy may still flip between
                    # equally good rates without any effect on the value
                    converged = True
                    break
                worst = 0.0
                for r in range(n):
                    i = r + 1
                    hs = (row[i + 1] - row[i - 1]) / (2.0 * ds)
                    hq = (row[i] - h_prev_q[i]) / dq
                    if not (math.isfinite(hs) and math.isfinite(hq)):
                        return NON_FINITE, k, j, math.inf, total
                    nu_new[r] = optimal_rate(ft, gt, closed_form, half_spread, hs, hq, i * ds, cap)
                    d = abs(nu_new[r] - nu[r])
                    if d > worst:
                        worst = d
                for r in range(n):
                    nu[r] = nu_new[r]
                # below tol, or stalled at roundoff just above it
                if worst < tol or (worst < STALL_FACTOR * tol and worst >= prev_worst):
                    converged = True
                    break
                prev_worst = worst
            if not converged:
                return NOT_CONVERGED, k, j, worst, total
            # final solve keeps the stored surface consistent with the stored policy
            _assemble(h_next, h_prev_q, nu, ft, gt, sigma2, half_spread, dt, ds, dq,
                      s_max_val, row[0], lower, diag, upper, rhs)
            thomas(lower, diag, upper, rhs, sol)
            for r in range(n):
                row[r + 1] = sol[r]
                if not math.isfinite(sol[r]):
                    return NON_FINITE, k, j, math.inf, total
                nu_prev_layer[j, r] = nu[r]
            if keep_all:
                for r in range(n):
                    NU[k, r + 1, j] = nu[r]
            else:
                NU[k, 0, j] = nu[i_mid - 1]
    return OK, -1, -1, 0.0, total
