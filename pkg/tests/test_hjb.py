import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from liquidation.analytic import AnalyticSolution
from liquidation.hjb import (
    HJBSolver,
    PolicySurface,
    SolverError,
    SolverGrid,
    UnsupportedSpecError,
    compare_policies,
    convergence_study,
    default_penalty,
    extract_policy_path,
    oracle_error,
    price_independence_check,
    row_residuals,
    solve,
)
from liquidation.hjb.grid import PolicyPath
from liquidation.presets import all_labels, parse_label, scenario_spec


@pytest.fixture(scope="module")
def linear_small(linear_spec, small_grid):
    return solve(linear_spec, small_grid, keep_price_policies=True)


@pytest.fixture(scope="module")
def power_small(small_grid):
    spec = scenario_spec("under", "power", "power")
    return spec, solve(spec, small_grid, keep_price_policies=True)


# grid


@pytest.mark.parametrize("field, value", [("n_s", 1), ("n_t", 0), ("n_q", 2.5), ("T", 0.0), ("s_max", -1.0)])
def test_grid_validation(field, value):
    kw = {"n_t": 4, "n_s": 4, "n_q": 4, field: value}
    with pytest.raises(ValueError):
        SolverGrid(**kw)


def test_grid_spacing():
    g = SolverGrid(T=2.0, s_max=300.0, q_max=1.0, n_t=8, n_s=10, n_q=4)
    assert (g.dt, g.ds, g.dq) == (0.25, 30.0, 0.25)
    assert g.shape == (9, 11, 5)
    np.testing.assert_array_equal(np.diff(g.s), 30.0)
    assert g.refined("q").n_q == 8 and g.refined("t").n_t == 16


# solve: boundaries and admissibility


def test_boundaries_bit_exact(linear_small, small_grid):
    value, _ = linear_small
    H, g = value.H, small_grid
    assert np.all(H[:, :, 0] == 0.0)
    assert np.all(H[:, 0, :] == 0.0)
    assert np.array_equal(H[:, -1, :], np.broadcast_to(g.s_max * g.q, (g.n_t + 1, g.n_q + 1)))
    assert np.all(H[-1, 1:-1, 1:] == -default_penalty(g))


def test_policy_admissible(power_small, small_grid):
    _, (_, policy) = power_small
    cap = small_grid.rate_cap()
    assert np.all(policy.nu[:, 0] == 0.0)
    assert np.all(policy.nu >= 0.0)
    assert np.all(policy.nu <= cap[None, :])
    assert np.all(policy.by_price <= cap[None, None, :])


def test_surfaces_are_read_only(linear_small):
    value, policy = linear_small
    with pytest.raises(ValueError):
        value.H[0, 1, 1] = 0.0
    with pytest.raises(ValueError):
        policy.nu[0, 1] = 0.0


@pytest.mark.parametrize("which", ["linear", "power"])
def test_tridiagonal_rows_solved(which, linear_small, power_small, linear_spec):
    spec, (value, policy) = (linear_spec, linear_small) if which == "linear" else power_small
    assert np.max(row_residuals(spec, value, policy)) <= 1e-10


def test_monotone_in_inventory(power_small, small_grid):
    spec, (value, _) = power_small
    favourable = small_grid.s > 0.5 * spec.delta + spec.tpi(0.0)
    rows = favourable[1:-1]
    dH = np.diff(value.H[: value.implicit_layers - 1, 1:-1, :], axis=2)
    assert np.all(dH[:, rows, :] >= 0.0)


def test_degenerate_problem_is_price_times_inventory(free_spec):
    g = SolverGrid(n_t=20, n_s=10, n_q=20)
    value, _ = solve(free_spec, g)
    expected = g.s[:, None] * g.q[None, :]
    assert np.max(np.abs(value.H[0] - expected)) <= g.s_max * g.dq


def test_linear_solve_matches_oracle_on_small_grid(linear_small, linear_spec):
    value, _ = linear_small
    assert oracle_error(value, AnalyticSolution(linear_spec)) < 1e-2


def test_penalty_terminal_mode(linear_spec, small_grid):
    value, policy = solve(linear_spec, small_grid, terminal="penalty")
    assert value.implicit_layers == small_grid.n_t
    assert np.all(policy.nu <= small_grid.rate_cap()[None, :])


def test_solve_argument_checks(linear_spec, small_grid):
    with pytest.raises(ValueError):
        solve(linear_spec, small_grid, terminal="clamp")
    with pytest.raises(ValueError):
        solve(linear_spec, small_grid, cap_factor=0.5)
    with pytest.raises(ValueError):
        solve(linear_spec, small_grid, penalty=-1.0)
    with pytest.raises(TypeError):
        solve(linear_spec.to_dict(), small_grid)


def test_non_convergence_is_reported(small_grid):
    spec = scenario_spec("over", "power", "power")
    with pytest.raises(SolverError) as info:
        solve(spec, small_grid, max_iters=1, tol=1e-300)
    assert info.value.k is not None and info.value.j is not None
    assert info.value.residual > 0


def test_solve_is_deterministic(power_small, small_grid):
    spec, (value, policy) = power_small
    again_value, again_policy = solve(spec, small_grid, keep_price_policies=True)
    assert again_value.H.tobytes() == value.H.tobytes()
    assert again_policy.nu.tobytes() == policy.nu.tobytes()


@pytest.mark.parametrize("label", all_labels())
def test_every_preset_solves(label, small_grid):
    value, policy = solve(scenario_spec(*parse_label(label)), small_grid)
    assert np.all(np.isfinite(value.H))
    path = extract_policy_path(policy, 0.5, label)
    assert path.q[-1] == 0.0


# policy paths


def test_constant_surface_path_is_linear():
    g = SolverGrid(n_t=10, n_s=4, n_q=10)
    surface = PolicySurface(nu=np.full((g.n_t + 1, g.n_q + 1), g.q_max / g.T), grid=g)
    path = extract_policy_path(surface, g.q_max)
    np.testing.assert_allclose(path.q, g.q_max * (1 - g.t / g.T), atol=1e-15)
    assert path.q[-1] == 0.0


def test_path_follows_closed_form_policy(linear_spec):
    g = SolverGrid(n_t=200, n_s=10, n_q=200)
    exact = AnalyticSolution(linear_spec).policy(g.t[:-1, None], g.q[None, :])
    nu = np.vstack([exact, np.zeros((1, g.n_q + 1))])
    path = extract_policy_path(PolicySurface(nu=nu, grid=g), 0.5)
    target = path.q[:-1] / (g.T - g.t[:-1])
    assert np.max(np.abs(path.nu[:-1] - target)) <= 5 * (g.dt + g.dq)
    assert np.all(np.diff(path.q) <= 0) and path.q[-1] == 0.0


def test_path_domain(linear_small):
    _, policy = linear_small
    for q0 in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            extract_policy_path(policy, q0)


def test_small_start_winds_down_earlier(reference_grid):
    spec = scenario_spec("under", "power", "power")
    _, policy = solve(spec, reference_grid)

    def quiet_time(q0):
        path = extract_policy_path(policy, q0)
        idx = np.flatnonzero(path.nu[:-1] < 1e-6)[0]
        return path.t[idx]

    small, large = quiet_time(0.2), quiet_time(0.5)
    assert small < large
    assert 0.4 <= small <= 0.8


def test_path_csv_round_trip(tmp_path, linear_small):
    _, policy = linear_small
    path = extract_policy_path(policy, 0.5, "X")
    again = PolicyPath.from_csv(path.to_csv(tmp_path / "p.csv"), "X")
    assert again.q.tobytes() == path.q.tobytes() and again.nu.tobytes() == path.nu.tobytes()


# verification helpers


def test_compare_identical_policies_is_zero(linear_spec):
    g = SolverGrid(n_t=20, n_s=4, n_q=10)
    oracle = AnalyticSolution(linear_spec)
    nu = np.vstack([oracle.policy(g.t[:-1, None], g.q[None, :]), np.zeros((1, g.n_q + 1))])
    res = compare_policies(PolicySurface(nu=nu, grid=g), oracle.policy)
    assert res.statistic == 0.0 and not res.significant
    assert res.cells == g.n_t * g.n_q


def test_compare_constant_perturbation(linear_spec):
    g = SolverGrid(n_t=20, n_s=4, n_q=10)
    oracle = AnalyticSolution(linear_spec)
    exact = oracle.policy(g.t[:-1, None], g.q[None, :])
    delta = 1e-3
    nu = np.vstack([exact + delta, np.zeros((1, g.n_q + 1))])
    res = compare_policies(PolicySurface(nu=nu, grid=g), oracle.policy)
    expected = np.sum(delta**2 / exact[exact > 1e-8])
    assert res.statistic == pytest.approx(expected, rel=1e-9)


def test_compare_empty_cells():
    g = SolverGrid(n_t=4, n_s=4, n_q=4)
    with pytest.raises(ValueError):
        compare_policies(PolicySurface(nu=np.zeros((5, 5)), grid=g), lambda t, q: 0.0 * t * q)


def test_price_independence_ignores_boundary_rows():
    nu = np.zeros((3, 6, 4))
    nu[:, 0, :] = 1e9
    nu[:, -1, :] = -1e9
    assert price_independence_check(nu) == 0.0


def test_price_independence_of_linear_case(linear_small):
    _, policy = linear_small
    cap = policy.grid.rate_cap()[-1]
    assert price_independence_check(policy, exclude_edges=True) <= 1e-6 * cap


def test_price_independence_needs_price_surface(linear_spec, small_grid):
    _, policy = solve(linear_spec, small_grid)
    with pytest.raises(ValueError):
        price_independence_check(policy)
    with pytest.raises(ValueError):
        price_independence_check(np.zeros((2, 5, 3)), relative=True)


def test_convergence_study_needs_oracle(small_grid):
    with pytest.raises(UnsupportedSpecError):
        convergence_study(scenario_spec("under", "power", "power"), small_grid, "q")
    with pytest.raises(ValueError):
        convergence_study(scenario_spec("under", "power", "power"), small_grid, "x")


def test_self_referenced_study_runs_without_oracle():
    g = SolverGrid(n_t=10, n_s=4, n_q=5)
    rows = convergence_study(scenario_spec("under", "power", "power"), g, "q", refinements=2, reference="self")
    assert len(rows) == 3 and rows[0].order is None
    assert rows[1].error < rows[0].error


# estimator wrapper


def test_estimator_params_and_clone():
    est = HJBSolver(n_t=20, n_q=10)
    assert est.get_params()["n_t"] == 20
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    with pytest.raises(NotFittedError):
        twin.predict(0.0, 0.5)


def test_estimator_fit_predict(linear_spec):
    est = HJBSolver(n_t=40, n_s=10, n_q=20).fit(linear_spec)
    g = est.grid_
    assert est.predict(0.0, 0.5) == pytest.approx(float(np.interp(0.5, g.q, est.policy_.nu[0])))
    out = est.predict(np.array([0.0, 0.5]), np.array([0.25, 0.25]))
    assert out.shape == (2,)
    assert est.value_at(0).shape == (g.n_s + 1, g.n_q + 1)
    assert est.path(0.5).q[-1] == 0.0
    with pytest.raises(ValueError):
        est.predict(2.0, 0.5)
