import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from secest.decoders import decode_l0
from secest.errors import DimensionError
from secest.model import observability_matrix, sensor_major, simulate, AttackScenario
from secest.solver import (
    RowNormProblem,
    SolverConfig,
    optimality_residual,
    parse_norm,
    project_l1_ball,
    prox_row_norm,
    solve,
)
from conftest import circular_permutation


def kkt_projection_oracle(v, radius):
    """Enumerate the active-set size k: theta = (sum of k largest |v| - radius) / k."""
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    srt = np.sort(a)[::-1]
    for k in range(1, a.size + 1):
        theta = (srt[:k].sum() - radius) / k
        # KKT: the k largest survive the threshold, the rest do not
        if srt[k - 1] > theta and (k == a.size or srt[k] <= theta):
            return np.sign(v) * np.maximum(a - theta, 0.0)
    raise AssertionError("no consistent active set")


def prox_objective(u, v, t, r):
    return 0.5 * np.sum((u - v) ** 2) + t * (np.max(np.abs(u)) if r == np.inf else np.linalg.norm(u))


def test_prox_trivial_cases():
    v = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(prox_row_norm(v, 0.0, 2), v)
    np.testing.assert_array_equal(prox_row_norm(v, 0.0, "inf"), v)
    np.testing.assert_array_equal(prox_row_norm(v, 3.0, 2), 0 * v)


def test_prox_linf_against_grid_search():
    got = prox_row_norm(np.array([3.0, 1.0]), 1.0, "inf")
    np.testing.assert_allclose(got, [2.0, 1.0], atol=1e-14)
    g = np.linspace(-1, 4, 501)
    U = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    vals = 0.5 * np.sum((U - [3.0, 1.0]) ** 2, axis=1) + np.max(np.abs(U), axis=1)
    np.testing.assert_allclose(U[np.argmin(vals)], got, atol=1e-2)


def test_projection_examples():
    np.testing.assert_array_equal(project_l1_ball(np.array([0.2, -0.3]), 1.0), [0.2, -0.3])
    np.testing.assert_allclose(project_l1_ball(np.array([1.0, 1.0]), 1.0), [0.5, 0.5])
    v = np.array([3.0, 1.0, 0.0])
    np.testing.assert_allclose(project_l1_ball(v, 2.0), kkt_projection_oracle(v, 2.0))
    np.testing.assert_allclose(project_l1_ball(v, 2.0), [2.0, 0.0, 0.0])


def test_parse_norm():
    assert parse_norm(2) == 2 and parse_norm("2") == 2
    assert parse_norm("inf") == np.inf and parse_norm(np.inf) == np.inf
    for bad in (1, 3, "two"):
        with pytest.raises(ValueError):
            parse_norm(bad)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([2, np.inf]))
def test_prox_inequality(seed, r):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(1, 8))
    v = rng.standard_normal(T) * 10 ** rng.uniform(-2, 2)
    t = float(rng.exponential(1.0))
    p = prox_row_norm(v, t, r)
    fp = prox_objective(p, v, t, r)
    for _ in range(20):
        u = p + rng.standard_normal(T) * 10 ** rng.uniform(-4, 1)
        assert fp <= prox_objective(u, v, t, r) + 1e-12 * (1 + abs(fp))


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_projection_feasible_idempotent_and_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(int(rng.integers(1, 10))) * 5
    radius = float(rng.uniform(0.1, 5))
    w = project_l1_ball(v, radius)
    assert np.abs(w).sum() <= radius + 1e-12
    np.testing.assert_allclose(project_l1_ball(w, radius), w, atol=1e-12)
    np.testing.assert_allclose(w, kkt_projection_oracle(v, radius), atol=1e-12)


def test_problem_validation():
    with pytest.raises(DimensionError):
        RowNormProblem(np.eye(3), np.zeros(3), (2,), np.ones(1))
    with pytest.raises(DimensionError):
        RowNormProblem(np.eye(3), np.zeros(3), (3,), -np.ones(1))
    with pytest.raises(ValueError):
        SolverConfig(alpha=2.5)


def _circular_problem(n, attacked, r, seed=0, magnitude=1e3):
    rng = np.random.default_rng(seed)
    sys = circular_permutation(n)
    x0 = rng.standard_normal(n)
    E = np.zeros((n, n))
    E[attacked] = magnitude * rng.standard_normal((len(attacked), n))
    _, meas = simulate(sys, x0, attack=AttackScenario.sensors(E))
    Phi = sensor_major(observability_matrix(sys, n), n)
    return sys, x0, meas.Y, RowNormProblem.from_block(Phi, meas.Y, r=r)


@pytest.mark.parametrize("r", [2, "inf"])
def test_solve_zero_and_consistent(r):
    sys, x0, Y, problem = _circular_problem(4, [], r)
    res = solve(RowNormProblem.from_block(problem.Phi, np.zeros_like(Y), r=r))
    np.testing.assert_allclose(res.x_hat, 0, atol=1e-12)
    assert res.objective <= 1e-12
    res = solve(problem)
    np.testing.assert_allclose(res.x_hat, x0, atol=1e-6)


@pytest.mark.parametrize("r", [2, "inf"])
def test_solve_one_attack_matches_l0(r):
    sys, x0, Y, problem = _circular_problem(6, [3], r, seed=4)
    res = solve(problem)
    l0 = decode_l0(sys, Y)
    np.testing.assert_allclose(res.x_hat, x0, atol=1e-6)
    np.testing.assert_allclose(res.x_hat, l0.x0_hat, atol=1e-6)
    # best-objective sequence is nonincreasing
    h = res.history
    assert np.all(np.diff(h) <= 1e-10 * h[0])


@pytest.mark.parametrize("r", [2, "inf"])
def test_dual_certificate_at_termination(r):
    sys, x0, Y, problem = _circular_problem(6, [0, 2], r, seed=1)
    res = solve(problem)
    assert res.converged
    # tolerances are relative to max(|Y|, 1)
    bound = SolverConfig().tol_dual * max(1.0, np.linalg.norm(Y)) * np.linalg.norm(problem.Phi, 2)
    assert res.diagnostics["optimality_residual"] <= bound
    assert optimality_residual(problem, res.dual) == res.diagnostics["optimality_residual"]


def test_zero_column_is_regularized():
    Phi = np.hstack([np.eye(4), np.zeros((4, 1))])
    problem = RowNormProblem(Phi, np.arange(4.0), (2, 2), np.ones(2))
    res = solve(problem)
    assert res.diagnostics["regularized"]
    assert np.all(np.isfinite(res.x_hat))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3), st.sampled_from([2, np.inf]))
def test_argmin_scaling_invariance(seed, c, r):
    sys, x0, Y, problem = _circular_problem(6, [int(seed % 6)], r, seed=seed)
    a = solve(problem).x_hat
    scaled = RowNormProblem.from_block(c * problem.Phi, c * Y, r=r)
    b = solve(scaled).x_hat
    np.testing.assert_allclose(a, b, atol=1e-6 * max(1.0, np.max(np.abs(a))))
