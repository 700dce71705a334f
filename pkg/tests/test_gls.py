import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from creditcurve.errors import InvalidInputError, NoFeasiblePointError, SingularSystemError
from creditcurve.gls import (
    DEFAULT_GRID,
    GlsProblem,
    GridSpec,
    default_workers,
    glse,
    glse_batch,
    grid_minimize,
    profiled_nll,
)


def random_pd(rng, n):
    A = rng.normal(size=(n, n))
    return A @ A.T + n * np.eye(n)


def test_identity_covariance_is_ols(rng):
    X = rng.normal(size=(20, 3))
    y = rng.normal(size=20)
    res = glse(GlsProblem(X, y, np.eye(20)))
    ols, *_ = np.linalg.lstsq(X, y, rcond=None)
    assert np.allclose(res.coefficients, ols, rtol=1e-12, atol=1e-12)


def test_intercept_only_gives_mean(rng):
    y = rng.normal(size=7)
    res = glse(GlsProblem(np.ones((7, 1)), y, np.eye(7)))
    assert res.coefficients[0] == pytest.approx(y.mean(), rel=1e-14)


def test_diagonal_weights_match_whitened_ols(rng):
    X = rng.normal(size=(5, 2))
    y = rng.normal(size=5)
    S = np.diag([1.0, 1.0, 4.0, 4.0, 4.0])
    res = glse(GlsProblem(X, y, S))
    assert np.allclose(res.coefficients, oracles.whitened_ols(X, y, S), rtol=1e-10)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(4, 25), p=st.integers(1, 4))
def test_matches_normal_equations(seed, n, p):
    rng = np.random.default_rng(seed)
    if p > n:
        p = n
    X = rng.normal(size=(n, p))
    y = rng.normal(size=n)
    S = random_pd(rng, n)
    res = glse(GlsProblem(X, y, S))
    beta, psi, A_inv = oracles.gls_normal_equations(X, y, S)
    assert np.allclose(res.coefficients, beta, rtol=1e-8, atol=1e-10)
    assert res.objective == pytest.approx(psi, rel=1e-8, abs=1e-12)
    if n > p:
        assert np.allclose(res.coef_covariance, psi / (n - p) * A_inv, rtol=1e-8, atol=1e-14)
    assert res.log_det == pytest.approx(np.linalg.slogdet(S)[1], rel=1e-10)
    # residual orthogonality in the metric of S
    g = X.T @ np.linalg.solve(S, res.residuals)
    assert np.max(np.abs(g)) <= 1e-8 * max(1.0, np.max(np.abs(X.T @ np.linalg.solve(S, y))))


def test_scaling_covariance(rng):
    X = rng.normal(size=(12, 3))
    y = rng.normal(size=12)
    S = random_pd(rng, 12)
    a = glse(GlsProblem(X, y, S))
    b = glse(GlsProblem(X, y, 7.5 * S))
    assert np.allclose(a.coefficients, b.coefficients, rtol=1e-12)
    assert b.objective == pytest.approx(a.objective / 7.5, rel=1e-12)
    # the estimated coefficient covariance does not depend on the scale of S
    assert np.allclose(a.coef_covariance, b.coef_covariance, rtol=1e-10)


def test_singular_covariance_named(rng):
    X = rng.normal(size=(4, 2))
    S = np.ones((4, 4))
    with pytest.raises(SingularSystemError) as e:
        glse(GlsProblem(X, rng.normal(size=4), S))
    assert e.value.matrix == "covariance"


def test_rank_deficient_design_named(rng):
    x = rng.normal(size=(6, 1))
    X = np.hstack([x, 2 * x])
    with pytest.raises(SingularSystemError) as e:
        glse(GlsProblem(X, rng.normal(size=6), np.eye(6)))
    assert e.value.matrix == "design"


def test_problem_validation():
    with pytest.raises(InvalidInputError):
        GlsProblem(np.ones((2, 3)), np.ones(2), np.eye(2))
    with pytest.raises(InvalidInputError):
        GlsProblem(np.ones((3, 1)), np.ones(3), np.array([[1, 0.5, 0], [0, 1, 0], [0, 0, 1.0]]))
    with pytest.raises(InvalidInputError):
        GlsProblem(np.ones((3, 1)), np.ones(2), np.eye(3))


def test_batch_agrees_with_single(rng):
    X = rng.normal(size=(10, 2))
    y = rng.normal(size=10)
    covs = np.stack([random_pd(rng, 10) for _ in range(4)] + [np.ones((10, 10))])
    beta, psi, logdet, ok = glse_batch(X, y, covs)
    assert ok.tolist() == [True] * 4 + [False]
    assert psi[-1] == math.inf
    for i in range(4):
        r = glse(GlsProblem(X, y, covs[i]))
        assert np.allclose(beta[i], r.coefficients, rtol=1e-10)
        assert psi[i] == pytest.approx(r.objective, rel=1e-10)
        assert logdet[i] == pytest.approx(r.log_det, rel=1e-10)


def test_profiled_nll_minimized_by_sigma():
    # n log(psi/n) + logdet equals min over s2 of psi/s2 + n log s2 + logdet, minus n
    psi, logdet, n = 3.7, -2.0, 11
    s2 = np.linspace(0.01, 2, 20001)
    direct = np.min(psi / s2 + n * np.log(s2)) + logdet - n
    assert profiled_nll(psi, logdet, n) == pytest.approx(direct, abs=1e-4)


def test_grid_quadratic():
    res = grid_minimize(lambda p: (p[0] - 0.3) ** 2, GridSpec.default(["theta"]))
    assert res.best_point == {"theta": 0.3}
    assert len(res.evaluations) == 10


def test_grid_constant_objective_tie_break():
    res = grid_minimize(lambda p: 1.0, GridSpec.default(["theta", "rho", "xi"]))
    assert res.best_tuple == (0.0, 0.0, 0.0)


def test_grid_refinement_against_exhaustive():
    spec = GridSpec.default(["theta"], refine_depth=1, shrink=0.1)

    def f(p):
        return (p[0] - 0.34) ** 2

    res = grid_minimize(f, spec)
    # exhaustive oracle over the coarse grid plus the refined neighbourhood of its winner
    coarse = oracles.brute_minimize(f, [DEFAULT_GRID])[1][0]
    fine = [min(1.0, max(0.0, coarse + k * 0.01)) for k in range(-10, 11)]
    oracle = oracles.brute_minimize(f, [sorted(set(DEFAULT_GRID) | set(fine))])
    assert abs(res.best_point["theta"] - 0.34) <= 0.05
    assert res.best_point["theta"] == pytest.approx(oracle[1][0], abs=1e-12)


def test_grid_errors_are_infinite():
    def f(p):
        if p[0] < 0.5:
            raise ArithmeticError("boom")
        return -p[0]

    res = grid_minimize(f, GridSpec.default(["theta"]))
    assert res.best_point == {"theta": 0.9}
    assert sum(1 for _, v in res.evaluations if v == math.inf) == 5


def test_grid_all_infeasible():
    with pytest.raises(NoFeasiblePointError):
        grid_minimize(lambda p: math.nan, GridSpec.default(["theta"]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000), workers=st.integers(1, 4))
def test_grid_order_independent_and_minimal(seed, workers):
    rng = np.random.default_rng(seed)
    table = {v: float(rng.integers(0, 5)) for v in itertools_product()}
    spec = GridSpec.default(["a", "b"])
    res = grid_minimize(lambda p: table[tuple(round(x, 1) for x in p)], spec, max_workers=workers)
    assert all(res.best_value <= v for _, v in res.evaluations)
    oracle = oracles.brute_minimize(lambda p: table[p], [DEFAULT_GRID, DEFAULT_GRID])
    assert res.best_tuple == oracle[1]


def itertools_product():
    return [(a, b) for a in DEFAULT_GRID for b in DEFAULT_GRID]


def test_vectorized_grid_matches_scalar():
    spec = GridSpec.default(["a", "b"])

    def f(p):
        return (p[0] - 0.2) ** 2 + (p[1] - 0.7) ** 2

    a = grid_minimize(f, spec)
    b = grid_minimize(lambda pts: [(x - 0.2) ** 2 + (y - 0.7) ** 2 for x, y in pts], spec, vectorized=True)
    assert a.best_tuple == b.best_tuple == (0.2, 0.7)


def test_grid_spec_validation():
    with pytest.raises(InvalidInputError):
        GridSpec({"theta": []})
    with pytest.raises(InvalidInputError):
        GridSpec({"theta": [1.5]})
    with pytest.raises(InvalidInputError):
        GridSpec({"theta": [0.1]}, shrink=1.0)


def test_worker_env(monkeypatch):
    monkeypatch.setenv("CREDITCURVE_THREADS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("CREDITCURVE_THREADS", "x")
    with pytest.raises(InvalidInputError):
        default_workers()
