import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedcvr.data import make_synthetic, partition_uniform
from fedcvr.problems import (
    FederatedProblem,
    LogRegProblem,
    QuadraticProblem,
    client_smoothness,
    estimate_sigma,
    global_full_gradient,
    global_loss,
    local_full_gradient,
    local_loss,
    local_stochastic_gradient,
    logreg_problem,
    random_quadratic,
    smoothness_bound,
)


def central_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def logreg(n=12, d=5, reg_alpha=0.1, seed=0):
    rng = np.random.default_rng(seed)
    return LogRegProblem(rng.standard_normal((n, d)), np.where(rng.random(n) < 0.5, -1.0, 1.0), reg_alpha)


def fed_logreg(N=4, reg_alpha=0.1, seed=0, n=80, d=6):
    ds = make_synthetic(n, d, seed=seed)
    return logreg_problem(ds, partition_uniform(ds, N, np.random.default_rng(seed)), reg_alpha)


def test_logreg_loss_at_zero():
    for alpha in (0.0, 0.1):
        assert local_loss(logreg(reg_alpha=alpha), np.zeros(5)) == pytest.approx(math.log(2), rel=1e-15)


def test_quadratic_loss():
    assert local_loss(QuadraticProblem(np.eye(2)), np.array([3.0, 4.0])) == 12.5


def test_quadratic_gradient():
    np.testing.assert_array_equal(local_full_gradient(QuadraticProblem(np.eye(2)), np.array([1.0, -2.0])), [1.0, -2.0])


def test_single_row_gradient():
    p = LogRegProblem(np.array([[1.0, 0.0]]), np.array([1.0]), 0.0)
    np.testing.assert_allclose(local_full_gradient(p, np.zeros(2)), [-0.5, 0.0], rtol=0, atol=1e-15)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        local_loss(logreg(), np.zeros(3))
    with pytest.raises(ValueError):
        local_full_gradient(QuadraticProblem(np.eye(2)), np.zeros(3))
    with pytest.raises(ValueError):
        FederatedProblem([QuadraticProblem(np.eye(2)), QuadraticProblem(np.eye(3))])


def _rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-8)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0), st.floats(0.1, 3.0))
def test_logreg_gradient_matches_finite_differences(seed, reg_alpha, scale):
    p = logreg(reg_alpha=reg_alpha, seed=seed)
    x = np.random.default_rng(seed + 1).standard_normal(5) * scale
    fd = central_diff(lambda z: local_loss(p, z), x)
    assert _rel_err(local_full_gradient(p, x), fd) <= 1e-5


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_global_gradient_matches_finite_differences(seed):
    fp = fed_logreg(seed=seed % 50)
    x = np.random.default_rng(seed).standard_normal(fp.dim)
    fd = central_diff(lambda z: global_loss(fp, z), x)
    assert _rel_err(global_full_gradient(fp, x), fd) <= 1e-5
    q = random_quadratic(3, 4, seed)
    y = np.random.default_rng(seed).standard_normal(4)
    assert _rel_err(global_full_gradient(q, y), central_diff(lambda z: global_loss(q, z), y)) <= 1e-5


def test_global_is_client_mean():
    p = logreg()
    x = np.random.default_rng(1).standard_normal(5)
    one = FederatedProblem([p])
    assert global_loss(one, x) == local_loss(p, x)
    np.testing.assert_array_equal(global_full_gradient(one, x), local_full_gradient(p, x))
    two = FederatedProblem([p, p])
    assert global_loss(two, x) == pytest.approx(local_loss(p, x), rel=1e-15)
    np.testing.assert_allclose(global_full_gradient(two, x), local_full_gradient(p, x), rtol=1e-15)


def test_global_invariant_under_reordering():
    fp = fed_logreg(N=5)
    rev = FederatedProblem(fp.clients[::-1])
    x = np.random.default_rng(2).standard_normal(fp.dim)
    assert global_loss(rev, x) == pytest.approx(global_loss(fp, x), rel=1e-14)
    np.testing.assert_allclose(global_full_gradient(rev, x), global_full_gradient(fp, x), rtol=1e-13, atol=1e-16)


def test_stochastic_gradient_full_batch_is_exact():
    p = logreg()
    x = np.ones(5)
    full = local_full_gradient(p, x)
    for b in (None, p.rows, p.rows + 5):
        np.testing.assert_array_equal(local_stochastic_gradient(p, x, b, np.random.default_rng(0)), full)


def test_stochastic_gradient_two_rows_enumeration():
    p = LogRegProblem(np.array([[1.0, 2.0], [-1.0, 0.5]]), np.array([1.0, -1.0]), 0.1)
    x = np.array([0.3, -0.2])
    per_row = [local_full_gradient(LogRegProblem(p.features[[i]], p.labels[[i]], 0.1), x) for i in range(2)]
    np.testing.assert_allclose(np.mean(per_row, axis=0), local_full_gradient(p, x), rtol=1e-14)
    draws = {tuple(local_stochastic_gradient(p, x, 1, np.random.default_rng(s))) for s in range(100)}
    assert draws == {tuple(g) for g in per_row}


def test_stochastic_gradient_unbiased_monte_carlo():
    p = logreg(n=20, reg_alpha=0.1, seed=3)
    x = np.random.default_rng(0).standard_normal(5)
    rng = np.random.default_rng(0)
    draws = np.array([local_stochastic_gradient(p, x, 3, rng) for _ in range(100_000)])
    se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - local_full_gradient(p, x)) <= 4 * se)


def test_stochastic_gradient_deterministic_and_validated():
    p = logreg()
    a = local_stochastic_gradient(p, np.ones(5), 2, np.random.default_rng(4))
    b = local_stochastic_gradient(p, np.ones(5), 2, np.random.default_rng(4))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        local_stochastic_gradient(p, np.ones(5), 0, np.random.default_rng(0))


def test_smoothness_examples():
    assert smoothness_bound(FederatedProblem([QuadraticProblem(np.eye(3))])) == pytest.approx(1.0)
    one_row = LogRegProblem(np.array([[2.0, 0.0]]), np.array([1.0]), 0.0)
    assert client_smoothness(one_row) == pytest.approx(1.0, rel=1e-10)
    with_reg = LogRegProblem(np.array([[2.0, 0.0]]), np.array([1.0]), 0.1)
    assert client_smoothness(with_reg) - client_smoothness(one_row) == pytest.approx(0.2, rel=1e-12)


def test_regularizer_curvature_peaks_at_zero():
    x = np.linspace(-5, 5, 200_001)
    second = (2 - 6 * x**2) / (1 + x**2) ** 3
    assert np.max(np.abs(second)) == pytest.approx(2.0)


def test_smoothness_matches_eigenvalue():
    p = logreg(n=30, d=6, reg_alpha=0.0, seed=5)
    exact = np.linalg.eigvalsh(p.features.T @ p.features)[-1] / (4 * p.rows)
    assert client_smoothness(p) == pytest.approx(exact, rel=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_smoothness_is_a_lipschitz_bound(seed):
    fp = fed_logreg(N=3, seed=seed % 30, reg_alpha=0.1)
    L = smoothness_bound(fp)
    rng = np.random.default_rng(seed)
    for c in fp.clients:
        for _ in range(5):
            x, y = rng.standard_normal((2, fp.dim)) * 2
            lhs = np.linalg.norm(local_full_gradient(c, x) - local_full_gradient(c, y))
            assert lhs <= L * np.linalg.norm(x - y) + 1e-9


def test_estimate_sigma_zero_cases():
    fp = fed_logreg()
    x = np.ones(fp.dim)
    assert estimate_sigma(fp, x, 10, np.random.default_rng(0), b=None) == 0.0
    assert estimate_sigma(fp, x, 10, np.random.default_rng(0), b=10**6) == 0.0
    assert estimate_sigma(random_quadratic(3, 4, 0), np.ones(4), 10, np.random.default_rng(0)) == 0.0


def test_estimate_sigma_two_rows():
    p = LogRegProblem(np.array([[1.0, 2.0], [-1.0, 0.5]]), np.array([1.0, -1.0]), 0.0)
    x = np.array([0.3, -0.2])
    full = local_full_gradient(p, x)
    per_row = [local_full_gradient(LogRegProblem(p.features[[i]], p.labels[[i]]), x) for i in range(2)]
    exact = np.mean([np.sum((g - full) ** 2) for g in per_row])
    # the two per-row deviations are mirror images, so the squared error is constant
    est = estimate_sigma(FederatedProblem([p]), x, 5000, np.random.default_rng(0), b=1)
    assert est**2 == pytest.approx(exact, rel=1e-12)


def test_estimate_sigma_monte_carlo():
    p = logreg(n=7, reg_alpha=0.1, seed=8)
    x = np.random.default_rng(1).standard_normal(5)
    full = local_full_gradient(p, x)
    per_row = [local_full_gradient(LogRegProblem(p.features[[i]], p.labels[[i]], 0.1), x) for i in range(7)]
    sq = np.array([np.sum((g - full) ** 2) for g in per_row])
    exact = sq.mean()
    trials = 20_000
    est = estimate_sigma(FederatedProblem([p]), x, trials, np.random.default_rng(0), b=1) ** 2
    se = sq.std() / np.sqrt(trials)
    assert abs(est - exact) <= 4 * se


def test_problem_validation():
    with pytest.raises(ValueError):
        LogRegProblem(np.ones((2, 2)), np.ones(2), -0.1)
    with pytest.raises(ValueError):
        LogRegProblem(np.ones((0, 2)), np.ones(0))
    with pytest.raises(ValueError):
        QuadraticProblem(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        estimate_sigma(fed_logreg(), np.zeros(6), 1, np.random.default_rng(0))
