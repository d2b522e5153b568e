"""Tests for the lasso-logistic screening path and cross-validation."""

import numpy as np
import pytest
from scipy.special import expit

from spatbeta.lasso import (
    binarize_response,
    cv_select,
    default_lambda_grid,
    kkt_residual,
    lasso_logistic_path,
)


def make_problem(rng, n=120, k=8, active=(0, 3), scale=1.5):
    X = rng.normal(size=(n, k))
    X = (X - X.mean(axis=0)) / X.std(axis=0)
    eta = -0.3 + sum(scale * X[:, j] for j in active)
    y = (rng.random(n) < expit(eta)).astype(float)
    return X, y


class TestBinarize:
    def test_strictly_above_mean(self):
        rates = np.array([0.1, 0.2, 0.3, 0.4])
        np.testing.assert_array_equal(binarize_response(rates), [0, 0, 1, 1])

    def test_ties_go_to_zero(self):
        rates = np.array([0.25, 0.25, 0.25])
        np.testing.assert_array_equal(binarize_response(rates), [0, 0, 0])

    def test_integer_output(self):
        out = binarize_response([0.1, 0.9])
        assert out.dtype == np.int64


class TestLambdaGrid:
    def test_descending_and_spans_ratio(self):
        rng = np.random.default_rng(21)
        X, y = make_problem(rng)
        grid = default_lambda_grid(X, y)
        assert len(grid) == 100
        assert np.all(np.diff(grid) < 0)
        np.testing.assert_allclose(grid[-1] / grid[0], 1e-4, rtol=1e-10)

    def test_top_matches_score_bound(self):
        rng = np.random.default_rng(22)
        X, y = make_problem(rng)
        lam_max = np.max(np.abs(X.T @ (y - y.mean()))) / len(y)
        np.testing.assert_allclose(default_lambda_grid(X, y)[0], lam_max, rtol=1e-12)


class TestPath:
    def test_null_solution_at_lambda_max(self):
        """At or above lambda_max every penalized coefficient is exactly 0."""
        rng = np.random.default_rng(23)
        X, y = make_problem(rng)
        lam_max = default_lambda_grid(X, y)[0]
        for lam in (lam_max, 2.0 * lam_max):
            path = lasso_logistic_path(X, y, lambdas=np.array([lam]))
            np.testing.assert_array_equal(path.coefs[:, 0], 0.0)

    def test_kkt_on_random_problems(self):
        rng = np.random.default_rng(24)
        for _ in range(5):
            X, y = make_problem(
                rng, n=int(rng.integers(60, 150)), k=int(rng.integers(3, 10))
            )
            lambdas = default_lambda_grid(X, y, n_lambdas=25)
            path = lasso_logistic_path(X, y, lambdas)
            for li, lam in enumerate(lambdas):
                resid = kkt_residual(X, y, path.intercepts[li], path.coefs[:, li], lam)
                assert resid < 1e-6

    def test_monotone_activation(self):
        """Smaller penalties keep the strong covariates active."""
        rng = np.random.default_rng(25)
        X, y = make_problem(rng, n=300, scale=2.0)
        lambdas = default_lambda_grid(X, y, n_lambdas=40)
        path = lasso_logistic_path(X, y, lambdas)
        assert np.all(path.coefs[:, 0] == 0.0)
        n_active = (path.coefs != 0.0).sum(axis=0)
        assert n_active[-1] >= n_active[0]
        assert path.coefs[0, -1] != 0.0
        assert path.coefs[3, -1] != 0.0

    def test_increasing_grid_rejected(self):
        rng = np.random.default_rng(26)
        X, y = make_problem(rng)
        with pytest.raises(ValueError):
            lasso_logistic_path(X, y, lambdas=np.array([0.01, 0.1]))

    def test_non_binary_response_rejected(self):
        rng = np.random.default_rng(27)
        X, _ = make_problem(rng)
        with pytest.raises(ValueError):
            lasso_logistic_path(X, np.full(len(X), 0.5))

    def test_separable_data_fills_forward(self):
        """Once separation saturates the fit, the path reuses that solution."""
        rng = np.random.default_rng(28)
        n = 80
        x = np.concatenate([rng.normal(-3.0, 0.3, n // 2), rng.normal(3.0, 0.3, n // 2)])
        X = np.column_stack([x, rng.normal(size=n)])
        y = (x > 0).astype(float)
        lambdas = default_lambda_grid(X, y, n_lambdas=60, ratio=1e-6)
        path = lasso_logistic_path(X, y, lambdas)
        assert np.all(np.isfinite(path.coefs))
        assert np.all(np.isfinite(path.intercepts))
        tail = path.coefs[:, -5:]
        for li in range(1, tail.shape[1]):
            np.testing.assert_array_equal(tail[:, li], tail[:, 0])


class TestCvSelect:
    def test_recovers_strong_covariates(self):
        rng = np.random.default_rng(29)
        X, y = make_problem(rng, n=400, k=8, active=(1, 4), scale=2.0)
        names = [f"c{j}" for j in range(8)]
        sel = cv_select(X, y, folds=10, seed=0, names=names)
        assert "c1" in sel.selected
        assert "c4" in sel.selected
        assert len(sel.selected) <= 5

    def test_deterministic_for_fixed_seed(self):
        rng = np.random.default_rng(30)
        X, y = make_problem(rng, n=150)
        a = cv_select(X, y, folds=5, seed=7)
        b = cv_select(X, y, folds=5, seed=7)
        assert a.lambda_min == b.lambda_min
        assert a.lambda_1se == b.lambda_1se
        assert a.selected == b.selected
        np.testing.assert_array_equal(a.path.cv_mean, b.path.cv_mean)

    def test_one_se_rule_orders_penalties(self):
        rng = np.random.default_rng(31)
        X, y = make_problem(rng, n=200)
        sel = cv_select(X, y, folds=5, seed=1)
        assert sel.lambda_1se >= sel.lambda_min
        path = sel.path
        best = int(np.argmin(path.cv_mean))
        one_se_idx = int(np.nonzero(path.lambdas == sel.lambda_1se)[0][0])
        assert path.cv_mean[one_se_idx] <= path.cv_mean[best] + path.cv_se[best] + 1e-12

    def test_constant_column_never_selected(self):
        rng = np.random.default_rng(32)
        X, y = make_problem(rng, n=150, k=5)
        X = np.column_stack([X, np.full(len(X), 3.0)])
        sel = cv_select(X, y, folds=5, seed=0, names=[f"c{j}" for j in range(6)])
        assert "c5" not in sel.selected

    def test_pure_noise_selects_little(self):
        rng = np.random.default_rng(33)
        n = 100
        X = rng.normal(size=(n, 6))
        y = (rng.random(n) < 0.5).astype(float)
        sel = cv_select(X, y, folds=5, seed=0)
        assert len(sel.selected) <= 2

    def test_fold_bounds_rejected(self):
        rng = np.random.default_rng(34)
        X, y = make_problem(rng, n=30)
        with pytest.raises(ValueError):
            cv_select(X, y, folds=1)
        with pytest.raises(ValueError):
            cv_select(X, y, folds=31)

    def test_kkt_holds_after_cv(self):
        rng = np.random.default_rng(35)
        X, y = make_problem(rng, n=120)
        sel = cv_select(X, y, folds=5, seed=0)
        path = sel.path
        center = X.mean(axis=0)
        scale = X.std(axis=0)
        Xs = (X - center) / scale
        idx = int(np.nonzero(path.lambdas == sel.lambda_1se)[0][0])
        resid = kkt_residual(
            Xs, y, path.intercepts[idx], path.coefs[:, idx], path.lambdas[idx]
        )
        assert resid < 1e-6
