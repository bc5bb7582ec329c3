import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st

from saphys.modeling.lasso import (kkt_residual, lambda_grid, lambda_max, lasso_cv_lambdas,
                                   lasso_fit, lasso_path)


def _objective(X, y, beta, b0, lam):
    r = y - X @ beta - b0
    return 0.5 * r @ r / len(y) + lam * np.abs(beta).sum()


def _fista(X, y, lam, iters=200000):
    """Accelerated proximal gradient on centred data as an independent optimizer."""
    Xc, yc = X - X.mean(0), y - y.mean()
    n = len(y)
    L = np.linalg.eigvalsh(Xc.T @ Xc / n).max()
    beta = z = np.zeros(X.shape[1])
    t = 1.0
    for _ in range(iters):
        grad = Xc.T @ (Xc @ z - yc) / n
        w = z - grad / L
        nb = np.sign(w) * np.maximum(np.abs(w) - lam / L, 0)
        tn = (1 + np.sqrt(1 + 4 * t * t)) / 2
        z = nb + (t - 1) / tn * (nb - beta)
        if np.abs(nb - beta).max() < 1e-15:
            beta = nb
            break
        beta, t = nb, tn
    return beta, y.mean() - X.mean(0) @ beta


class TestLassoFit:
    def test_zero_above_lambda_max(self, rng):
        X = rng.standard_normal((40, 10))
        y = X[:, 0] + rng.standard_normal(40)
        lm = lambda_max(X, y)
        beta, b0 = lasso_fit(X, y, lm)
        assert (beta == 0).all() and b0 == pytest.approx(y.mean())
        beta, _ = lasso_fit(X, y, lm * (1 - 1e-6))
        assert np.count_nonzero(beta) == 1

    def test_unpenalized_is_ols(self, rng):
        X = rng.standard_normal((50, 6))
        y = X @ rng.standard_normal(6) + 2 + rng.standard_normal(50)
        beta, b0 = lasso_fit(X, y, 0.0)
        A = np.column_stack([np.ones(50), X])
        ols = np.linalg.lstsq(A, y, rcond=None)[0]
        np.testing.assert_allclose(beta, ols[1:], atol=1e-6)
        assert b0 == pytest.approx(ols[0], abs=1e-6)

    def test_objective_matches_proximal_gradient(self, rng):
        X = rng.standard_normal((50, 3)) * [1.0, 2.0, 0.5]
        y = X @ [1.0, -0.5, 0.0] + 0.5 * rng.standard_normal(50)
        for lam in (0.01, 0.1, 0.4):
            beta, b0 = lasso_fit(X, y, lam)
            ob, o0 = _fista(X, y, lam)
            assert _objective(X, y, beta, b0, lam) == pytest.approx(_objective(X, y, ob, o0, lam),
                                                                    abs=1e-8)

    @given(st.integers(0, 2 ** 32 - 1), st.integers(5, 40), st.integers(1, 60), st.floats(0.001, 1.0))
    def test_kkt(self, seed, n, p, frac):
        g = np.random.default_rng(seed)
        X = g.standard_normal((n, p))
        y = X[:, : min(3, p)].sum(1) + g.standard_normal(n)
        lam = frac * lambda_max(X, y)
        beta, b0 = lasso_fit(X, y, lam)
        assert kkt_residual(X, y, beta, b0, lam) <= 1e-6

    def test_path_validation(self, rng):
        X = rng.standard_normal((20, 3))
        with pytest.raises(ValueError, match="non-increasing"):
            lasso_path(X, X[:, 0], np.array([0.1, 0.2]))
        with pytest.raises(ValueError, match=">= 0"):
            lasso_path(X, X[:, 0], np.array([-1.0]))


class TestPath:
    def test_grid(self, rng):
        X = rng.standard_normal((30, 5))
        y = rng.standard_normal(30)
        g = lambda_grid(X, y)
        assert len(g) == 100
        assert g[0] == pytest.approx(lambda_max(X, y))
        assert g[-1] == pytest.approx(g[0] * 1e-4)

    @given(st.integers(0, 2 ** 32 - 1))
    @example(757856)  # grid start once rounded below lambda_max
    def test_l1_norm_monotone_and_kkt(self, seed):
        g = np.random.default_rng(seed)
        X = g.standard_normal((30, 50))
        y = X[:, :4] @ [2, -1, 1, 0.5] + g.standard_normal(30)
        path = lasso_path(X, y, lambda_grid(X, y, 30, 3), max_r2=1.0)
        l1 = np.abs(path.betas).sum(1)
        assert (np.diff(l1) >= -1e-7).all()
        assert path.support(0).size == 0
        for i in range(0, 30, 7):
            assert kkt_residual(X, y, path.betas[i], path.intercepts[i], path.lambdas[i]) <= 1e-6

    def test_saturation_stops_path(self, rng):
        X = rng.standard_normal((20, 100))
        y = rng.standard_normal(20)
        path = lasso_path(X, y)
        assert path.n_solved < 100
        np.testing.assert_array_equal(path.betas[-1], path.betas[path.n_solved - 1])

    def test_wide_rank_deficient_converges(self, rng):
        X = rng.standard_normal((21, 4000))
        y = X[:, :3].sum(1) + 0.1 * rng.standard_normal(21)
        path = lasso_path(X, y)
        for i in range(path.n_solved):
            assert kkt_residual(X, y, path.betas[i], path.intercepts[i], path.lambdas[i]) <= 1e-6


class TestCvLambdas:
    def test_one_se_not_below_min(self):
        for seed in range(10):
            g = np.random.default_rng(seed)
            X = g.standard_normal((60, 30))
            y = X[:, 0] + g.standard_normal(60)
            cv = lasso_cv_lambdas(X, y, g)
            assert cv.lambda_1se >= cv.lambda_min
            assert cv.i_1se <= cv.i_min

    def test_planted_signal_found(self):
        g = np.random.default_rng(7)
        X = g.standard_normal((100, 200))
        y = X[:, [3, 50, 120]] @ [3.0, -2.0, 2.5] + 0.5 * g.standard_normal(100)
        path = lasso_path(X, y)
        hits = 0
        for run in range(50):
            cv = lasso_cv_lambdas(X, y, np.random.default_rng(run), path=path)
            hits += {3, 50, 120} <= set(cv.set_min) and {3, 50, 120} <= set(cv.set_1se)
        assert hits >= 45

    def test_pure_noise_mostly_empty(self):
        empty = 0
        for run in range(20):
            g = np.random.default_rng(100 + run)
            X = g.standard_normal((60, 100))
            cv = lasso_cv_lambdas(X, g.standard_normal(60), g)
            empty += len(cv.set_1se) == 0
        assert empty > 10

    def test_too_few_rows(self, rng):
        with pytest.raises(ValueError, match="folds"):
            lasso_cv_lambdas(rng.standard_normal((15, 3)), rng.standard_normal(15), rng)
