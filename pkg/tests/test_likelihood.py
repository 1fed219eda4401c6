import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from conftest import random_instance
from mixed_em import henderson, likelihood
from mixed_em.errors import CriterionMismatch, MixedModelError
from mixed_em.likelihood import LogLik
from mixed_em.model import Criterion, VarianceComponents, validate_model


def dense_V(model, vc):
    return vc.tau2 * model.Z @ model.Z.T + vc.sigma2 * np.eye(model.n)


def reml_dense(model, vc):
    """REML log-likelihood with the projection matrix built explicitly."""
    V = dense_V(model, vc)
    Vi = np.linalg.inv(V)
    X = model.X
    XVX = X.T @ Vi @ X
    P = Vi - Vi @ X @ np.linalg.inv(XVX) @ X.T @ Vi
    n, p = X.shape
    return -0.5 * (np.linalg.slogdet(V)[1] + np.linalg.slogdet(XVX)[1]
                   + model.y @ P @ model.y + (n - p) * math.log(2 * math.pi))


class TestMarginal:
    def test_zero_z(self):
        m = validate_model([1.0, 2.0, 3.0], np.ones((3, 1)), np.zeros((3, 2)))
        mm = likelihood.marginal(m, VarianceComponents(5.0, 2.0))
        np.testing.assert_array_equal(mm.V, 2 * np.eye(3))
        assert mm.log_det_V == pytest.approx(3 * math.log(2), rel=1e-14)

    def test_tiny(self, tiny):
        mm = likelihood.marginal(tiny, VarianceComponents(1.0, 1.0))
        np.testing.assert_array_equal(mm.V, [[2, 0], [0, 1]])
        assert mm.log_det_V == pytest.approx(math.log(2), rel=1e-14)

    def test_random(self):
        model, vc = random_instance(np.random.default_rng(2))
        mm = likelihood.marginal(model, vc)
        V = dense_V(model, vc)
        np.testing.assert_allclose(mm.V, V, rtol=1e-12, atol=1e-12 * np.abs(V).max())
        assert mm.log_det_V == pytest.approx(np.linalg.slogdet(V)[1], abs=1e-10)
        assert mm.log_det_V == pytest.approx(2 * np.sum(np.log(np.diag(mm.chol))), abs=1e-10)


class TestGls:
    def test_identity_is_ols(self):
        rng = np.random.default_rng(0)
        X = np.column_stack([np.ones(9), rng.standard_normal(9)])
        m = validate_model(rng.standard_normal(9), X, np.zeros((9, 1)))
        beta = likelihood.gls_beta(m, likelihood.marginal(m, VarianceComponents(1.0, 1.0)))
        np.testing.assert_allclose(beta, np.linalg.lstsq(X, m.y, rcond=None)[0], rtol=1e-12)

    def test_tiny(self, tiny):
        beta = likelihood.gls_beta(tiny, likelihood.marginal(tiny, VarianceComponents(1.0, 1.0)))
        # weighted mean with weights 1/2 and 1
        np.testing.assert_allclose(beta, [(0.5 * 1 + 1 * 2) / 1.5], rtol=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_henderson(self, seed):
        model, vc = random_instance(np.random.default_rng(seed))
        beta = likelihood.gls_beta(model, likelihood.marginal(model, vc))
        np.testing.assert_allclose(beta, henderson.fit_at(model, vc).beta_hat, rtol=1e-8, atol=1e-10)


class TestLoglik:
    def test_standard_normal(self):
        m = validate_model([0.0], [[1.0]], [[0.0]])
        vc = VarianceComponents(1.0, 1.0)
        assert likelihood.loglik_ml(m, [0.0], vc) == pytest.approx(-0.9189385332046727, abs=1e-15)
        m1 = validate_model([1.0], [[1.0]], [[0.0]])
        assert likelihood.loglik_ml(m1, [0.0], vc) == pytest.approx(-1.4189385332046727, abs=1e-15)

    def test_ml_matches_mvn_density(self):
        rng = np.random.default_rng(10)
        model, vc = random_instance(rng, n=10)
        beta = rng.standard_normal(model.p)
        expected = multivariate_normal(model.X @ beta, dense_V(model, vc)).logpdf(model.y)
        assert likelihood.loglik_ml(model, beta, vc) == pytest.approx(expected, abs=1e-10)

    def test_reml_tiny_against_explicit_projection(self, tiny):
        vc = VarianceComponents(1.0, 1.0)
        assert likelihood.loglik_reml(tiny, vc) == pytest.approx(reml_dense(tiny, vc), abs=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_reml_against_explicit_projection(self, seed):
        model, vc = random_instance(np.random.default_rng(20 + seed))
        assert likelihood.loglik_reml(model, vc) == pytest.approx(reml_dense(model, vc), abs=1e-10)
        P = likelihood.projection_matrix(model, vc)
        beta = likelihood.gls_beta(model, likelihood.marginal(model, vc))
        e = model.y - model.X @ beta
        assert model.y @ P @ model.y == pytest.approx(e @ np.linalg.solve(dense_V(model, vc), e),
                                                      rel=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_reml_ml_identity(self, seed):
        model, vc = random_instance(np.random.default_rng(40 + seed))
        mm = likelihood.marginal(model, vc)
        ViX = np.linalg.solve(mm.V, model.X)
        lhs = likelihood.loglik_reml(model, vc)
        rhs = (likelihood.profiled_loglik_ml(model, vc)
               - 0.5 * np.linalg.slogdet(model.X.T @ ViX)[1]
               + 0.5 * model.p * math.log(2 * math.pi))
        assert lhs == pytest.approx(rhs, abs=1e-10)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        model, vc = random_instance(rng)
        perm = rng.permutation(model.n)
        shuffled = validate_model(model.y[perm], model.X[perm], model.Z[perm])
        for crit in Criterion:
            assert likelihood.objective(shuffled, vc, crit) == pytest.approx(
                likelihood.objective(model, vc, crit), abs=1e-10)

    def test_minimal_df(self):
        m = validate_model([1.0, 3.0], [[1.0], [1.0]], [[1.0], [1.0]])
        assert np.isfinite(likelihood.loglik_reml(m, VarianceComponents(0.5, 2.0)))
        with pytest.raises(MixedModelError):
            likelihood.loglik_reml(validate_model([1.0], [[1.0]], [[1.0]]),
                                   VarianceComponents(1, 1))

    def test_reml_sigma_slice_recovers_ols_variance(self):
        # negligible tau2: REML reduces to the linear-model REML criterion in sigma2
        rng = np.random.default_rng(6)
        X = np.column_stack([np.ones(15), rng.standard_normal((15, 2))])
        m = validate_model(rng.standard_normal(15), X, z_from := np.ones((15, 1)))
        r = m.y - X @ np.linalg.lstsq(X, m.y, rcond=None)[0]
        s_star = r @ r / (15 - 3)
        grid = s_star * np.exp(np.linspace(-0.05, 0.05, 2001))
        vals = [likelihood.loglik_reml(m, VarianceComponents(1e-12, s)) for s in grid]
        assert grid[int(np.argmax(vals))] == pytest.approx(s_star, rel=1e-4)


class TestLogLikTag:
    def test_same_criterion(self):
        assert LogLik(-3.0, Criterion.ML) - LogLik(-5.0, Criterion.ML) == 2.0
        assert LogLik(-5.0, Criterion.REML) < LogLik(-3.0, Criterion.REML)

    def test_cross_scale_refused(self):
        with pytest.raises(CriterionMismatch):
            LogLik(-3.0, Criterion.ML) - LogLik(-5.0, Criterion.REML)
        with pytest.raises(CriterionMismatch):
            LogLik(-3.0, Criterion.ML) <= LogLik(-5.0, Criterion.REML)


class TestFdScore:
    def test_far_from_optimum(self, pinned):
        from mixed_em import em
        f = em.fit(pinned, em.EmConfig(criterion="REML"))
        far = VarianceComponents(100 * 1.0, f.vc.sigma2)
        assert np.linalg.norm(likelihood.fd_score(pinned, far, "REML", 1e-5)) > 1e-2

    def test_second_order_consistency(self, pinned):
        vc = VarianceComponents(0.7, 1.3)
        g = [likelihood.fd_score(pinned, vc, "ML", h) for h in (8e-3, 4e-3, 2e-3)]
        d1, d2 = g[0] - g[1], g[1] - g[2]
        # halving the step cuts the truncation error by about four
        np.testing.assert_allclose(d1 / d2, 4.0, rtol=0.05)

    def test_against_analytic_ml_gradient(self, pinned):
        # d/d theta_k of the profiled ML: -1/2 tr(V^-1 V_k) + 1/2 e'V^-1 V_k V^-1 e
        vc = VarianceComponents(0.7, 1.3)
        V = dense_V(pinned, vc)
        Vi = np.linalg.inv(V)
        beta = likelihood.gls_beta(pinned, likelihood.marginal(pinned, vc))
        a = Vi @ (pinned.y - pinned.X @ beta)
        grads = [-0.5 * np.trace(Vi @ D) + 0.5 * a @ D @ a
                 for D in (pinned.Z @ pinned.Z.T, np.eye(pinned.n))]
        np.testing.assert_allclose(likelihood.fd_score(pinned, vc, "ML", 1e-5), grads, rtol=1e-6)

    @pytest.mark.parametrize("step", [0.0, -1e-5, 0.1])
    def test_step_range(self, pinned, step):
        with pytest.raises(MixedModelError):
            likelihood.fd_score(pinned, VarianceComponents(1, 1), "ML", step)
