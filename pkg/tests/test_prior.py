import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from stss_mmv.errors import ConfigurationError
from stss_mmv.gaussian import KernelSpec
from stss_mmv.prior import (GroundTruth, MmvProblem, PriorConfig, calibrate_mu0_for_sparsity,
                            forward_matrix, marginal_activation_prob, realized_snr_db,
                            sample_gamma_chain, sample_problem, sample_support)
from stss_mmv.problem_io import read_problem, write_problem


def make_cfg(**kw):
    base = dict(D=6, T=5, mu0=-0.5, kernel=KernelSpec("squared_exponential", 1.0, 2.0),
                alpha=0.9, beta=1 - 0.81)
    base.update(kw)
    return PriorConfig(**base)


class TestPriorConfig:
    def test_scalar_mu0_broadcast(self):
        assert make_cfg().mu0.shape == (6,)

    @pytest.mark.parametrize("kw", [dict(alpha=1.5), dict(alpha=-0.1), dict(beta=-1.0),
                                    dict(alpha=0.0, beta=0.0), dict(slab_var=0.0),
                                    dict(noise_var=-1.0), dict(D=0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            make_cfg(**kw)

    def test_stationarity_check(self):
        make_cfg(alpha=0.99, beta=1 - 0.99 ** 2, require_stationary=True)
        with pytest.raises(ConfigurationError):
            make_cfg(alpha=0.9, beta=0.5, require_stationary=True)


class TestGammaChain:
    def test_joint_sparsity_columns_identical(self):
        G = sample_gamma_chain(make_cfg(alpha=1.0, beta=0.0), 3)
        for t in range(1, 5):
            np.testing.assert_array_equal(G[:, t], G[:, 0])

    def test_time_independent_columns(self):
        cfg = make_cfg(D=2, T=2, alpha=0.0, beta=1.0, mu0=0.3,
                       kernel=KernelSpec("squared_exponential", 2.0, 1.0))
        G = sample_gamma_chain(cfg, 0, n_samples=40000)
        cov = np.cov(G.transpose(0, 2, 1).reshape(40000, 4).T)
        # cross-time covariance vanishes, within-time equals Sigma0
        assert np.abs(cov[0:2, 2:4]).max() < 0.06
        np.testing.assert_allclose(cov[2:4, 2:4], cfg.Sigma0, atol=0.08)
        np.testing.assert_allclose(G.mean(0), 0.3, atol=0.05)

    def test_stationary_marginal_monte_carlo(self):
        cfg = make_cfg(D=4, T=50, alpha=0.99, beta=1 - 0.99 ** 2, mu0=-1.0)
        G = sample_gamma_chain(cfg, 11, n_samples=10000)[:, :, 49]
        se = np.sqrt(np.diag(cfg.Sigma0) / 10000)
        assert np.all(np.abs(G.mean(0) - cfg.mu0) < 4 * se)
        np.testing.assert_allclose(G.var(0), np.diag(cfg.Sigma0), rtol=0.05)

    def test_deterministic(self):
        cfg = make_cfg()
        np.testing.assert_array_equal(sample_gamma_chain(cfg, 5), sample_gamma_chain(cfg, 5))


def test_composed_variance_recursion_is_stationary():
    for alpha in (0.0, 0.3, 0.9, 0.99, 1.0):
        beta = 1 - alpha ** 2
        v = 1.0
        for _ in range(99):
            v = alpha ** 2 * v + beta
        assert v == pytest.approx(1.0, abs=1e-12)


class TestSupport:
    def test_saturated(self):
        Z = sample_support(np.full((50, 50), 8.0), 0)
        assert Z.all()
        assert not sample_support(np.full((50, 50), -8.0), 0).any()

    def test_unbiased_at_zero(self):
        Z = sample_support(np.zeros((100, 100)), 1)
        assert Z.mean() == pytest.approx(0.5, abs=0.02)
        assert set(np.unique(Z)) <= {0, 1}


class TestActivation:
    @pytest.mark.parametrize("s", [0.1, 1.0, 30.0])
    def test_zero_mean_unbiased(self, s):
        assert marginal_activation_prob(0.0, s) == 0.5

    def test_small_variance_limit(self):
        assert marginal_activation_prob(-3.0, 1e-14) == pytest.approx(0.0013499, abs=1e-6)

    def test_formula(self):
        assert marginal_activation_prob(1.0, 3.0) == pytest.approx(norm.cdf(0.5), abs=1e-15)

    def test_matches_integral(self):
        # E[Phi(g)] for g ~ N(mu, s) by quadrature
        from scipy import integrate
        mu, s = -0.7, 2.3
        val = integrate.quad(lambda g: norm.cdf(g) * norm.pdf(g, mu, math.sqrt(s)), -30, 30)[0]
        assert marginal_activation_prob(mu, s) == pytest.approx(val, abs=1e-10)

    def test_calibration(self):
        assert calibrate_mu0_for_sparsity(50, 100, 1.0) == pytest.approx(0.0, abs=1e-15)
        assert calibrate_mu0_for_sparsity(20, 100, 1.0) == pytest.approx(
            math.sqrt(2) * norm.ppf(0.2), abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.5, 99.5), st.floats(0.01, 100.0))
    def test_calibration_round_trip(self, target, s):
        mu = calibrate_mu0_for_sparsity(target, 100, s)
        assert 100 * marginal_activation_prob(mu, s) == pytest.approx(target, abs=1e-9)

    @pytest.mark.parametrize("target", [0.0, 100.0, -1.0])
    def test_calibration_rejects(self, target):
        with pytest.raises(ConfigurationError):
            calibrate_mu0_for_sparsity(target, 100, 1.0)


class TestSampleProblem:
    def test_infinite_snr(self):
        prob, truth = sample_problem(make_cfg(mu0=1.0), 4, snr_db=math.inf, rng_seed=0)
        assert not truth.E.any()
        np.testing.assert_array_equal(prob.Y, prob.A @ truth.X)
        assert prob.noise_var > 0

    def test_iid_scale(self):
        rng = np.random.default_rng(0)
        A = forward_matrix(50, 400, "gaussian_iid", rng)
        se = np.std(A ** 2) / np.sqrt(A.size)
        assert abs(np.mean(A ** 2) - 1 / 50) < 3 * se

    def test_column_correlation(self):
        rng = np.random.default_rng(1)
        A = forward_matrix(10000, 100, "column_correlated", rng, r=0.9)
        C = np.corrcoef(A.T)
        assert np.abs(np.diag(C, 1) - 0.9).max() < 0.02
        assert np.mean(A ** 2) == pytest.approx(1 / 10000, rel=0.02)

    def test_zero_correlation_decorrelates(self):
        rng = np.random.default_rng(2)
        A = forward_matrix(5000, 20, "column_correlated", rng, r=0.0)
        C = np.corrcoef(A.T)
        assert np.abs(C - np.eye(20)).max() < 0.07

    def test_invalid_correlation(self):
        with pytest.raises(ConfigurationError):
            forward_matrix(3, 3, "column_correlated", np.random.default_rng(), r=1.0)

    @pytest.mark.parametrize("snr", [-3.0, 0.0, 10.0, 25.0])
    def test_exact_snr(self, snr):
        prob, truth = sample_problem(make_cfg(mu0=1.0), 3, snr_db=snr, rng_seed=4)
        assert realized_snr_db(truth, prob) == pytest.approx(snr, abs=1e-9)
        assert prob.noise_var == pytest.approx(np.sum(truth.E ** 2) / truth.E.size)

    def test_support_consistency_and_determinism(self):
        cfg = make_cfg(mu0=0.0)
        a = sample_problem(cfg, 3, rng_seed=9)
        b = sample_problem(cfg, 3, rng_seed=9)
        assert np.all(a[1].X[a[1].Z == 0] == 0)
        np.testing.assert_array_equal(a[0].Y, b[0].Y)
        np.testing.assert_array_equal(a[1].Gamma, b[1].Gamma)

    def test_fixed_support_reused(self):
        cfg = make_cfg(mu0=0.0)
        _, t1 = sample_problem(cfg, 3, rng_seed=1)
        _, t2 = sample_problem(cfg, 3, rng_seed=2, support=(t1.Gamma, t1.Z))
        np.testing.assert_array_equal(t1.Z, t2.Z)
        assert not np.array_equal(t1.X, t2.X)

    def test_empty_support_rejected(self):
        cfg = make_cfg(mu0=-8.0, kernel=KernelSpec("diagonal", 1e-4))
        with pytest.raises(ConfigurationError):
            sample_problem(cfg, 3, rng_seed=0)


class TestProblemFile:
    def test_round_trip(self, tmp_path):
        prob, truth = sample_problem(make_cfg(mu0=0.5), 4, rng_seed=3)
        path = tmp_path / "p.txt"
        write_problem(path, prob, truth)
        assert path.read_text().splitlines()[0] == (
            f"# stss-mmv v1 4 6 5 {prob.noise_var:.17g}")
        p2, t2 = read_problem(path)
        np.testing.assert_array_equal(p2.A, prob.A)
        np.testing.assert_array_equal(p2.Y, prob.Y)
        assert p2.noise_var == prob.noise_var
        np.testing.assert_array_equal(t2.X, truth.X)
        np.testing.assert_array_equal(t2.Z, truth.Z)
        np.testing.assert_array_equal(t2.Gamma, truth.Gamma)

    def test_without_truth(self, tmp_path):
        prob = MmvProblem(np.eye(2), np.ones((2, 3)), 0.5)
        path = tmp_path / "p.txt"
        write_problem(path, prob)
        p2, t2 = read_problem(path)
        assert t2 is None
        np.testing.assert_array_equal(p2.Y, prob.Y)

    @pytest.mark.parametrize("text", ["[A]\n1,2\n", "# other v1 1 2 1 0.5\n[A]\n1,2\n[Y]\n1\n",
                                      "# stss-mmv v1 1 2 1 0.5\n[A]\n1,2,3\n[Y]\n1\n",
                                      "# stss-mmv v1 1 2 1 0.5\n[A]\n1,2\n"])
    def test_malformed(self, tmp_path, text):
        path = tmp_path / "bad.txt"
        path.write_text(text)
        with pytest.raises(ConfigurationError):
            read_problem(path)


def test_mmv_problem_checks_dimensions():
    with pytest.raises(ConfigurationError):
        MmvProblem(np.ones((3, 2)), np.ones((4, 1)), 1.0)
    with pytest.raises(ConfigurationError):
        MmvProblem(np.ones((3, 2)), np.ones((3, 1)), 0.0)


def test_ground_truth_fields():
    g = GroundTruth(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((1, 2)))
    assert g.X.shape == (2, 2)
