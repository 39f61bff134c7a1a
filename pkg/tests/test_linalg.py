"""Jittered Cholesky, reparameterized sampling, and the Gaussian KL."""

import numpy as np
import pytest

from monoflow.errors import NumericalError
from monoflow.linalg import CholFactor, cholesky, gaussian_kl, mvn_sample


def _random_spd(rng, n, scale=1.0):
    a = rng.normal(size=(n, n))
    return scale * (a @ a.T + n * np.eye(n))


class TestCholesky:
    def test_identity_no_jitter(self):
        f = cholesky(np.eye(3), base_jitter=0.0)
        np.testing.assert_array_equal(f.L, np.eye(3))
        assert f.jitter_applied == 0.0

    def test_textbook_2x2(self):
        f = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]), base_jitter=0.0)
        np.testing.assert_allclose(f.L, [[2.0, 0.0], [1.0, np.sqrt(2.0)]],
                                   rtol=1e-15)

    def test_rank_deficient_escalates(self):
        m = np.array([[1.0, 1.0], [1.0, 1.0]])
        f = cholesky(m, base_jitter=1e-6)
        assert f.jitter_applied >= 1e-6
        recon = f.L @ f.L.T
        target = m + f.jitter_applied * np.eye(2)
        assert np.linalg.norm(recon - target) <= 1e-12

    def test_roundtrip_random_spd(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(1, 30))
            m = _random_spd(rng, n, scale=float(rng.uniform(0.01, 100)))
            base = 1e-6 * np.mean(np.diag(m))
            f = cholesky(m, base_jitter=base)
            err = np.linalg.norm(f.L @ f.L.T - m - f.jitter_applied * np.eye(n))
            assert err / np.linalg.norm(m) < 1e-8
            assert np.all(np.diag(f.L) > 0)

    def test_indefinite_fails_after_max_jitter(self):
        m = np.diag([1.0, -5.0])
        with pytest.raises(NumericalError):
            cholesky(m, base_jitter=1e-6)

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            cholesky(np.array([[1.0, 0.5], [0.0, 1.0]]), base_jitter=0.0)

    def test_nonsquare_rejected(self):
        with pytest.raises(ValueError):
            cholesky(np.ones((2, 3)), base_jitter=0.0)


class TestMvnSample:
    def test_zero_eps_returns_mean(self):
        f = cholesky(_random_spd(np.random.default_rng(0), 4), 0.0)
        mean = np.array([1.0, -2.0, 0.5, 3.0])
        np.testing.assert_array_equal(mvn_sample(mean, f, np.zeros(4)), mean)

    def test_identity_factor_returns_eps(self):
        f = CholFactor(L=np.eye(3), jitter_applied=0.0)
        eps = np.array([0.3, -1.2, 0.7])
        np.testing.assert_array_equal(mvn_sample(np.zeros(3), f, eps), eps)

    def test_deterministic_given_eps(self):
        rng = np.random.default_rng(5)
        f = cholesky(_random_spd(rng, 5), 0.0)
        eps = rng.normal(size=5)
        a = mvn_sample(np.arange(5.0), f, eps)
        b = mvn_sample(np.arange(5.0), f, eps)
        np.testing.assert_array_equal(a, b)

    def test_empirical_covariance_matches(self):
        rng = np.random.default_rng(11)
        cov = _random_spd(rng, 3)
        f = cholesky(cov, 0.0)
        draws = np.array([mvn_sample(np.zeros(3), f, rng.standard_normal(3))
                          for _ in range(100_000)])
        emp = np.cov(draws.T)
        rel = np.linalg.norm(emp - cov) / np.linalg.norm(cov)
        assert rel < 0.05

    def test_dimension_mismatch(self):
        f = CholFactor(L=np.eye(3), jitter_applied=0.0)
        with pytest.raises(ValueError):
            mvn_sample(np.zeros(2), f, np.zeros(3))


def _kl_dense_oracle(m, s, k):
    """KL(N(m,S) || N(0,K)) by explicit inverse and log-determinants."""
    k_inv = np.linalg.inv(k)
    _, logdet_k = np.linalg.slogdet(k)
    _, logdet_s = np.linalg.slogdet(s)
    dim = len(m)
    return 0.5 * (np.trace(k_inv @ s) + m @ k_inv @ m - dim
                  + logdet_k - logdet_s)


class TestGaussianKL:
    def test_identical_distributions_zero(self):
        rng = np.random.default_rng(2)
        k = _random_spd(rng, 6)
        f = cholesky(k, 0.0)
        kl = gaussian_kl(np.zeros(6), f, f)
        assert abs(kl) <= 1e-10

    def test_one_dimensional_closed_form(self):
        one = CholFactor(L=np.eye(1), jitter_applied=0.0)
        kl = gaussian_kl(np.array([1.0]), one, one)
        np.testing.assert_allclose(kl, 0.5, rtol=1e-14)

    def test_matches_dense_oracle_5d(self):
        rng = np.random.default_rng(19)
        k = _random_spd(rng, 5)
        s = _random_spd(rng, 5, scale=0.5)
        m = rng.normal(size=5)
        kl = gaussian_kl(m, cholesky(s, 0.0), cholesky(k, 0.0))
        np.testing.assert_allclose(kl, _kl_dense_oracle(m, s, k), atol=1e-8)

    def test_nonnegative_and_matches_oracle_random(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            dim = int(rng.integers(1, 21))
            k = _random_spd(rng, dim)
            s = _random_spd(rng, dim, scale=float(rng.uniform(0.1, 2)))
            m = rng.normal(size=dim)
            kl = gaussian_kl(m, cholesky(s, 0.0), cholesky(k, 0.0))
            assert kl >= -1e-10
            np.testing.assert_allclose(kl, _kl_dense_oracle(m, s, k),
                                       rtol=1e-8, atol=1e-8)

    def test_dimension_mismatch(self):
        f3 = CholFactor(L=np.eye(3), jitter_applied=0.0)
        f2 = CholFactor(L=np.eye(2), jitter_applied=0.0)
        with pytest.raises(ValueError):
            gaussian_kl(np.zeros(3), f3, f2)
