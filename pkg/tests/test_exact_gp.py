"""Exact-GP baseline: predictive equations against a dense oracle and
ML-II fitting behavior."""

import numpy as np
import pytest

from monoflow.data import Dataset
from monoflow.exact_gp import (ExactGPModel, exact_gp_fit, exact_gp_predict,
                               log_marginal_likelihood)
from monoflow.kernels import SQUARED_EXPONENTIAL, KernelParams, kernel_matrix, \
    lift_to_space_time
from monoflow.train import OptimizerConfig


def _model(sv=1.0, ls=1.0, nv=0.1, x=None, y=None):
    return ExactGPModel(
        kernel=KernelParams(SQUARED_EXPONENTIAL, sv, np.array([ls, 1.0])),
        noise_variance=nv, x_train=x, y_train=y)


class TestPredict:
    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(0)
        x = np.sort(rng.uniform(0, 5, 5))
        y = rng.normal(size=5)
        model = _model(sv=1.3, ls=0.9, nv=0.2, x=x, y=y)
        x_star = np.linspace(-1, 6, 9)
        mean, var = exact_gp_predict(model, x_star)

        k = kernel_matrix(model.kernel, lift_to_space_time(x),
                          lift_to_space_time(x))
        jitter = 1e-6 * float(np.mean(np.diag(k)) + model.noise_variance)
        k_noisy = k + (model.noise_variance + jitter) * np.eye(5)
        ks = kernel_matrix(model.kernel, lift_to_space_time(x_star),
                           lift_to_space_time(x))
        mean_o = ks @ np.linalg.inv(k_noisy) @ y
        var_o = model.kernel.signal_variance - np.einsum(
            "ij,jk,ik->i", ks, np.linalg.inv(k_noisy), ks)
        np.testing.assert_allclose(mean, mean_o, atol=1e-8)
        np.testing.assert_allclose(var, np.maximum(var_o, 0), atol=1e-8)

    def test_interpolates_with_tiny_noise(self):
        rng = np.random.default_rng(1)
        x = np.linspace(0, 4, 8)
        y = np.sin(x)
        model = _model(nv=1e-10, x=x, y=y)
        mean, _ = exact_gp_predict(model, x)
        np.testing.assert_allclose(mean, y, atol=1e-3)

    def test_reverts_to_prior_far_from_data(self):
        model = _model(sv=2.0, x=np.array([0.0, 1.0]), y=np.array([0.3, -0.2]))
        _, var = exact_gp_predict(model, np.array([100.0]))
        np.testing.assert_allclose(var[0], 2.0, rtol=1e-6)
        assert np.all(var >= 0)

    def test_unfitted_model_rejected(self):
        with pytest.raises(ValueError):
            exact_gp_predict(_model(), np.array([1.0]))


class TestFit:
    def test_recovers_small_noise(self):
        rng = np.random.default_rng(2)
        x = np.linspace(0, 5, 40)
        k = kernel_matrix(_model().kernel, lift_to_space_time(x),
                          lift_to_space_time(x))
        f = np.linalg.cholesky(k + 1e-10 * np.eye(40)) @ rng.standard_normal(40)
        true_nv = 2.5e-3
        y = f + np.sqrt(true_nv) * rng.standard_normal(40)
        init = _model(nv=0.5)
        cfg = OptimizerConfig(max_iters=400, plateau_patience=80, seed=0)
        fitted = exact_gp_fit(Dataset(x=x, y=y), init, cfg)
        assert fitted.noise_variance < 10 * true_nv

    def test_constant_target_absorbed(self):
        x = np.linspace(0, 5, 10)
        y = np.full(10, 2.7)
        init = _model(nv=0.5)
        cfg = OptimizerConfig(max_iters=300, plateau_patience=60, seed=0)
        fitted = exact_gp_fit(Dataset(x=x, y=y), init, cfg)
        mean, _ = exact_gp_predict(fitted, x)
        np.testing.assert_allclose(mean, y, atol=0.05)
        assert fitted.noise_variance < 0.05

    def test_log_marginal_does_not_decrease(self):
        rng = np.random.default_rng(3)
        x = np.linspace(0, 5, 25)
        y = 0.5 * x + rng.normal(size=25)
        init = _model(sv=0.5, ls=2.5, nv=1.5)
        data = Dataset(x=x, y=y)
        cfg = OptimizerConfig(max_iters=200, plateau_patience=50, seed=1)
        fitted = exact_gp_fit(data, init, cfg)
        assert log_marginal_likelihood(fitted, data) >= \
            log_marginal_likelihood(init, data) - 1e-9

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            exact_gp_fit(Dataset(x=np.array([1.0]), y=np.array([0.0])),
                         _model(), OptimizerConfig(max_iters=10))
