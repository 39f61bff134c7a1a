"""Exact-GP regression baseline (ML-II hyperparameters, dense solves).

Uses the same Adam/plateau engine as the flow, with random restarts.  Inputs
are 1-D; the shared 2-D kernels are evaluated with the time coordinate fixed
at zero, so only the first lengthscale matters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _engine
from .data import Dataset
from .errors import TrainingError
from .kernels import KernelParams, kernel_matrix, lift_to_space_time
from .linalg import policy_cholesky
from .train import OptimizerConfig


@dataclass(frozen=True)
class ExactGPModel:
    """Zero-mean exact GP with Gaussian noise; 1-D inputs."""

    kernel: KernelParams
    noise_variance: float
    x_train: np.ndarray | None = None
    y_train: np.ndarray | None = None

    def __post_init__(self):
        if not (self.noise_variance > 0 and np.isfinite(self.noise_variance)):
            raise ValueError("noise_variance must be positive")


def log_marginal_likelihood(model: ExactGPModel, data: Dataset) -> float:
    """Exact log marginal likelihood of the data under the model."""
    pts = lift_to_space_time(data.x)
    k = kernel_matrix(model.kernel, pts, pts)
    k[np.diag_indices_from(k)] += model.noise_variance
    factor = policy_cholesky(k)
    alpha = factor.solve(data.y)
    return (-0.5 * float(data.y @ alpha) - 0.5 * factor.log_det()
            - 0.5 * len(data) * math.log(2.0 * math.pi))


def exact_gp_fit(data: Dataset, init: ExactGPModel, cfg: OptimizerConfig,
                 n_restarts: int = 3) -> ExactGPModel:
    """ML-II fit by gradient ascent on the exact log marginal likelihood.

    Runs ``n_restarts`` perturbed initializations and keeps the best; the
    unperturbed initialization is always a candidate, so the returned
    log-marginal is never below the initial one.
    """
    import jax
    import jax.numpy as jnp

    if len(data) < 2:
        raise ValueError("need at least 2 data points")
    x_pts = jnp.asarray(lift_to_space_time(data.x))
    y = jnp.asarray(data.y)
    variant = init.kernel.variant

    base = {
        "log_sv": jnp.log(jnp.asarray(init.kernel.signal_variance)),
        "log_ls0": jnp.log(jnp.asarray(init.kernel.lengthscales[0])),
        "log_nv": jnp.log(jnp.asarray(init.noise_variance)),
    }
    rng = np.random.default_rng(cfg.seed)
    best_val, best_params = -np.inf, None
    for restart in range(max(1, n_restarts)):
        params = base if restart == 0 else {
            k: v + rng.normal(0.0, 0.7) for k, v in base.items()}
        val0 = _engine.gp_log_marginal(params, x_pts, y, variant=variant)
        if not np.isfinite(float(val0)):
            continue
        carry = _engine.init_carry(params, cfg.learning_rate)

        def run_one_chunk(carry, it0, chunk_len):
            return _engine.gp_fit_chunk(carry, it0, cfg.max_iters, x_pts, y,
                                        cfg.decay_factor, cfg.plateau_patience,
                                        variant, chunk_len)

        carry, values, _, _, used = _engine.run_chunks(
            carry, run_one_chunk, cfg.max_iters)
        if bool(carry["failed"]):
            raise TrainingError(f"exact GP fit diverged after {used} iterations")
        if float(carry["best_val"]) > best_val:
            best_val = float(carry["best_val"])
            best_params = jax.tree_util.tree_map(np.asarray, carry["best_params"])

    if best_params is None:
        raise TrainingError("exact GP fit: no finite initialization")
    kernel = KernelParams(
        variant=variant,
        signal_variance=float(np.exp(best_params["log_sv"])),
        lengthscales=np.array([float(np.exp(best_params["log_ls0"])),
                               init.kernel.lengthscales[1]]))
    return ExactGPModel(kernel=kernel,
                        noise_variance=float(np.exp(best_params["log_nv"])),
                        x_train=data.x.copy(), y_train=data.y.copy())


def exact_gp_predict(model: ExactGPModel, x_star) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean and latent variance at new inputs.

    Variance is of the latent function (reverts to the signal variance far
    from data) and is clamped at zero.
    """
    if model.x_train is None or model.y_train is None:
        raise ValueError("model has no training data; fit it first")
    x_star = np.asarray(x_star, dtype=float).ravel()
    pts_train = lift_to_space_time(model.x_train)
    pts_star = lift_to_space_time(x_star)
    k_tt = kernel_matrix(model.kernel, pts_train, pts_train)
    k_tt[np.diag_indices_from(k_tt)] += model.noise_variance
    factor = policy_cholesky(k_tt)
    k_st = kernel_matrix(model.kernel, pts_star, pts_train)
    mean = k_st @ factor.solve(model.y_train)
    v = factor.half_solve(k_st.T)
    var = model.kernel.signal_variance - np.sum(v * v, axis=0)
    return mean, np.maximum(var, 0.0)
