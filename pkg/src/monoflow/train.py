"""Stochastic variational inference for the flow model.

The objective is a Monte-Carlo estimate of the evidence lower bound: the
expected log-likelihood of the observations at the terminal flow states
(each estimate one coherent draw over all training inputs jointly) minus the
closed-form KL between the variational and prior inducing-output
distributions.  Gradients are exact reparameterized (pathwise) derivatives of
the estimator at fixed randomness, computed by reverse-mode differentiation
through the unrolled solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _engine
from .data import Dataset
from .errors import TrainingError
from .flow import FlowModel
from .kernels import SQUARED_EXPONENTIAL, KernelParams

DEFAULT_DECAY = 1.0 / math.sqrt(10.0)


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam-with-plateau-schedule settings.

    The learning rate is multiplied by ``decay_factor`` whenever the
    best-so-far validation ELBO has not improved for ``plateau_patience``
    iterations; optimization stops at ``max_iters`` or when the learning
    rate falls below 1e-6.
    """

    learning_rate: float = 0.01
    max_iters: int = 10_000
    plateau_patience: int = 500
    decay_factor: float = DEFAULT_DECAY
    n_elbo_samples: int = 3
    seed: int = 0
    precision: str = "float64"

    def __post_init__(self):
        if not (0.0 < self.decay_factor < 1.0):
            raise ValueError("decay_factor must lie in (0, 1)")
        if self.n_elbo_samples < 1:
            raise ValueError("n_elbo_samples must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.precision not in ("float64", "float32"):
            raise ValueError("precision must be 'float64' or 'float32'")


@dataclass(frozen=True)
class TraceRecord:
    """Per-iteration optimization history plus summary statistics."""

    elbo: np.ndarray
    learning_rate: np.ndarray
    wall_time: np.ndarray
    best_val_elbo: float
    iterations: int
    n_lr_drops: int

    def __post_init__(self):
        if not (len(self.elbo) == len(self.learning_rate) == len(self.wall_time)):
            raise ValueError("trace arrays must have equal length")


def _draw_eps(rng, n_samples, n_inducing, n_steps, n_points):
    """Fixed draw order shared by elbo and elbo_grad (common random numbers)."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    eps_u = rng.standard_normal((n_samples, n_inducing))
    eps_s = rng.standard_normal((n_samples, n_steps, n_points))
    return eps_u, eps_s


def elbo(model: FlowModel, data: Dataset, n_samples: int, rng,
         return_terms: bool = False):
    """Monte-Carlo ELBO estimate with ``n_samples`` coherent draws.

    With ``return_terms=True`` also returns the expected log-likelihood and
    the KL term separately.
    """
    if len(data) == 0:
        raise ValueError("data must be nonempty")
    eps_u, eps_s = _draw_eps(rng, n_samples, model.n_inducing,
                             model.n_steps, len(data))
    value, loglik, kl = _engine.elbo_jit(
        _engine.model_to_params(model), data.x, data.y, eps_u, eps_s,
        model.flow_time, model.kernel.variant, model.n_steps)
    if return_terms:
        return float(value), float(loglik), float(kl)
    return float(value)


def elbo_grad(model: FlowModel, data: Dataset, n_samples: int, rng) -> dict:
    """Exact gradient of the MC-ELBO estimator at fixed randomness.

    Returns a dict over the free-parameter blocks: ``m``, ``s_lo`` (strict
    lower triangle of the covariance factor), ``s_logd`` (log-diagonal),
    ``z``, ``log_sv``, ``log_ls``, ``log_nv``.
    """
    if len(data) == 0:
        raise ValueError("data must be nonempty")
    eps_u, eps_s = _draw_eps(rng, n_samples, model.n_inducing,
                             model.n_steps, len(data))
    _, grads = _engine.elbo_grad_jit(
        _engine.model_to_params(model), data.x, data.y, eps_u, eps_s,
        model.flow_time, model.kernel.variant, model.n_steps)
    out = {k: np.asarray(v) for k, v in grads.items()}
    for name, g in out.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter block {name!r}")
    return out


def fit(data: Dataset, init: FlowModel, cfg: OptimizerConfig,
        callback=None, chunk_size: int = 100) -> tuple[FlowModel, TraceRecord]:
    """Maximize the ELBO over all free parameters.

    Returns the best parameters seen, judged by an ELBO evaluated with a
    held-fixed validation randomness, together with the optimization trace.
    ``callback(iteration, model)`` fires at chunk boundaries.
    """
    import jax
    import jax.numpy as jnp

    if len(data) == 0:
        raise ValueError("data must be nonempty")
    dtype = jnp.float64 if cfg.precision == "float64" else jnp.float32
    key = jax.random.PRNGKey(cfg.seed)
    k_train, k_val = jax.random.split(key)
    n = len(data)
    x = jnp.asarray(data.x, dtype)
    y = jnp.asarray(data.y, dtype)
    val_eps_u = jax.random.normal(
        jax.random.fold_in(k_val, 0), (cfg.n_elbo_samples, init.n_inducing),
        dtype)
    val_eps_s = jax.random.normal(
        jax.random.fold_in(k_val, 1), (cfg.n_elbo_samples, init.n_steps, n),
        dtype)

    params0 = jax.tree_util.tree_map(
        lambda a: jnp.asarray(a, dtype), _engine.model_to_params(init))
    carry = _engine.init_carry(params0, cfg.learning_rate)

    def run_one_chunk(carry, it0, chunk_len):
        return _engine.flow_fit_chunk(
            carry, it0, cfg.max_iters, x, y, init.flow_time, k_train,
            val_eps_u, val_eps_s, cfg.decay_factor, cfg.plateau_patience,
            init.kernel.variant, init.n_steps, cfg.n_elbo_samples, chunk_len)

    chunk_callback = None
    if callback is not None:
        def chunk_callback(it, c):
            callback(it, _engine.params_to_model(c["params"], init))

    carry, values, lrs, wall, used = _engine.run_chunks(
        carry, run_one_chunk, cfg.max_iters, chunk_size=chunk_size,
        callback=chunk_callback)

    trace = TraceRecord(
        elbo=values, learning_rate=lrs, wall_time=wall,
        best_val_elbo=float(carry["best_val"]), iterations=used,
        n_lr_drops=int(carry["n_drops"]))
    if bool(carry["failed"]):
        raise TrainingError(
            f"persistent non-finite ELBO after {used} iterations", trace=trace)
    best = _engine.params_to_model(carry["best_params"], init)
    return best, trace


def init_model(data: Dataset, n_inducing: int, flow_time: float,
               kernel_variant: str = SQUARED_EXPONENTIAL, seed: int = 0,
               n_steps: int = 20) -> FlowModel:
    """Default initialization: inducing grid over data-range x [0, T],
    zero variational mean (identity prior flow), small variational factor.
    """
    if n_inducing < 2:
        raise ValueError("n_inducing must be >= 2")
    x, y = data.x, data.y
    lo, hi = float(np.min(x)), float(np.max(x))
    if hi == lo:
        raise ValueError("degenerate data: all x equal")
    z = _boundary_first_grid(lo, hi, flow_time, n_inducing)
    signal_variance = 1.0
    s_factor = 1e-2 * math.sqrt(signal_variance) * np.eye(n_inducing)
    noise_variance = max(0.1 * float(np.var(y)), 1e-8)
    kernel = KernelParams(
        variant=kernel_variant, signal_variance=signal_variance,
        lengthscales=np.array([(hi - lo) / 2.0, flow_time / 2.0]))
    return FlowModel(kernel=kernel, z=z, m=np.zeros(n_inducing),
                     s_factor=s_factor, noise_variance=noise_variance,
                     flow_time=float(flow_time), n_steps=n_steps, seed=seed)


def _boundary_first_grid(lo, hi, flow_time, n_inducing) -> np.ndarray:
    """Tensor grid with ceil(sqrt(M)) points per axis, truncated to M points
    keeping outer rings first so the retained set spans both axes."""
    g = math.ceil(math.sqrt(n_inducing))
    s_ax = np.linspace(lo, hi, g)
    t_ax = np.linspace(0.0, flow_time, g)
    idx = [(min(i, g - 1 - i, j, g - 1 - j), i, j)
           for i in range(g) for j in range(g)]
    idx.sort()
    keep = idx[:n_inducing]
    return np.array([[s_ax[i], t_ax[j]] for _, i, j in keep])
