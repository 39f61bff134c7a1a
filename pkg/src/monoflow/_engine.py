"""Differentiable core for training: reparameterized Monte-Carlo ELBO with
reverse-mode gradients through the unrolled Euler-Maruyama solver, plus a
jitted Adam loop with a plateau learning-rate schedule.

Public modules (`train`, `exact_gp`) wrap these functions; nothing here is
part of the package API.  The training loop optionally runs in float32 (the
jitter floors scale with the dtype's rounding noise); the standalone ELBO
and gradient entry points are always float64.
"""

from __future__ import annotations

import math
from functools import partial

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp
import jax.scipy.linalg as jsl
import numpy as np
from jax import lax

from .kernels import _R2_FLOOR, _SQRT3, gram
from .linalg import JITTER_REL

# The training solver factors the step covariance with a smooth additive
# jitter (differentiable, unlike the exact eigendecomposition root used by
# the sampling path).  The posterior covariance of N near-collinear points
# is PSD only up to rounding at ~N*eps*signal_variance, so the floors track
# the dtype's epsilon; the absolute floor keeps the factor defined at zero
# field variance.
STEP_JITTER_REL = 1e-10
_STEP_JITTER_SV = {jnp.dtype("float64"): 1e-12, jnp.dtype("float32"): 3e-5}
_KZZ_JITTER_REL = {jnp.dtype("float64"): JITTER_REL, jnp.dtype("float32"): 2e-5}
_STEP_JITTER_ABS = 1e-18

_ADAM_B1 = 0.9
_ADAM_B2 = 0.999
_ADAM_EPS = 1e-8
_LR_FLOOR = 1e-6
_MAX_NONFINITE = 20

PARAM_KEYS = ("m", "s_lo", "s_logd", "z", "log_sv", "log_ls", "log_nv")


# ---------------------------------------------------------------------------
# Parameterization: FlowModel <-> unconstrained pytree
# ---------------------------------------------------------------------------

def model_to_params(model) -> dict:
    s = model.s_factor
    return {
        "m": jnp.asarray(model.m),
        "s_lo": jnp.asarray(np.tril(s, -1)),
        "s_logd": jnp.log(jnp.asarray(np.diag(s))),
        "z": jnp.asarray(model.z),
        "log_sv": jnp.log(jnp.asarray(model.kernel.signal_variance)),
        "log_ls": jnp.log(jnp.asarray(model.kernel.lengthscales)),
        "log_nv": jnp.log(jnp.asarray(model.noise_variance)),
    }


def params_to_model(params: dict, template):
    from .flow import FlowModel
    from .kernels import KernelParams

    s_lo = np.asarray(params["s_lo"], dtype=float)
    s = np.tril(s_lo, -1) + np.diag(np.exp(np.asarray(params["s_logd"],
                                                      dtype=float)))
    kernel = KernelParams(
        variant=template.kernel.variant,
        signal_variance=float(np.exp(params["log_sv"])),
        lengthscales=np.exp(np.asarray(params["log_ls"], dtype=float)),
    )
    z = np.asarray(params["z"], dtype=float).copy()
    # Guard against round-off pushing projected time coords outside [0, T].
    z[:, 1] = np.clip(z[:, 1], 0.0, template.flow_time)
    return FlowModel(
        kernel=kernel, z=z, m=np.asarray(params["m"], dtype=float),
        s_factor=s, noise_variance=float(np.exp(params["log_nv"])),
        flow_time=template.flow_time, n_steps=template.n_steps,
        seed=template.seed,
    )


def _s_factor(params):
    return jnp.tril(params["s_lo"], -1) + jnp.diag(jnp.exp(params["s_logd"]))


# ---------------------------------------------------------------------------
# Differentiable ELBO
# ---------------------------------------------------------------------------

def _apply_stationary(variant, sv, r2):
    """Kernel profile as a function of squared scaled distance."""
    if variant == "se":
        return sv * jnp.exp(-0.5 * r2)
    r = jnp.sqrt(jnp.maximum(r2, _R2_FLOOR))
    return sv * (1.0 + _SQRT3 * r) * jnp.exp(-_SQRT3 * r)


def _terminal_states(params, x, eps_u, eps_s, flow_time, variant, n_steps):
    """Terminal positions for each coherent draw (vmapped over draws).

    Within a step every particle shares the time coordinate, so the
    particle-particle gram depends on 1-D space distances only and the
    particle-inducing gram separates into space and time parts.
    """
    dtype = x.dtype
    sv = jnp.exp(params["log_sv"])
    ls = jnp.exp(params["log_ls"])
    z = params["z"]
    m_vec = params["m"]
    s_f = _s_factor(params)
    n_inducing = z.shape[0]
    kzz = gram(jnp, variant, sv, ls, z, z)
    lzz = jnp.linalg.cholesky(
        kzz + (_KZZ_JITTER_REL[dtype] * sv) * jnp.eye(n_inducing, dtype=dtype))
    dt = flow_time / n_steps
    sqrt_dt = jnp.sqrt(dt)
    n = x.shape[0]
    eye_n = jnp.eye(n, dtype=dtype)
    z_space = z[:, 0] / ls[0]
    z_time = z[:, 1] / ls[1]
    step_jitter_sv = _STEP_JITTER_SV[dtype]

    def one_draw(eu, es):
        u = m_vec + s_f @ eu
        alpha = jsl.cho_solve((lzz, True), u)
        xs = x
        for k in range(n_steps):
            t = k * dt
            xs_sc = xs / ls[0]
            d_xx = xs_sc[:, None] - xs_sc[None, :]
            kxx = _apply_stationary(variant, sv, d_xx * d_xx)
            d_xz = xs_sc[:, None] - z_space[None, :]
            d_tz = t / ls[1] - z_time
            kxz = _apply_stationary(variant, sv,
                                    d_xz * d_xz + (d_tz * d_tz)[None, :])
            drift = kxz @ alpha
            v = jsl.solve_triangular(lzz, kxz.T, lower=True)
            cov = kxx - v.T @ v
            cov = 0.5 * (cov + cov.T)
            diag = jnp.diag(cov)
            cov = cov + jnp.diag(jnp.maximum(-diag, 0.0))
            jitter = (STEP_JITTER_REL * jnp.mean(jnp.diag(cov))
                      + step_jitter_sv * sv + _STEP_JITTER_ABS)
            l_cov = jnp.linalg.cholesky(cov + jitter * eye_n)
            xs = xs + drift * dt + (l_cov @ es[k]) * sqrt_dt
        return xs

    return jax.vmap(one_draw)(eps_u, eps_s), lzz


def _draw_logliks(params, x, y, eps_u, eps_s, flow_time, variant, n_steps):
    """Per-draw data log-likelihood at the terminal states, plus the KL."""
    terminals, lzz = _terminal_states(params, x, eps_u, eps_s, flow_time,
                                      variant, n_steps)
    nv = jnp.exp(params["log_nv"])
    resid = y[None, :] - terminals
    logliks = jnp.sum(
        -0.5 * jnp.log(2.0 * jnp.pi * nv) - resid * resid / (2.0 * nv), axis=1)
    s_f = _s_factor(params)
    a = jsl.solve_triangular(lzz, s_f, lower=True)
    b = jsl.solve_triangular(lzz, params["m"], lower=True)
    m_dim = params["m"].shape[0]
    kl = (0.5 * (jnp.sum(a * a) + jnp.sum(b * b) - m_dim)
          + jnp.sum(jnp.log(jnp.diag(lzz))) - jnp.sum(params["s_logd"]))
    return logliks, kl


def elbo_parts(params, x, y, eps_u, eps_s, flow_time, *, variant, n_steps):
    """Monte-Carlo ELBO estimate; returns (elbo, expected_loglik, kl)."""
    logliks, kl = _draw_logliks(params, x, y, eps_u, eps_s, flow_time,
                                variant, n_steps)
    expected_loglik = jnp.mean(logliks)
    return expected_loglik - kl, expected_loglik, kl


@partial(jax.jit, static_argnames=("variant", "n_steps"))
def elbo_jit(params, x, y, eps_u, eps_s, flow_time, variant, n_steps):
    return elbo_parts(params, x, y, eps_u, eps_s, flow_time,
                      variant=variant, n_steps=n_steps)


def _elbo_only(params, x, y, eps_u, eps_s, flow_time, variant, n_steps):
    return elbo_parts(params, x, y, eps_u, eps_s, flow_time,
                      variant=variant, n_steps=n_steps)[0]


@partial(jax.jit, static_argnames=("variant", "n_steps"))
def elbo_grad_jit(params, x, y, eps_u, eps_s, flow_time, variant, n_steps):
    return jax.value_and_grad(_elbo_only)(
        params, x, y, eps_u, eps_s, flow_time, variant, n_steps)


# ---------------------------------------------------------------------------
# Adam with plateau schedule (maximization), shared by flow and exact-GP fits
# ---------------------------------------------------------------------------

def init_carry(params, lr0):
    # Scalar dtypes must exactly match what the scan body produces, or every
    # chunk call after the first retraces (and recompiles) the whole loop.
    return {
        "params": params,
        "adam_m": jax.tree_util.tree_map(jnp.zeros_like, params),
        "adam_v": jax.tree_util.tree_map(jnp.zeros_like, params),
        "adam_t": jnp.zeros((), jnp.int32),
        "lr": jnp.asarray(float(lr0), jnp.float64),
        "best_val": jnp.asarray(-jnp.inf, jnp.float64),
        "best_params": params,
        "patience": jnp.zeros((), jnp.int32),
        "nonfinite": jnp.zeros((), jnp.int32),
        "n_drops": jnp.zeros((), jnp.int32),
        "done": jnp.zeros((), jnp.bool_),
        "failed": jnp.zeros((), jnp.bool_),
    }


def _adam_plateau_body(vg_fn, project, decay, patience_limit, it_limit):
    """One ascent step plus schedule bookkeeping.

    ``vg_fn(params, it) -> (train_value, val_value, grads)``; the validation
    value is evaluated with fixed randomness so the plateau criterion and
    best-parameter selection are de-noised.  Parameters are judged *before*
    their update, so the initial parameters are always a candidate.
    Iterations at ``it >= it_limit`` are skipped entirely (chunks have a
    fixed compiled length; the limit masks the padding).
    """
    tree_map = jax.tree_util.tree_map

    def body(carry, it):
        active = ~carry["done"] & (it < it_limit)

        def run(params):
            return vg_fn(params, it)

        def skip(params):
            zeros = tree_map(jnp.zeros_like, params)
            nan = jnp.asarray(jnp.nan,
                              jax.tree_util.tree_leaves(params)[0].dtype)
            return nan, nan, zeros

        value, val, grads = lax.cond(active, run, skip, carry["params"])
        grads_finite = jnp.array(
            [jnp.all(jnp.isfinite(g)) for g in jax.tree_util.tree_leaves(grads)]
        ).all()
        apply_update = active & jnp.isfinite(value) & grads_finite

        improved = active & jnp.isfinite(val) & (val > carry["best_val"])
        best_val = jnp.where(improved, val, carry["best_val"])
        best_params = tree_map(
            lambda a, b: jnp.where(improved, a, b),
            carry["params"], carry["best_params"])
        patience = jnp.where(improved, jnp.int32(0),
                             carry["patience"] + jnp.where(active, 1, 0))
        drop = active & (patience >= patience_limit)
        lr = jnp.where(drop, carry["lr"] * decay, carry["lr"])
        patience = jnp.where(drop, jnp.int32(0), patience)
        n_drops = carry["n_drops"] + jnp.where(drop, 1, 0)

        t_next = carry["adam_t"] + jnp.where(apply_update, 1, 0)
        b1t = 1.0 - _ADAM_B1 ** t_next
        b2t = 1.0 - _ADAM_B2 ** t_next
        adam_m_new = tree_map(lambda m, g: _ADAM_B1 * m + (1.0 - _ADAM_B1) * g,
                              carry["adam_m"], grads)
        adam_v_new = tree_map(lambda v, g: _ADAM_B2 * v + (1.0 - _ADAM_B2) * g * g,
                              carry["adam_v"], grads)
        params_new = tree_map(
            lambda p, m, v: p + carry["lr"].astype(p.dtype)
            * (m / b1t.astype(p.dtype))
            / (jnp.sqrt(v / b2t.astype(p.dtype)) + _ADAM_EPS),
            carry["params"], adam_m_new, adam_v_new)
        params_new = project(params_new)

        def keep_or(new, old):
            return tree_map(lambda a, b: jnp.where(apply_update, a, b), new, old)

        nonfinite = jnp.where(jnp.isfinite(value) | ~active, jnp.int32(0),
                              carry["nonfinite"] + 1)
        failed = carry["failed"] | (nonfinite > _MAX_NONFINITE)
        done = carry["done"] | (lr < _LR_FLOOR) | failed

        new_carry = {
            "params": keep_or(params_new, carry["params"]),
            "adam_m": keep_or(adam_m_new, carry["adam_m"]),
            "adam_v": keep_or(adam_v_new, carry["adam_v"]),
            "adam_t": t_next, "lr": lr, "best_val": best_val,
            "best_params": best_params, "patience": patience,
            "nonfinite": nonfinite, "n_drops": n_drops,
            "done": done, "failed": failed,
        }
        return new_carry, (value, carry["lr"], done | ~active)

    return body


def _project_z_time(flow_time):
    def project(params):
        z = params["z"]
        z = z.at[:, 1].set(jnp.clip(z[:, 1], 0.0, flow_time))
        return {**params, "z": z}
    return project


@partial(jax.jit, static_argnames=("variant", "n_steps", "n_samples", "chunk_len"))
def flow_fit_chunk(carry, it0, it_limit, x, y, flow_time, train_key,
                   val_eps_u, val_eps_s, decay, patience_limit,
                   variant, n_steps, n_samples, chunk_len):
    """Scan ``chunk_len`` iterations.  The fixed validation draws ride along
    the batched forward pass; only the training draws are differentiated."""
    n = x.shape[0]
    m_dim = carry["params"]["m"].shape[0]
    dtype = x.dtype

    def objective(params, it):
        ku = jax.random.fold_in(train_key, 2 * it)
        ks = jax.random.fold_in(train_key, 2 * it + 1)
        eps_u = jnp.concatenate(
            [jax.random.normal(ku, (n_samples, m_dim), dtype), val_eps_u])
        eps_s = jnp.concatenate(
            [jax.random.normal(ks, (n_samples, n_steps, n), dtype), val_eps_s])
        logliks, kl = _draw_logliks(params, x, y, eps_u, eps_s, flow_time,
                                    variant, n_steps)
        train_elbo = jnp.mean(logliks[:n_samples]) - kl
        val_elbo = jnp.mean(logliks[n_samples:]) - kl
        return train_elbo, val_elbo

    def vg_fn(params, it):
        (value, val), grads = jax.value_and_grad(objective, has_aux=True)(
            params, it)
        return value, val, grads

    body = _adam_plateau_body(vg_fn, _project_z_time(flow_time),
                              decay, patience_limit, it_limit)
    return lax.scan(body, carry, it0 + jnp.arange(chunk_len))


# ---------------------------------------------------------------------------
# Exact-GP marginal likelihood (1-D inputs, first lengthscale only)
# ---------------------------------------------------------------------------

def gp_log_marginal(params, x_pts, y, *, variant):
    sv = jnp.exp(params["log_sv"])
    ls = jnp.stack([jnp.exp(params["log_ls0"]), jnp.asarray(1.0)])
    nv = jnp.exp(params["log_nv"])
    n = y.shape[0]
    k = gram(jnp, variant, sv, ls, x_pts, x_pts)
    k = k + (nv + 1e-10 * sv) * jnp.eye(n)
    l = jnp.linalg.cholesky(k)
    alpha = jsl.cho_solve((l, True), y)
    return (-0.5 * jnp.dot(y, alpha) - jnp.sum(jnp.log(jnp.diag(l)))
            - 0.5 * n * math.log(2.0 * math.pi))


@partial(jax.jit, static_argnames=("variant", "chunk_len"))
def gp_fit_chunk(carry, it0, it_limit, x_pts, y, decay, patience_limit,
                 variant, chunk_len):
    def vg_fn(params, it):
        del it
        value, grads = jax.value_and_grad(gp_log_marginal)(params, x_pts, y,
                                                           variant=variant)
        return value, value, grads

    body = _adam_plateau_body(vg_fn, lambda p: p, decay, patience_limit,
                              it_limit)
    return lax.scan(body, carry, it0 + jnp.arange(chunk_len))


# ---------------------------------------------------------------------------
# Host-side chunked driver
# ---------------------------------------------------------------------------

def run_chunks(carry, run_one_chunk, max_iters, chunk_size=100, callback=None):
    """Drive a jitted fit in fixed-length chunks, assembling the trace.

    Chunks always have the compiled length ``chunk_size``; iterations past
    ``max_iters`` are masked inside the scan so no shape ever recompiles.
    ``run_one_chunk(carry, it0, chunk_len) -> (carry, (values, lrs, stops))``.
    Returns (carry, values, lrs, cumulative_wall, iterations_used).
    """
    import time

    values, lrs, walls = [], [], []
    it0 = 0
    used = 0
    while it0 < max_iters:
        t0 = time.perf_counter()
        carry, (v, lr, stop) = run_one_chunk(carry, it0, chunk_size)
        v = np.asarray(v)
        lr = np.asarray(lr)
        stop = np.asarray(stop)
        elapsed = time.perf_counter() - t0
        values.append(v)
        lrs.append(lr)
        walls.append(np.full(chunk_size, elapsed / chunk_size))
        it0 += chunk_size
        if stop.any():
            used = it0 - chunk_size + int(np.argmax(stop)) + 1
            break
        used = it0
        if callback is not None and it0 < max_iters:
            callback(it0, carry)
    used = min(used, max_iters)
    values = np.concatenate(values)[:used]
    lrs = np.concatenate(lrs)[:used]
    walls = np.concatenate(walls)[:used]
    return carry, values, lrs, np.cumsum(walls), used
