"""Shared model factories and oracles for the test suite."""

import numpy as np

from monoflow.flow import FlowModel
from monoflow.kernels import SQUARED_EXPONENTIAL, KernelParams
from monoflow.linalg import JITTER_REL


def grid_z(n_inducing, lo, hi, flow_time):
    g = int(np.ceil(np.sqrt(n_inducing)))
    s_ax = np.linspace(lo, hi, g)
    t_ax = np.linspace(0.0, flow_time, g)
    pts = np.array([[s, t] for s in s_ax for t in t_ax])
    return pts[:n_inducing]


def identity_model(n_inducing=9, flow_time=1.0, noise_variance=1.0,
                   n_steps=20):
    """A flow whose drift and diffusion are numerically zero: x -> x."""
    return FlowModel(
        kernel=KernelParams(variant=SQUARED_EXPONENTIAL, signal_variance=1e-30,
                            lengthscales=np.array([2.0, 1.0])),
        z=grid_z(n_inducing, 0.0, 4.0, flow_time),
        m=np.zeros(n_inducing),
        s_factor=1e-16 * np.eye(n_inducing),
        noise_variance=noise_variance,
        flow_time=flow_time,
        n_steps=n_steps,
    )


def random_model(rng, n_inducing=6, flow_time=1.0, n_steps=5,
                 variant=SQUARED_EXPONENTIAL, x_range=(0.0, 4.0),
                 m_scale=0.8, s_scale=0.15):
    """A smooth random flow model with moderate drift and diffusion.

    Inducing inputs sit on a jittered grid so K_zz stays well conditioned:
    clustered inducing points produce unboundedly steep drift fields, which
    no fixed solver step resolves.
    """
    z = grid_z(n_inducing, x_range[0], x_range[1], flow_time)
    z = z + 0.05 * rng.standard_normal(z.shape)
    z[:, 1] = np.clip(z[:, 1], 0.0, flow_time)
    s = s_scale * np.tril(rng.normal(size=(n_inducing, n_inducing))) * 0.3
    s[np.diag_indices_from(s)] = s_scale * (0.5 + rng.uniform(size=n_inducing))
    return FlowModel(
        kernel=KernelParams(
            variant=variant,
            signal_variance=float(rng.uniform(0.3, 1.2)),
            lengthscales=np.array([rng.uniform(1.5, 3.0),
                                   rng.uniform(0.8, 2.0)])),
        z=z,
        m=m_scale * rng.normal(size=n_inducing),
        s_factor=s,
        noise_variance=float(rng.uniform(0.05, 1.0)),
        flow_time=flow_time,
        n_steps=n_steps,
    )


def fd_suite_instance(rng, variant=SQUARED_EXPONENTIAL, fixed_shapes=False):
    """A small, well-conditioned instance for finite-difference checks.

    Central differences at h=1e-5 are only meaningful when the step
    covariance stays far from singular (the factor has sqrt-like curvature
    at the singular boundary), so particles are spread by about a
    lengthscale and the kernel is kept short-range.  ``fixed_shapes`` pins
    the dimensions so repeated instances share one compiled graph.
    """
    if fixed_shapes:
        n_inducing, n_steps, n = 4, 4, 5
    else:
        n_inducing = int(rng.integers(3, 6))
        n_steps = int(rng.integers(2, 6))
        n = int(rng.integers(4, 7))
    x = np.linspace(0.2, 3.8, n) + 0.1 * rng.standard_normal(n)
    model = FlowModel(
        kernel=KernelParams(variant=variant,
                            signal_variance=float(rng.uniform(0.5, 1.5)),
                            lengthscales=np.array([rng.uniform(0.6, 1.0),
                                                   rng.uniform(0.7, 1.2)])),
        z=grid_z(n_inducing, 0.0, 4.0, 1.0),
        m=0.5 * rng.standard_normal(n_inducing),
        s_factor=np.diag(0.2 + 0.2 * rng.uniform(size=n_inducing)),
        noise_variance=float(rng.uniform(0.2, 0.8)),
        flow_time=1.0, n_steps=n_steps)
    y = rng.normal(size=n)
    return model, np.sort(x), y


def dense_flow_field_oracle(model, u, positions, time):
    """flow_field by explicit matrix inverse (same recorded policy jitter)."""
    from monoflow.kernels import kernel_matrix

    pts = np.column_stack([positions, np.full_like(positions, time)])
    kzz = kernel_matrix(model.kernel, model.z, model.z)
    jitter = JITTER_REL * float(np.mean(np.diag(kzz)))
    kzz_inv = np.linalg.inv(kzz + jitter * np.eye(len(kzz)))
    kxz = kernel_matrix(model.kernel, pts, model.z)
    kxx = kernel_matrix(model.kernel, pts, pts)
    drift = kxz @ kzz_inv @ u
    cov = kxx - kxz @ kzz_inv @ kxz.T
    cov = 0.5 * (cov + cov.T)
    d = np.diag(cov).copy()
    np.fill_diagonal(cov, np.maximum(d, 0.0))
    return drift, cov


def batched_elbo_oracle(model, data, n_total, seed, batch=20_000):
    """Independent Monte-Carlo ELBO oracle (dense inverses, batched draws).

    Returns (estimate, standard_error).  Everything is vectorized over
    draws with explicit matrix inverses, sharing no code with the package's
    solver beyond the kernel formulas.
    """
    from monoflow.kernels import kernel_matrix

    rng = np.random.default_rng(seed)
    x, y = data.x, data.y
    n = x.size
    m_dim = model.n_inducing
    kzz = kernel_matrix(model.kernel, model.z, model.z)
    jitter = JITTER_REL * float(np.mean(np.diag(kzz)))
    kzz_inv = np.linalg.inv(kzz + jitter * np.eye(m_dim))
    s_cov = model.s_factor @ model.s_factor.T
    dt = model.flow_time / model.n_steps
    nv = model.noise_variance

    # KL by dense formula
    sign, logdet_k = np.linalg.slogdet(kzz + jitter * np.eye(m_dim))
    sign_s, logdet_s = np.linalg.slogdet(s_cov)
    kl = 0.5 * (np.trace(kzz_inv @ s_cov) + model.m @ kzz_inv @ model.m
                - m_dim + logdet_k - logdet_s)

    logliks = np.empty(n_total)
    done = 0
    while done < n_total:
        b = min(batch, n_total - done)
        u = model.m + rng.standard_normal((b, m_dim)) @ model.s_factor.T
        alpha = u @ kzz_inv.T                           # (b, M)
        xs = np.broadcast_to(x, (b, n)).copy()
        for k in range(model.n_steps):
            t = k * dt
            pts = np.stack([xs, np.full_like(xs, t)], axis=-1)  # (b, n, 2)
            diff_z = (pts[:, :, None, :] - model.z[None, None, :, :]) \
                / model.kernel.lengthscales
            r2 = np.sum(diff_z ** 2, axis=-1)
            kxz = model.kernel.signal_variance * np.exp(-0.5 * r2)
            diff_x = (xs[:, :, None] - xs[:, None, :]) \
                / model.kernel.lengthscales[0]
            kxx = model.kernel.signal_variance * np.exp(-0.5 * diff_x ** 2)
            drift = np.einsum("bnm,bm->bn", kxz, alpha)
            cov = kxx - np.einsum("bnm,mk,bjk->bnj", kxz, kzz_inv, kxz)
            cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
            w, vecs = np.linalg.eigh(cov)
            factor = vecs * np.sqrt(np.maximum(w, 0.0))[:, None, :]
            eps = rng.standard_normal((b, n))
            xs = xs + drift * dt + np.einsum("bnj,bj->bn", factor, eps) * np.sqrt(dt)
        resid = y[None, :] - xs
        logliks[done:done + b] = np.sum(
            -0.5 * np.log(2 * np.pi * nv) - resid ** 2 / (2 * nv), axis=1)
        done += b
    est = float(np.mean(logliks) - kl)
    se = float(np.std(logliks, ddof=1) / np.sqrt(n_total))
    return est, se
