"""The monotonic flow: sparse flow-GP field evaluation and the joint
Euler-Maruyama sampler.

A coherent draw is one inducing-output sample plus one shared noise vector
per solver step.  Because every particle in a draw moves through the same
realized field, the terminal values preserve the ordering of the initial
conditions; sampling particles independently breaks that guarantee (exposed
here only as a diagnostic mode for tests).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .kernels import KernelParams, kernel_matrix
from .linalg import CholFactor, mvn_sample, policy_cholesky

_TIME_TOL = 1e-12

# Posterior-covariance entries carry absolute rounding error ~eps*sv, so the
# factor cannot resolve relative noise between particles closer than about
# lengthscale*sqrt(eps): below that, discrete gaps are rounding noise (the
# exact dynamics are multiplicative and cannot cross).  Particles that have
# converged below this floor are merged into exact ties after each joint
# noisy step; genuine ordering violations are orders of magnitude larger.
_TIE_SNAP_REL = 1e-6


@dataclass(frozen=True)
class FlowModel:
    """Learnable state of the monotonic flow.

    Fields
    ------
    kernel : KernelParams
        Hyperparameters of the flow GP over (space, time).
    z : ndarray, shape (M, 2)
        Inducing inputs; time coordinates must lie in [0, flow_time].
    m : ndarray, shape (M,)
        Variational mean of the inducing outputs.
    s_factor : ndarray, shape (M, M)
        Lower-triangular factor of the variational covariance; strictly
        positive diagonal.
    noise_variance : float
        Observation noise variance.
    flow_time : float
        Total integration time T.
    n_steps : int
        Euler-Maruyama steps (fixed-step solver).
    seed : int | None
        Seed recorded at initialization; not used by the model itself.
    """

    kernel: KernelParams
    z: np.ndarray
    m: np.ndarray
    s_factor: np.ndarray
    noise_variance: float
    flow_time: float
    n_steps: int = 20
    seed: int | None = None

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        m = np.asarray(self.m, dtype=float)
        s = np.asarray(self.s_factor, dtype=float)
        if z.ndim != 2 or z.shape[1] != 2:
            raise ValueError("z must have shape (M, 2)")
        n_inducing = z.shape[0]
        if m.shape != (n_inducing,):
            raise ValueError("m must have shape (M,)")
        if s.shape != (n_inducing, n_inducing):
            raise ValueError("s_factor must have shape (M, M)")
        if np.any(np.triu(s, 1) != 0.0):
            raise ValueError("s_factor must be lower triangular")
        if np.any(np.diag(s) <= 0.0):
            raise ValueError("s_factor diagonal must be strictly positive")
        if not (self.flow_time > 0 and np.isfinite(self.flow_time)):
            raise ValueError("flow_time must be positive")
        if not (self.noise_variance > 0 and np.isfinite(self.noise_variance)):
            raise ValueError("noise_variance must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if np.any(z[:, 1] < -_TIME_TOL) or np.any(z[:, 1] > self.flow_time + _TIME_TOL):
            raise ValueError("inducing time coordinates must lie in [0, flow_time]")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "s_factor", s)
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        object.__setattr__(self, "flow_time", float(self.flow_time))

    @property
    def n_inducing(self) -> int:
        return self.z.shape[0]

    def s_chol(self) -> CholFactor:
        """The variational covariance factor as a CholFactor (no jitter)."""
        return CholFactor(L=self.s_factor, jitter_applied=0.0)


@dataclass(frozen=True)
class ParticleState:
    """Positions of the N particles at a common time in [0, T]."""

    positions: np.ndarray
    time: float

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=float).ravel()
        if not np.all(np.isfinite(positions)):
            raise ValueError("particle positions must be finite")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "time", float(self.time))


@dataclass(frozen=True)
class FlowSample:
    """One coherent draw: full trajectory plus the randomness that made it."""

    trajectory: np.ndarray          # (n_steps + 1, N)
    terminal: np.ndarray            # (N,)
    u_draw: np.ndarray              # (M,)
    eps_record: np.ndarray          # (n_steps, N)


@dataclass(frozen=True)
class FlowPrediction:
    """Posterior predictive summary from terminal flow samples."""

    mean: np.ndarray
    lower: np.ndarray               # empirical 2.5% quantile
    upper: np.ndarray               # empirical 97.5% quantile
    samples: np.ndarray             # (n_samples, N)


def flow_field(model: FlowModel, u, state: ParticleState):
    """Drift vector and joint covariance of the flow GP at the current state.

    drift = K_xz K_zz^-1 u, cov = K_xx - K_xz K_zz^-1 K_zx, evaluated at the
    spatio-temporal points (position_i, time).  cov is symmetrized and its
    diagonal clamped at >= 0.
    """
    u = np.asarray(u, dtype=float).ravel()
    if u.shape != (model.n_inducing,):
        raise ValueError(f"u must have shape ({model.n_inducing},)")
    if state.time < -_TIME_TOL or state.time > model.flow_time + _TIME_TOL:
        raise ValueError("state.time must lie in [0, flow_time]")
    pts = np.column_stack([state.positions,
                           np.full_like(state.positions, state.time)])
    kzz = kernel_matrix(model.kernel, model.z, model.z)
    czz = policy_cholesky(kzz)
    kxz = kernel_matrix(model.kernel, pts, model.z)
    kxx = kernel_matrix(model.kernel, pts, pts)
    drift = kxz @ czz.solve(u)
    v = czz.half_solve(kxz.T)
    cov = kxx - v.T @ v
    cov = 0.5 * (cov + cov.T)
    d = np.diag(cov).copy()
    np.fill_diagonal(cov, np.maximum(d, 0.0))
    return drift, cov


def _noise_factor(cov) -> np.ndarray:
    """Square-root factor F of the joint step covariance, F @ F.T = cov.

    Uses the symmetric eigendecomposition root with negative eigenvalues
    clamped to zero.  Unlike a jittered Cholesky, this is an exact factor of
    the (clamped) covariance, so particles whose covariance rows coincide
    receive identical noise: ties stay tied and the ordering guarantee is
    never eroded by factorization jitter.
    """
    try:
        w, u = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"step covariance factorization failed: {exc}")
    return u * np.sqrt(np.maximum(w, 0.0))[None, :]


def euler_maruyama_step(model: FlowModel, u, state: ParticleState, eps, dt,
                        deterministic: bool = False,
                        independent_noise: bool = False) -> ParticleState:
    """One joint Euler-Maruyama step shared by all particles.

    dx = drift * dt + F @ eps * sqrt(dt) with F F^T = cov factored over the
    full joint N x N covariance: a single coherent field realization drives
    every particle; ``eps`` is never redrawn per-particle.
    ``independent_noise`` deliberately breaks that coupling (per-particle
    sqrt(var_i) * eps_i) and exists only so tests can show the joint draw is
    load-bearing.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if state.time + dt > model.flow_time + _TIME_TOL:
        raise ValueError("step would exceed flow_time")
    eps = np.asarray(eps, dtype=float).ravel()
    if eps.shape != state.positions.shape:
        raise ValueError("eps must match the number of particles")
    drift, cov = flow_field(model, u, state)
    positions = state.positions + drift * dt
    if not deterministic:
        if independent_noise:
            positions = positions + np.sqrt(np.maximum(np.diag(cov), 0.0)) \
                * eps * np.sqrt(dt)
        else:
            positions = positions + (_noise_factor(cov) @ eps) * np.sqrt(dt)
            positions = _snap_ties(
                positions, _TIE_SNAP_REL * model.kernel.lengthscales[0])
    return ParticleState(positions=positions, time=state.time + dt)


def _snap_ties(positions, tol) -> np.ndarray:
    """Merge runs of particles whose spacing is below ``tol`` to their mean."""
    n = positions.size
    order = np.argsort(positions, kind="stable")
    sorted_pos = positions[order]
    if n < 2 or np.all(np.diff(sorted_pos) >= tol):
        return positions
    out = sorted_pos.copy()
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_pos[j + 1] - sorted_pos[j] < tol:
            j += 1
        if j > i:
            out[i:j + 1] = np.mean(sorted_pos[i:j + 1])
        i = j + 1
    result = np.empty_like(positions)
    result[order] = out
    return result


def replay_flow(model: FlowModel, x0, u_draw, eps_record,
                deterministic: bool = False,
                independent_noise: bool = False) -> np.ndarray:
    """Run the stepper under fixed randomness; returns the full trajectory.

    This is the replay contract: a FlowSample's trajectory is reproduced
    bitwise from (model, x0, u_draw, eps_record).
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    eps_record = np.asarray(eps_record, dtype=float)
    if eps_record.shape != (model.n_steps, x0.size):
        raise ValueError("eps_record must have shape (n_steps, N)")
    dt = model.flow_time / model.n_steps
    trajectory = np.empty((model.n_steps + 1, x0.size))
    trajectory[0] = x0
    state = ParticleState(positions=x0, time=0.0)
    for k in range(model.n_steps):
        state = euler_maruyama_step(model, u_draw, state, eps_record[k], dt,
                                    deterministic=deterministic,
                                    independent_noise=independent_noise)
        trajectory[k + 1] = state.positions
    return trajectory


def sample_flow(model: FlowModel, x0, rng,
                deterministic: bool = False,
                independent_noise: bool = False) -> FlowSample:
    """Draw one coherent flow sample over the initial conditions ``x0``.

    Draws u ~ N(m, S) by reparameterization, then runs n_steps equal
    Euler-Maruyama steps recording all randomness.  Deterministic mode uses
    u = m and suppresses the diffusion term entirely (pure ODE flow).
    """
    rng = _as_generator(rng)
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size < 1:
        raise ValueError("x0 must contain at least one particle")
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    if deterministic:
        u = model.m.copy()
        eps_record = np.zeros((model.n_steps, x0.size))
    else:
        u = mvn_sample(model.m, model.s_chol(),
                       rng.standard_normal(model.n_inducing))
        eps_record = rng.standard_normal((model.n_steps, x0.size))
    trajectory = replay_flow(model, x0, u, eps_record,
                             deterministic=deterministic,
                             independent_noise=independent_noise)
    return FlowSample(trajectory=trajectory, terminal=trajectory[-1].copy(),
                      u_draw=u, eps_record=eps_record)


def predict(model: FlowModel, x_star, n_samples: int, rng,
            deterministic: bool = False) -> FlowPrediction:
    """Posterior predictive at ``x_star`` from coherent terminal samples.

    Returns the per-point sample mean, empirical 2.5%/97.5% quantiles and
    the raw terminal samples.  Quantiles are empirical rather than
    Gaussian-fit: terminal draws need not be symmetric around their mean.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    rng = _as_generator(rng)
    x_star = np.asarray(x_star, dtype=float).ravel()
    samples = np.empty((n_samples, x_star.size))
    for s in range(n_samples):
        samples[s] = sample_flow(model, x_star, rng,
                                 deterministic=deterministic).terminal
    return FlowPrediction(
        mean=samples.mean(axis=0),
        lower=np.quantile(samples, 0.025, axis=0),
        upper=np.quantile(samples, 0.975, axis=0),
        samples=samples,
    )


def streamlines(model: FlowModel, x0, n_draws: int, rng,
                deterministic: bool = False) -> list[FlowSample]:
    """Coherent draws with full trajectories retained, for export/plotting."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    rng = _as_generator(rng)
    return [sample_flow(model, x0, rng, deterministic=deterministic)
            for _ in range(n_draws)]


def ordering_violations(x0, terminal, tol: float = 1e-9) -> int:
    """Count adjacent-pair order inversions of terminal relative to x0.

    Ties within ``tol`` are not violations.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    terminal = np.asarray(terminal, dtype=float).ravel()
    order = np.argsort(x0, kind="stable")
    t_sorted = terminal[order]
    return int(np.sum(np.diff(t_sorted) < -tol))


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
