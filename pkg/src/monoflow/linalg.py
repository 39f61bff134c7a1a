"""Dense linear-algebra primitives: jittered Cholesky factorization,
multivariate-normal sampling, and the closed-form Gaussian KL divergence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NumericalError

# Relative jitter policy: base 1e-6 of the mean diagonal, escalating x10 up
# to 1e0 relative.  jitter_applied is recorded for reproducibility.
JITTER_REL = 1e-6
_JITTER_STEPS = 7
_SYMMETRY_RTOL = 1e-10


@dataclass(frozen=True)
class CholFactor:
    """Lower-triangular factor L with L @ L.T = M + jitter_applied * I."""

    L: np.ndarray
    jitter_applied: float

    @property
    def n(self) -> int:
        return self.L.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve (L L^T) x = b by two triangular solves."""
        y = solve_triangular(self.L, b, lower=True)
        return solve_triangular(self.L.T, y, lower=False)

    def half_solve(self, b: np.ndarray) -> np.ndarray:
        """Solve L y = b (forward substitution only)."""
        return solve_triangular(self.L, b, lower=True)

    def log_det(self) -> float:
        """log det(M + jitter_applied * I)."""
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))


def cholesky(mat, base_jitter: float = 0.0) -> CholFactor:
    """Factor a symmetric matrix, escalating jitter on failure.

    Attempts ``base_jitter * 10**k`` for k = 0..6 and records the jitter that
    succeeded.  Raises :class:`NumericalError` if all attempts fail.
    """
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"matrix must be square, got shape {mat.shape}")
    scale = max(float(np.max(np.abs(mat))), np.finfo(float).tiny)
    if float(np.max(np.abs(mat - mat.T))) > _SYMMETRY_RTOL * scale:
        raise ValueError("matrix is not symmetric to 1e-10 relative tolerance")

    eye = np.eye(mat.shape[0])
    jitter = float(base_jitter)
    for _ in range(_JITTER_STEPS):
        try:
            L = np.linalg.cholesky(mat + jitter * eye)
            return CholFactor(L=L, jitter_applied=jitter)
        except np.linalg.LinAlgError:
            jitter = jitter * 10.0 if jitter > 0 else 0.0
            if jitter == 0.0 and base_jitter == 0.0:
                break
    raise NumericalError(
        f"matrix not positive definite after maximum jitter {jitter:g}")


def policy_cholesky(mat) -> CholFactor:
    """Factor with the default relative-jitter policy (1e-6 of mean diag)."""
    mat = np.asarray(mat, dtype=float)
    base = JITTER_REL * float(np.mean(np.diag(mat)))
    return cholesky(mat, base_jitter=max(base, 0.0))


def mvn_sample(mean, cov_factor: CholFactor, eps) -> np.ndarray:
    """Deterministic reparameterized Gaussian draw: mean + L @ eps."""
    mean = np.asarray(mean, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if mean.shape != eps.shape or mean.shape != (cov_factor.n,):
        raise ValueError(
            f"dimension mismatch: mean {mean.shape}, eps {eps.shape}, "
            f"factor {cov_factor.L.shape}")
    return mean + cov_factor.L @ eps


def gaussian_kl(m, s_factor: CholFactor, prior_factor: CholFactor) -> float:
    """KL( N(m, S) || N(0, K) ) with S, K given by their Cholesky factors.

    Uses triangular solves only:

        KL = 0.5 * (tr(K^-1 S) + m^T K^-1 m - M) + 0.5 log det K
             - 0.5 log det S
    """
    m = np.asarray(m, dtype=float)
    dim = s_factor.n
    if m.shape != (dim,) or prior_factor.n != dim:
        raise ValueError("dimension mismatch between m, S factor and prior factor")
    a = prior_factor.half_solve(s_factor.L)
    b = prior_factor.half_solve(m)
    trace_term = float(np.sum(a * a))
    maha = float(np.sum(b * b))
    log_det_prior = prior_factor.log_det()
    log_det_s = 2.0 * float(np.sum(np.log(np.diag(s_factor.L))))
    return 0.5 * (trace_term + maha - dim + log_det_prior - log_det_s)
