"""Covariance kernels over the joint (space, time) domain.

Both kernels are ARD with one lengthscale per input dimension, so the time
axis can decouple from the space axis.  ``gram`` is written against a generic
array namespace (`numpy` or `jax.numpy`) so the same formulas serve the plain
sampling path and the differentiable training path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SQUARED_EXPONENTIAL = "se"
MATERN32 = "matern32"
KERNEL_VARIANTS = (SQUARED_EXPONENTIAL, MATERN32)

_SQRT3 = math.sqrt(3.0)
# Floor on squared distances before the Matern sqrt: keeps the gradient of
# sqrt finite at coincident points without perturbing k(p, p) measurably.
_R2_FLOOR = 1e-36


@dataclass(frozen=True)
class KernelParams:
    """Hyperparameters of a stationary kernel on R^2 points (space, time).

    ``signal_variance`` is the value of k(p, p) for any point p, in both
    variants.  All hyperparameters must be strictly positive.
    """

    variant: str
    signal_variance: float
    lengthscales: np.ndarray = field(default_factory=lambda: np.ones(2))

    def __post_init__(self):
        if self.variant not in KERNEL_VARIANTS:
            raise ValueError(f"unknown kernel variant {self.variant!r}; "
                             f"expected one of {KERNEL_VARIANTS}")
        if not (np.isfinite(self.signal_variance) and self.signal_variance > 0):
            raise ValueError("signal_variance must be positive and finite")
        ls = np.asarray(self.lengthscales, dtype=float)
        if ls.shape != (2,):
            raise ValueError("lengthscales must have shape (2,)")
        if not np.all(np.isfinite(ls) & (ls > 0)):
            raise ValueError("lengthscales must be positive and finite")
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "lengthscales", ls)


def gram(xp, variant, signal_variance, lengthscales, a, b):
    """Gram matrix k(a_i, b_j) using array namespace ``xp``.

    ``a`` and ``b`` are (n, 2) and (m, 2) arrays of (space, time) points.
    """
    diff = (a[:, None, :] - b[None, :, :]) / lengthscales
    r2 = xp.sum(diff * diff, axis=-1)
    if variant == SQUARED_EXPONENTIAL:
        return signal_variance * xp.exp(-0.5 * r2)
    r = xp.sqrt(xp.maximum(r2, _R2_FLOOR))
    return signal_variance * (1.0 + _SQRT3 * r) * xp.exp(-_SQRT3 * r)


def kernel_matrix(params: KernelParams, a, b) -> np.ndarray:
    """Dense covariance matrix between two point sets.

    Parameters
    ----------
    params : KernelParams
    a, b : array_like, shape (n, 2) and (m, 2)
        Finite (space, time) points.

    Returns
    -------
    ndarray, shape (n, m)
    """
    a = _as_points(a)
    b = _as_points(b)
    return gram(np, params.variant, params.signal_variance,
                params.lengthscales, a, b)


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != 2:
        raise ValueError(f"points must have shape (n, 2), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("points must be finite")
    return x


def lift_to_space_time(x, time=0.0) -> np.ndarray:
    """Embed a 1-D input vector as (space, time) points at a fixed time."""
    x = np.asarray(x, dtype=float).ravel()
    return np.column_stack([x, np.full_like(x, time)])
