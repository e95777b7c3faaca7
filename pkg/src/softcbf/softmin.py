"""Soft minimum of a finite tuple and its softmax weights."""

from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np


@dataclass(frozen=True)
class SoftminParams:
    rho: float

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")


def _traced(values) -> bool:
    return isinstance(values, jax.core.Tracer)


def _check(values, rho, xp):
    z = xp.atleast_1d(xp.asarray(values, dtype=float))
    if z.ndim != 1 or z.shape[0] == 0:
        raise ValueError("softmin needs a nonempty 1-D sequence of values")
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    return z


def softmin(values, rho: float):
    """-(1/rho) log sum exp(-rho z_i), shifted by min z for overflow safety.

    Traceable under jax transforms; the shift is held out of differentiation
    and the expression is invariant to it, so every derivative is exact.
    Concrete inputs are evaluated in NumPy and return a float.
    """
    if _traced(values):
        z = _check(values, rho, jnp)
        zmin = jax.lax.stop_gradient(jnp.min(z))
        return zmin - jnp.log(jnp.sum(jnp.exp(-rho * (z - zmin)))) / rho
    z = _check(values, rho, np)
    k = int(np.argmin(z))
    # log1p of the non-minimal terms keeps gaps far below one ulp of 1.
    rest = np.exp(-rho * (np.delete(z, k) - z[k]))
    return float(z[k] - np.log1p(np.sum(rest)) / rho)


def softmin_weights(values, rho: float):
    """Weights w_i = exp(-rho z_i) / sum_k exp(-rho z_k); the gradient of softmin in z."""
    xp = jnp if _traced(values) else np
    z = _check(values, rho, xp)
    e = xp.exp(-rho * (z - xp.min(z)))
    return e / xp.sum(e)
