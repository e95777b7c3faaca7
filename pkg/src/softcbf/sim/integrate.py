"""Fixed-step classical Runge-Kutta integration with the input held constant."""

from __future__ import annotations

import functools

import jax
import numpy as np

from ..fields import ControlAffineSystem


class NonFiniteStateError(FloatingPointError):
    pass


def rk4_fn(sys: ControlAffineSystem):
    """Traceable (x, u, dt) -> x after one RK4 step of x' = f(x) + g(x) u."""

    def step(x, u, dt):
        k1 = sys.rhs(x, u)
        k2 = sys.rhs(x + 0.5 * dt * k1, u)
        k3 = sys.rhs(x + 0.5 * dt * k2, u)
        k4 = sys.rhs(x + dt * k3, u)
        return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    return step


@functools.lru_cache(maxsize=64)
def _compiled(sys: ControlAffineSystem):
    return jax.jit(rk4_fn(sys))


def step_rk4(sys: ControlAffineSystem, x, u_held, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x_next = np.asarray(_compiled(sys)(np.asarray(x, dtype=float), np.asarray(u_held, dtype=float), dt))
    if not np.all(np.isfinite(x_next)):
        raise NonFiniteStateError(f"non-finite state after RK4 step from {x}")
    return x_next
