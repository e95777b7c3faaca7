"""Nonholonomic ground robot: dynamics, map barriers and a goal-seeking controller.

State x = (q_x, q_y, v, theta), input u = (acceleration, turn rate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import jax.numpy as jnp
import numpy as np

from ..fields import ControlAffineSystem, ScalarField, VectorField

N_STATE = 4
N_INPUT = 2


def _drift(x):
    return jnp.array([x[2] * jnp.cos(x[3]), x[2] * jnp.sin(x[3]), 0.0, 0.0])


_G = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _input(x):
    return jnp.asarray(_G)


def unicycle_system() -> ControlAffineSystem:
    return ControlAffineSystem(
        VectorField(_drift, N_STATE, N_STATE, "unicycle drift"),
        VectorField(_input, N_STATE, (N_STATE, N_INPUT), "unicycle input"),
    )


@dataclass(frozen=True)
class ObstacleParams:
    """Scaled p-norm obstacle centered at (b_x, b_y) with radius-like offset c."""

    b_x: float
    b_y: float
    a_x: float = 1.0
    a_y: float = 1.0
    c: float = 1.0
    p: float = 4.0

    def __post_init__(self):
        if min(self.a_x, self.a_y, self.c, self.p) <= 0:
            raise ValueError(f"obstacle needs a_x, a_y, c, p > 0: {self}")


@dataclass(frozen=True)
class WallParams:
    """Region ||(a_x q_x, a_y q_y)||_p <= c around the origin."""

    a_x: float = 0.1
    a_y: float = 0.1
    c: float = 1.0
    p: float = 4.0

    def __post_init__(self):
        if min(self.a_x, self.a_y, self.c, self.p) <= 0:
            raise ValueError(f"wall needs a_x, a_y, c, p > 0: {self}")


def _pnorm(dx, dy, p):
    # Even integer exponents avoid |.|, whose derivatives break at the axes.
    if float(p).is_integer() and int(p) % 2 == 0:
        return (dx**p + dy**p) ** (1.0 / p)
    return (jnp.abs(dx) ** p + jnp.abs(dy) ** p) ** (1.0 / p)


def obstacle_fn(params: ObstacleParams):
    def h(x):
        dx = params.a_x * (x[0] - params.b_x)
        dy = params.a_y * (x[1] - params.b_y)
        return _pnorm(dx, dy, params.p) - params.c

    return h


def wall_fn(params: WallParams):
    def h(x):
        return params.c - _pnorm(params.a_x * x[0], params.a_y * x[1], params.p)

    return h


def _center_singular(b_x: float, b_y: float):
    # The p-norm is not differentiable where both arguments vanish.
    return lambda x: x[0] == b_x and x[1] == b_y


def obstacle_field(params: ObstacleParams, label: str = "obstacle", n: int = N_STATE) -> ScalarField:
    return ScalarField(obstacle_fn(params), n, label, _center_singular(params.b_x, params.b_y))


def wall_field(params: WallParams, label: str = "wall", n: int = N_STATE) -> ScalarField:
    return ScalarField(wall_fn(params), n, label, _center_singular(0.0, 0.0))


def speed_fields(v_min: float, v_max: float, n: int = N_STATE) -> Tuple[ScalarField, ScalarField]:
    """v_max - v and v - v_min."""
    return (
        ScalarField(lambda x: v_max - x[2], n, "speed_max"),
        ScalarField(lambda x: x[2] - v_min, n, "speed_min"),
    )


def obstacle_barrier(params, xhat) -> float:
    """Signed clearance: positive outside an obstacle, or inside the wall for WallParams."""
    if isinstance(params, WallParams):
        return wall_field(params)(xhat)
    return obstacle_field(params)(xhat)


@dataclass(frozen=True)
class DesiredControlGains:
    k1: float = 0.2
    k2: float = 1.0
    k3: float = 2.0

    def __post_init__(self):
        if min(self.k1, self.k2, self.k3) <= 0:
            raise ValueError(f"gains must be positive: {self}")


def desired_control_fn(gains: DesiredControlGains, goal, goal_radius: float = 0.0):
    """Traceable goal-seeking law; safe to differentiate at any r > 0.

    For r <= goal_radius (only r = 0 by default) it returns (-(k1 + k3) v, 0),
    the drift-damping part alone. A positive radius keeps the derivatives of
    the v/r term bounded when the law is differentiated along trajectories.
    """
    k1, k2, k3 = gains.k1, gains.k2, gains.k3
    gx, gy = float(goal[0]), float(goal[1])
    r2_min = float(goal_radius) ** 2

    def ud(xhat):
        v, theta = xhat[2], xhat[3]
        dx, dy = xhat[0] - gx, xhat[1] - gy
        at_goal = dx * dx + dy * dy <= r2_min
        # Substitute harmless arguments at the goal so no branch produces NaN gradients.
        sdx = jnp.where(at_goal, 1.0, dx)
        sdy = jnp.where(at_goal, 0.0, dy)
        r = jnp.sqrt(sdx * sdx + sdy * sdy)
        psi = jnp.arctan2(sdy, sdx) - theta + jnp.pi
        s, c = jnp.sin(psi), jnp.cos(psi)
        u1 = -(k1 + k3) * v + (1 + k1 * k3) * r * c + k1 * (k2 * r + v) * s * s
        u2 = (k2 + v / r) * s
        damp = -(k1 + k3) * v
        return jnp.stack([jnp.where(at_goal, damp, u1), jnp.where(at_goal, 0.0, u2)])

    return ud


def desired_control_unicycle(gains: DesiredControlGains, goal, xhat, goal_radius: float = 0.0) -> np.ndarray:
    qx, qy, v, theta = (float(s) for s in xhat)
    r = math.hypot(qx - goal[0], qy - goal[1])
    if r <= goal_radius:
        return np.array([-(gains.k1 + gains.k3) * v, 0.0])
    return np.asarray(desired_control_fn(gains, goal, goal_radius)(jnp.asarray([qx, qy, v, theta])))

