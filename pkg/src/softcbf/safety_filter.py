"""Closed-form solution of the relaxed single-constraint barrier QP.

    minimize    1/2 u'Qu + c'u + gamma mu^2
    subject to  a + b'u + h mu >= 0,    a = L_f h + alpha(h),  b = L_g h'

One affine inequality in (u, mu) means the minimizer is either the
unconstrained point or the projection onto the constraint boundary, so the
KKT system is solved directly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .cbf_chain import AlphaFunction

logger = logging.getLogger(__name__)

DENOM_TOL = 1e-14
SLACK_FLOOR = 1e-300

UNCONSTRAINED = "unconstrained"
ACTIVE = "active"
SLACK_ONLY = "slack_only"


class InfeasibleFilterError(RuntimeError):
    """The barrier constraint cannot be met: L_g h = 0 and h = 0 at a violating point."""


@dataclass(frozen=True)
class FilterProblem:
    Q: np.ndarray
    c: np.ndarray
    gamma: float
    alpha: Union[AlphaFunction, Callable[[float], float]]
    h: float
    Lf_h: float
    Lg_h: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        b = np.atleast_1d(np.asarray(self.Lg_h, dtype=float))
        m = c.shape[0]
        if Q.shape != (m, m) or b.shape != (m,):
            raise ValueError(f"inconsistent shapes Q{Q.shape}, c{c.shape}, Lg_h{b.shape}")
        if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12):
            raise ValueError("Q must be symmetric")
        if np.linalg.eigvalsh(Q).min() <= 0:
            raise ValueError("Q must be positive definite")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "Lg_h", b)

    @property
    def m(self) -> int:
        return self.c.shape[0]

    @property
    def a(self) -> float:
        return float(self.Lf_h + self.alpha(self.h))

    def objective(self, u, mu) -> float:
        u = np.asarray(u, dtype=float)
        return float(0.5 * u @ self.Q @ u + self.c @ u + self.gamma * mu * mu)

    def residual(self, u, mu) -> float:
        return float(self.a + self.Lg_h @ np.asarray(u, dtype=float) + self.h * mu)


@dataclass(frozen=True)
class FilterSolution:
    u: np.ndarray
    mu: float
    status: str
    lam: float
    residual: float


def solve_filter(p: FilterProblem) -> FilterSolution:
    """Exact minimizer of the relaxed barrier QP.

    Raises:
        InfeasibleFilterError: the unconstrained point violates the constraint
            and neither u nor mu can move it (b'Q^-1 b + h^2/(2 gamma) ~ 0).
    """
    factor = cho_factor(p.Q)
    a, b = p.a, p.Lg_h
    u0 = cho_solve(factor, -p.c)
    r0 = a + b @ u0
    if r0 >= 0:
        return FilterSolution(u0, 0.0, UNCONSTRAINED, 0.0, float(r0))

    qb = cho_solve(factor, b)
    bqb = float(b @ qb)
    slack = p.h * p.h / (2.0 * p.gamma)
    if slack < SLACK_FLOOR:
        slack = 0.0
    denom = bqb + slack
    if denom < DENOM_TOL:
        raise InfeasibleFilterError(
            f"constraint violated by {r0:.3e} with L_g h = {b} and h = {p.h:.3e}"
        )
    lam = -r0 / denom
    u = u0 + lam * qb
    mu = lam * p.h / (2.0 * p.gamma)
    if mu < 0:
        logger.debug("negative slack mu=%.3e at h=%.3e", mu, p.h)
    status = SLACK_ONLY if bqb == 0.0 else ACTIVE
    return FilterSolution(u, float(mu), status, float(lam), p.residual(u, mu))


def solve_filter_oracle(
    p: FilterProblem,
    bounds: Sequence[float] = (-10.0, 10.0),
    resolution: int = 41,
    refinements: int = 0,
) -> FilterSolution:
    """Exhaustive grid search over u; a test oracle for ``solve_filter``.

    For each grid point the slack is the cheapest mu meeting the constraint,
    a one-dimensional problem solved directly. ``bounds`` is the (low, high)
    box for every input coordinate. Each refinement re-grids a box of half
    the previous width centered on the incumbent.
    """
    if p.m > 2:
        raise ValueError("grid oracle supports m <= 2")
    lo = np.full(p.m, float(bounds[0]))
    hi = np.full(p.m, float(bounds[1]))
    best = None
    for _ in range(refinements + 1):
        axes = [np.linspace(lo[k], hi[k], resolution) for k in range(p.m)]
        u = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, p.m)
        s = p.a + u @ p.Lg_h
        if p.h > 0:
            mu = np.maximum(0.0, -s / p.h)
        elif p.h < 0:
            mu = np.minimum(0.0, -s / p.h)
        else:
            mu = np.where(s >= 0, 0.0, np.nan)
        obj = 0.5 * np.einsum("ij,jk,ik->i", u, p.Q, u) + u @ p.c + p.gamma * mu * mu
        obj = np.where(np.isnan(mu), np.inf, obj)
        k = int(np.argmin(obj))
        if not np.isfinite(obj[k]):
            if best is None:
                raise InfeasibleFilterError("no feasible grid point in the search box")
            break
        if best is None or obj[k] <= best[0]:
            best = (obj[k], u[k].copy(), float(mu[k]))
        quarter = (hi - lo) / 4
        lo, hi = best[1] - quarter, best[1] + quarter
    _, u, mu = best
    status = UNCONSTRAINED if mu == 0 and p.residual(u, mu) > 0 else ACTIVE
    return FilterSolution(u, mu, status, float("nan"), p.residual(u, mu))


@dataclass(frozen=True)
class FeasibilityCertificate:
    feasible: bool
    u: Optional[np.ndarray] = None
    mu: Optional[float] = None
    reason: str = ""


def feasibility_certificate(p: FilterProblem) -> FeasibilityCertificate:
    """Exhibit a point satisfying the constraint with mu >= 0, when one is known to exist."""
    a, b, h = p.a, p.Lg_h, p.h
    u0 = cho_solve(cho_factor(p.Q), -p.c)
    nb = float(b @ b)
    if h > 0:
        return FeasibilityCertificate(True, u0, max(0.0, -(a + b @ u0) / h), "slack")
    if h == 0 and nb > 0:
        return FeasibilityCertificate(True, max(0.0, -a) / nb * b, 0.0, "input direction")
    if h >= 0 and nb == 0 and a >= 0:
        return FeasibilityCertificate(True, u0, 0.0, "constraint slack at any input")
    if h < 0:
        return FeasibilityCertificate(False, reason="h < 0: state outside the composite safe set")
    return FeasibilityCertificate(False, reason="h = 0 and L_g h = 0 with a < 0")
