"""Controller dynamics that turn input constraints into state constraints.

The plant input u_hat is produced by auxiliary dynamics

    x_c' = f_c(x_c) + g_c(x_c) u,     u_hat = h_c(x_c),

so bounds on u_hat become barriers on the cascade state (x_hat, x_c), and
the filter acts on the new input u. The tracking law u_d drives u_hat toward
the minimizer u_hat_d of the plant cost, and -u_d is the linear term of the
surrogate cost handed to the filter.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable, Dict, Sequence, Tuple

import jax
import jax.numpy as jnp
import numpy as np

from .cbf_chain import AlphaFunction, BarrierSpec
from .fields import (
    ControlAffineSystem,
    DimensionError,
    ScalarField,
    VectorField,
    input_lie_fn,
    lie_fn,
)

DECOUPLING_COND_MAX = 1e8


class ControllerConditionError(ValueError):
    """The controller dynamics violate one of the structural conditions."""


class UnsupportedConfigurationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ControllerDynamics:
    """x_c' = f_c(x_c) + g_c(x_c) u with output u_hat = h_c(x_c).

    ``d_c`` is the relative degree of h_c and ``zeta`` that of each input
    constraint composed with h_c.
    """

    f_c: VectorField
    g_c: VectorField
    h_c: VectorField
    d_c: int = 1
    zeta: int = 1

    def __post_init__(self):
        n_c = self.f_c.dim_in
        if self.f_c.shape_out != (n_c,) or self.g_c.dim_in != n_c or self.h_c.dim_in != n_c:
            raise DimensionError("controller fields must share the controller state dimension")
        if self.g_c.shape_out[0] != n_c or self.g_c.shape_out[1] != self.m:
            raise DimensionError(f"g_c must be {n_c}x{self.m}, got {self.g_c.shape_out}")
        if self.d_c < 1 or self.zeta < 1:
            raise ValueError("d_c and zeta must be positive")

    @property
    def n_c(self) -> int:
        return self.f_c.dim_in

    @property
    def m(self) -> int:
        return self.h_c.shape_out[0]

    def decoupling_fn(self) -> Callable:
        """Traceable x_c -> L_gc L_fc^(d_c-1) h_c (an m x m matrix)."""
        return input_lie_fn(lie_fn(self.h_c.fn, self.f_c.fn, self.d_c - 1), self.g_c.fn)

    def decoupling(self, xc) -> np.ndarray:
        return np.asarray(_jit(self.decoupling_fn)(jnp.asarray(xc, dtype=float)))


@functools.lru_cache(maxsize=256)
def _jit(builder: Callable):
    return jax.jit(builder())


@dataclass(frozen=True, eq=False)
class LtiController:
    """Linear controller dynamics x_c' = A x_c + B u, u_hat = C x_c."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A, B, C = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (self.A, self.B, self.C))
        n_c, m = B.shape
        if A.shape != (n_c, n_c) or C.shape != (m, n_c):
            raise DimensionError(f"need A {n_c}x{n_c}, C {m}x{n_c}; got A{A.shape}, C{C.shape}")
        if np.linalg.cond(C @ B) > DECOUPLING_COND_MAX:
            raise ControllerConditionError("C_c B_c must be nonsingular")
        for name, M in zip("ABC", (A, B, C)):
            object.__setattr__(self, name, M)

    @functools.cached_property
    def dynamics(self) -> ControllerDynamics:
        A, B, C = jnp.asarray(self.A), jnp.asarray(self.B), jnp.asarray(self.C)
        n_c, m = self.B.shape
        return ControllerDynamics(
            f_c=VectorField(lambda xc: A @ xc, n_c, n_c, "A_c x_c"),
            g_c=VectorField(lambda xc: B, n_c, (n_c, m), "B_c"),
            h_c=VectorField(lambda xc: C @ xc, n_c, m, "C_c x_c"),
            d_c=1,
            zeta=1,
        )


@dataclass(frozen=True, eq=False)
class InputConstraintSpec:
    """Admissible inputs U = {u_hat : phi_k(u_hat) >= 0 for all k}."""

    phis: Tuple[ScalarField, ...]

    def __post_init__(self):
        object.__setattr__(self, "phis", tuple(self.phis))
        if not self.phis:
            raise ValueError("need at least one input constraint")

    @property
    def m(self) -> int:
        return self.phis[0].dim_in

    def contains(self, uhat, tol: float = 0.0) -> bool:
        return all(phi(uhat) >= -tol for phi in self.phis)

    def audit(self, box: float = 100.0, samples: int = 20000, seed: int = 0) -> Dict[str, float]:
        """Sample [-box, box]^m: U nonempty, bounded inside the box, and phi' != 0 on U."""
        rng = np.random.default_rng(seed)
        u = rng.uniform(-box, box, size=(samples, self.m))
        vals = np.stack([np.asarray(jax.vmap(phi.fn)(u)) for phi in self.phis], axis=1)
        inside = np.all(vals >= 0, axis=1)
        edge = np.abs(u).max(axis=1) > 0.99 * box
        grads = [np.asarray(jax.vmap(jax.grad(phi.fn))(u[inside])) for phi in self.phis]
        min_grad = min((np.linalg.norm(g, axis=1).min() for g in grads if len(g)), default=0.0)
        return {
            "nonempty": float(inside.any()),
            "bounded": float(not np.any(inside & edge)),
            "min_grad_norm": float(min_grad),
        }


@dataclass(frozen=True)
class TrackingLawConfig:
    """Coefficients gamma_0 .. gamma_{d_c-1}; gamma_{d_c} = 1 is implied."""

    gammas: Tuple[float, ...] = (1.0,)

    def __post_init__(self):
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        if not self.gammas or any(g <= 0 for g in self.gammas):
            raise ValueError(f"tracking gains must be positive, got {self.gammas}")
        if not self.is_hurwitz:
            raise ValueError(f"characteristic polynomial with {self.gammas} is not Hurwitz")

    @property
    def d_c(self) -> int:
        return len(self.gammas)

    @property
    def coefficients(self) -> Tuple[float, ...]:
        return self.gammas + (1.0,)

    @property
    def is_hurwitz(self) -> bool:
        d = len(self.gammas)
        companion = np.zeros((d, d))
        companion[1:, :-1] = np.eye(d - 1)
        companion[:, -1] = -np.asarray(self.gammas)
        return bool(np.all(np.linalg.eigvals(companion).real < 0))


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Plant cost 1/2 u'Q(x)u + c(x)'u with traceable Q and c over the plant state."""

    Qhat: Callable
    chat: Callable

    def ideal_fn(self) -> Callable:
        return lambda xhat: -jnp.linalg.solve(self.Qhat(xhat), self.chat(xhat))

    def J(self, xhat, uhat) -> float:
        xhat = jnp.asarray(xhat, dtype=float)
        uhat = np.asarray(uhat, dtype=float)
        Q, c = np.asarray(self.Qhat(xhat)), np.asarray(self.chat(xhat))
        return float(0.5 * uhat @ Q @ uhat + c @ uhat)


def build_cascade(plant: ControlAffineSystem, ctrl: ControllerDynamics) -> ControlAffineSystem:
    """Plant driven by the controller output; the new input enters only x_c."""
    if plant.m != ctrl.m:
        raise DimensionError(f"plant takes {plant.m} inputs, controller outputs {ctrl.m}")
    nh, nc, m = plant.n, ctrl.n_c, ctrl.m

    def f(x):
        xh, xc = x[:nh], x[nh:]
        top = plant.f.fn(xh) + plant.g.fn(xh) @ ctrl.h_c.fn(xc)
        return jnp.concatenate([top, ctrl.f_c.fn(xc)])

    def g(x):
        return jnp.concatenate([jnp.zeros((nh, m)), jnp.asarray(ctrl.g_c.fn(x[nh:]), dtype=float)])

    return ControlAffineSystem(VectorField(f, nh + nc, nh + nc, "cascade drift"), VectorField(g, nh + nc, (nh + nc, m), "cascade input"))


def _on_plant(field: ScalarField, nh: int, n: int) -> ScalarField:
    sing = field.singular
    return ScalarField(
        lambda x: field.fn(x[:nh]),
        n,
        field.label,
        None if sing is None else (lambda x: sing(x[:nh])),
    )


def _on_controller(phi: ScalarField, ctrl: ControllerDynamics, nh: int, n: int) -> ScalarField:
    return ScalarField(lambda x: phi.fn(ctrl.h_c.fn(x[nh:])), n, phi.label)


def lift_barriers(
    plant_specs: Sequence[BarrierSpec],
    ics: InputConstraintSpec,
    ctrl: ControllerDynamics,
    alphas: Sequence[Sequence[AlphaFunction]],
) -> Tuple[BarrierSpec, ...]:
    """Barriers on the cascade state: plant constraints then input constraints.

    Plant barrier degrees grow by d_c; input barriers phi_k(h_c(x_c)) have
    degree zeta. ``alphas`` gives the chain for every lifted barrier in order.
    """
    if not plant_specs:
        raise ValueError("need at least one plant barrier")
    nh = plant_specs[0].h.dim_in
    n = nh + ctrl.n_c
    if ics.m != ctrl.m:
        raise DimensionError(f"input constraints over R^{ics.m}, controller output R^{ctrl.m}")
    if len(alphas) != len(plant_specs) + len(ics.phis):
        raise ValueError(f"need {len(plant_specs) + len(ics.phis)} alpha chains, got {len(alphas)}")
    lifted = []
    for spec, chain in zip(plant_specs, alphas):
        lifted.append(BarrierSpec(_on_plant(spec.h, nh, n), spec.d + ctrl.d_c, tuple(chain), spec.label))
    for k, (phi, chain) in enumerate(zip(ics.phis, alphas[len(plant_specs):])):
        lifted.append(BarrierSpec(_on_controller(phi, ctrl, nh, n), ctrl.zeta, tuple(chain), phi.label or f"phi{k + 1}"))
    return tuple(lifted)


def ideal_control(cost: CostSpec, xhat) -> np.ndarray:
    """u_hat_d = -Q(x_hat)^-1 c(x_hat), the minimizer of the plant cost."""
    xhat = jnp.asarray(xhat, dtype=float)
    Q = np.asarray(cost.Qhat(xhat), dtype=float)
    c = np.asarray(cost.chat(xhat), dtype=float)
    return -np.linalg.solve(Q, c)


def tracking_fn(cost: CostSpec, ctrl: ControllerDynamics, law: TrackingLawConfig, cascade: ControlAffineSystem) -> Callable:
    """Traceable x -> u_d(x), the input that makes e = u_hat - u_hat_d obey the tracking ODE."""
    if law.d_c != ctrl.d_c:
        raise ValueError(f"tracking law has {law.d_c} gains, controller has d_c = {ctrl.d_c}")
    nh = cascade.n - ctrl.n_c
    ideal = cost.ideal_fn()
    ud_hat = lambda x: ideal(x[:nh])
    decoupling = ctrl.decoupling_fn()
    gam = law.coefficients

    def ud(x):
        xc = x[nh:]
        total = 0.0
        for i in range(ctrl.d_c + 1):
            total = total + gam[i] * (lie_fn(ud_hat, cascade.f.fn, i)(x) - lie_fn(ctrl.h_c.fn, ctrl.f_c.fn, i)(xc))
        return jnp.linalg.solve(decoupling(xc), total)

    return ud


@functools.lru_cache(maxsize=64)
def _compiled_tracking(cost, ctrl, law, cascade):
    return jax.jit(tracking_fn(cost, ctrl, law, cascade))


def tracking_control(
    cost: CostSpec, ctrl: ControllerDynamics, law: TrackingLawConfig, cascade: ControlAffineSystem, x
) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    M = ctrl.decoupling(x[cascade.n - ctrl.n_c:])
    if np.linalg.cond(M) > DECOUPLING_COND_MAX:
        raise ControllerConditionError(f"decoupling matrix is singular at x_c = {x[-ctrl.n_c:]}")
    return np.asarray(_compiled_tracking(cost, ctrl, law, cascade)(x))


def matched_initialization(cost: CostSpec, ctrl, xhat0) -> np.ndarray:
    """Controller state with h_c(x_c0) = u_hat_d(x_hat0), so e(0) = 0."""
    if not isinstance(ctrl, LtiController):
        raise UnsupportedConfigurationError("matched initialization is implemented for LTI controllers only")
    C = ctrl.C
    if C.shape[0] != C.shape[1]:
        raise UnsupportedConfigurationError("matched initialization needs a square, invertible C_c")
    return np.linalg.solve(C, ideal_control(cost, xhat0))


def error_signal(cost: CostSpec, ctrl: ControllerDynamics, x) -> np.ndarray:
    """e = h_c(x_c) - u_hat_d(x_hat)."""
    x = np.asarray(x, dtype=float)
    nh = x.shape[0] - ctrl.n_c
    return ctrl.h_c(x[nh:]) - ideal_control(cost, x[:nh])


def surrogate_cost(
    law: TrackingLawConfig, ctrl: ControllerDynamics, cost: CostSpec, cascade: ControlAffineSystem, x
) -> Tuple[np.ndarray, np.ndarray]:
    """(Q, c) = (I_m, -u_d(x)) for the filter acting on the controller input."""
    return np.eye(ctrl.m), -tracking_control(cost, ctrl, law, cascade, x)


def audit_controller(
    ctrl: ControllerDynamics,
    ics: InputConstraintSpec,
    xc_samples,
    plant: ControlAffineSystem = None,
    plant_specs: Sequence[BarrierSpec] = (),
    xhat_samples=None,
) -> Dict[str, float]:
    """Worst-case residuals of the controller conditions over sampled states.

    Keys: ``c1_max`` (|L_gc L_fc^i h_c| for i <= d_c-2), ``c2_max_cond``
    (condition number of the decoupling matrix), ``c3_min`` (smallest norm
    of the plant-controller cross term), ``c4_max`` and ``c5_min`` (the same
    pair for phi_k o h_c with degree zeta).
    """
    xc = np.atleast_2d(np.asarray(xc_samples, dtype=float))
    out = {}
    lower = [input_lie_fn(lie_fn(ctrl.h_c.fn, ctrl.f_c.fn, i), ctrl.g_c.fn) for i in range(ctrl.d_c - 1)]
    out["c1_max"] = max((float(np.abs(jax.vmap(fn)(xc)).max()) for fn in lower), default=0.0)
    M = np.asarray(jax.vmap(ctrl.decoupling_fn())(xc))
    out["c2_max_cond"] = float(np.linalg.cond(M).max())
    if plant is not None and plant_specs:
        xh = np.atleast_2d(np.asarray(xhat_samples, dtype=float))
        c3 = np.inf
        for spec in plant_specs:
            row = input_lie_fn(lie_fn(spec.h.fn, plant.f.fn, spec.d - 1), plant.g.fn)
            rows = np.asarray(jax.vmap(row)(xh))
            c3 = min(c3, float(np.linalg.norm(np.einsum("si,tij->stj", rows, M), axis=-1).min()))
        out["c3_min"] = c3
    c4, c5 = 0.0, np.inf
    for phi in ics.phis:
        comp = lambda xc_, phi=phi: phi.fn(ctrl.h_c.fn(xc_))
        for i in range(ctrl.zeta - 1):
            c4 = max(c4, float(np.abs(jax.vmap(input_lie_fn(lie_fn(comp, ctrl.f_c.fn, i), ctrl.g_c.fn))(xc)).max()))
        top = input_lie_fn(lie_fn(comp, ctrl.f_c.fn, ctrl.zeta - 1), ctrl.g_c.fn)
        c5 = min(c5, float(np.linalg.norm(np.asarray(jax.vmap(top)(xc)), axis=-1).min()))
    out["c4_max"], out["c5_min"] = c4, c5
    return out
