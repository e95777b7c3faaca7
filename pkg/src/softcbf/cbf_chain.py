"""Higher-order barrier chains and the composite soft-minimum barrier.

Each constraint h_j of relative degree d_j is reduced to a degree-one
function by the recursion

    b_{j,0} = h_j,    b_{j,i+1} = L_f b_{j,i} + alpha_{j,i}(b_{j,i}),

and the tops b_j = b_{j,d_j-1} are merged into one barrier
h = softmin_rho(b_1, ..., b_l).
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import jax
import jax.numpy as jnp
import numpy as np

from .fields import ControlAffineSystem, DimensionError, ScalarField, input_lie_fn, lie_fn
from .softmin import softmin, softmin_weights

MEMBERSHIP_TOL = 1e-9


class NonClassKWarning(UserWarning):
    """An alpha function that is not extended class-K was placed in a chain."""


@dataclass(frozen=True)
class AlphaFunction:
    """Affine scalar map alpha(s) = slope * s + offset.

    ``linear`` has zero offset and is extended class-K when the slope is
    positive. ``constant`` has zero slope. Both slope and offset are
    nonnegative, so every instance is nondecreasing.
    """

    kind: str = "linear"
    slope: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("linear", "affine", "constant"):
            raise ValueError(f"unknown alpha kind {self.kind!r}")
        if self.slope < 0 or self.offset < 0:
            raise ValueError(f"alpha needs slope >= 0 and offset >= 0, got {self.slope}, {self.offset}")
        if self.kind == "linear" and self.offset != 0:
            raise ValueError("a linear alpha has zero offset")
        if self.kind == "constant" and self.slope != 0:
            raise ValueError("a constant alpha has zero slope")

    @classmethod
    def linear(cls, slope: float) -> "AlphaFunction":
        return cls("linear", float(slope), 0.0)

    @classmethod
    def constant(cls, value: float) -> "AlphaFunction":
        return cls("constant", 0.0, float(value))

    @classmethod
    def affine(cls, slope: float, offset: float) -> "AlphaFunction":
        return cls("affine", float(slope), float(offset))

    @property
    def is_class_k(self) -> bool:
        return self.kind == "linear" and self.slope > 0

    def __call__(self, s):
        return self.slope * s + self.offset

    def to_dict(self) -> dict:
        return {"kind": self.kind, "slope": self.slope, "offset": self.offset}

    @classmethod
    def from_dict(cls, d: dict) -> "AlphaFunction":
        kind = d.get("kind", "linear")
        return cls(kind, float(d.get("slope", 0.0)), float(d.get("offset", 0.0)))


@dataclass(frozen=True, eq=False)
class BarrierSpec:
    """Constraint h >= 0 with relative degree ``d`` and its alpha chain."""

    h: ScalarField
    d: int
    alphas: Tuple[AlphaFunction, ...] = ()
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(self.alphas))
        if self.d < 1:
            raise ValueError(f"relative degree must be positive, got {self.d}")
        if len(self.alphas) != self.d - 1:
            raise ValueError(f"{self.label}: need {self.d - 1} alpha functions, got {len(self.alphas)}")
        for a in self.alphas:
            if not a.is_class_k:
                warnings.warn(
                    f"{self.label or 'barrier'}: alpha {a} in the chain is not extended class-K",
                    NonClassKWarning,
                    stacklevel=3,
                )


def chain_fns(spec: BarrierSpec, sys: ControlAffineSystem) -> List[Callable]:
    """Traceable callables for b_{j,0}, ..., b_{j,d-1}."""
    fns = [spec.h.fn]
    for alpha in spec.alphas:
        fns.append(_next_level(fns[-1], alpha, sys.f.fn))
    return fns


def _next_level(prev: Callable, alpha: AlphaFunction, f: Callable) -> Callable:
    def level(x):
        b, lfb = jax.jvp(prev, (x,), (f(x),))
        return lfb + alpha(b)

    return level


@functools.lru_cache(maxsize=256)
def _compiled_level(spec: BarrierSpec, sys: ControlAffineSystem, level: int):
    return jax.jit(chain_fns(spec, sys)[level])


def chain_value(spec: BarrierSpec, sys: ControlAffineSystem, x, level: int) -> float:
    """b_{j,level}(x) computed by the recursion."""
    if not 0 <= level <= spec.d - 1:
        raise ValueError(f"level {level} outside [0, {spec.d - 1}]")
    if spec.h.dim_in != sys.n:
        raise DimensionError(f"{spec.label}: barrier over R^{spec.h.dim_in}, system over R^{sys.n}")
    return float(_compiled_level(spec, sys, level)(spec.h.check(x)))


@dataclass(frozen=True)
class CBFTerms:
    """Everything the filter and the logs need from one state."""

    h: float
    Lf_h: float
    Lg_h: np.ndarray
    tops: np.ndarray
    weights: np.ndarray
    levels: Tuple[np.ndarray, ...]

    @property
    def hj(self) -> np.ndarray:
        return np.array([lv[0] for lv in self.levels])

    @property
    def min_b(self) -> float:
        return float(min(lv.min() for lv in self.levels))

    @property
    def min_hj(self) -> float:
        return float(self.hj.min())


@dataclass(frozen=True)
class Membership:
    in_Ss: bool
    in_S: bool
    in_C: bool
    per_level: Tuple[np.ndarray, ...]


@dataclass(frozen=True, eq=False)
class CompositeCBF:
    """Soft minimum of the chain tops of an ordered list of barriers."""

    specs: Tuple[BarrierSpec, ...]
    rho: float

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        if not self.specs:
            raise ValueError("a composite barrier needs at least one constraint")
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        dims = {s.h.dim_in for s in self.specs}
        if len(dims) != 1:
            raise DimensionError(f"barriers over different state dimensions: {sorted(dims)}")

    @property
    def dim(self) -> int:
        return self.specs[0].h.dim_in

    @property
    def degrees(self) -> Tuple[int, ...]:
        return tuple(s.d for s in self.specs)

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(s.label for s in self.specs)

    def tops_fn(self, sys: ControlAffineSystem) -> Callable:
        tops = [chain_fns(s, sys)[-1] for s in self.specs]
        return lambda x: jnp.stack([b(x) for b in tops])

    def value_fn(self, sys: ControlAffineSystem) -> Callable:
        tops = self.tops_fn(sys)
        return lambda x: softmin(tops(x), self.rho)

    def terms_fn(self, sys: ControlAffineSystem) -> Callable:
        """Traceable x -> (h, L_f h, L_g h, tops, weights, levels)."""
        tops = self.tops_fn(sys)
        all_levels = [chain_fns(s, sys) for s in self.specs]

        def terms(x):
            b, jac = tops(x), jax.jacfwd(tops)(x)
            w = softmin_weights(b, self.rho)
            grad = w @ jac
            levels = tuple(jnp.stack([fn(x) for fn in fns]) for fns in all_levels)
            return softmin(b, self.rho), grad @ sys.f.fn(x), grad @ sys.g.fn(x), b, w, levels

        return terms


def _check_system(cbf: CompositeCBF, sys: ControlAffineSystem) -> None:
    if cbf.dim != sys.n:
        raise DimensionError(f"composite barrier over R^{cbf.dim}, system over R^{sys.n}")


@functools.lru_cache(maxsize=64)
def _compiled(cbf: CompositeCBF, sys: ControlAffineSystem):
    _check_system(cbf, sys)
    return jax.jit(cbf.value_fn(sys)), jax.jit(cbf.terms_fn(sys))


def _state(cbf: CompositeCBF, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    for s in cbf.specs:
        x = s.h.check(x)
    return x


def composite_value(cbf: CompositeCBF, sys: ControlAffineSystem, x) -> float:
    """h(x) = softmin_rho(b_1(x), ..., b_l(x))."""
    return float(_compiled(cbf, sys)[0](_state(cbf, x)))


def composite_terms(cbf: CompositeCBF, sys: ControlAffineSystem, x) -> CBFTerms:
    h, lf, lg, b, w, levels = _compiled(cbf, sys)[1](_state(cbf, x))
    return CBFTerms(
        h=float(h),
        Lf_h=float(lf),
        Lg_h=np.asarray(lg),
        tops=np.asarray(b),
        weights=np.asarray(w),
        levels=tuple(np.asarray(lv) for lv in levels),
    )


def composite_lie_derivatives(cbf: CompositeCBF, sys: ControlAffineSystem, x) -> Tuple[float, float, np.ndarray]:
    """(h, L_f h, L_g h) with grad h = sum_j w_j grad b_j."""
    t = composite_terms(cbf, sys, x)
    return t.h, t.Lf_h, t.Lg_h


def membership_from_terms(cbf: CompositeCBF, terms: CBFTerms, tol: float = MEMBERSHIP_TOL) -> Membership:
    in_C = all(np.all(lv[: s.d - 1] >= -tol) for s, lv in zip(cbf.specs, terms.levels))
    return Membership(
        in_Ss=bool(np.all(terms.hj >= -tol)),
        in_S=bool(terms.h >= -tol),
        in_C=bool(in_C),
        per_level=terms.levels,
    )


def membership(cbf: CompositeCBF, sys: ControlAffineSystem, x, tol: float = MEMBERSHIP_TOL) -> Membership:
    """Membership of ``x`` in S_s, S and C, with every b_{j,i}(x) for logging."""
    return membership_from_terms(cbf, composite_terms(cbf, sys, x), tol)


@dataclass(frozen=True)
class DegreeAudit:
    """Worst-case residuals of the relative-degree conditions over sampled states."""

    label: str
    d: int
    max_lower: float
    min_decoupling: float
    tol: float = 1e-8

    @property
    def passed(self) -> bool:
        return self.max_lower < self.tol and self.min_decoupling > self.tol


@functools.lru_cache(maxsize=256)
def _compiled_audit(h: ScalarField, sys: ControlAffineSystem, d: int):
    rows = [input_lie_fn(lie_fn(h.fn, sys.f.fn, i), sys.g.fn) for i in range(d)]
    return jax.jit(jax.vmap(lambda x: jnp.stack([r(x) for r in rows])))


def relative_degree_audit(
    spec: BarrierSpec, sys: ControlAffineSystem, states: Sequence, tol: float = 1e-8
) -> DegreeAudit:
    """Check that L_g L_f^i h vanishes for i <= d-2 and L_g L_f^(d-1) h does not."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[1] != sys.n:
        raise DimensionError(f"states must have {sys.n} columns")
    rows = np.asarray(_compiled_audit(spec.h, sys, spec.d)(states))
    lower = np.abs(rows[:, : spec.d - 1, :]).max() if spec.d > 1 else 0.0
    decoupling = np.linalg.norm(rows[:, spec.d - 1, :], axis=-1).min()
    return DegreeAudit(spec.label, spec.d, float(lower), float(decoupling), tol)
