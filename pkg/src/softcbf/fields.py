"""Smooth fields over the state space and their Lie derivatives.

Fields wrap plain callables written against ``jax.numpy``. Derivatives are
obtained by nesting forward-mode JVPs, so a field built from smooth
primitives can be differentiated as often as a barrier chain needs. Each
wrapped callable is jit-compiled once per field object.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import jax
import jax.numpy as jnp
import numpy as np

MAX_ORDER = 4

Array = Union[np.ndarray, jax.Array]


class DimensionError(ValueError):
    """State or field dimensions do not match."""


class DomainError(ValueError):
    """A field was evaluated on its singular locus."""


class LieOrderError(ValueError):
    """Requested derivative order exceeds the configured nesting depth."""


def _as_state(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise DimensionError(f"expected state of shape ({n},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DimensionError(f"state must be finite, got {x}")
    return x


class ScalarField:
    """A smooth map from R^n to R.

    Args:
        fn: traceable callable taking a length-``dim_in`` array.
        dim_in: state dimension.
        label: identifier used in logs and reports.
        singular: optional predicate on a concrete state returning True where
            ``fn`` is not differentiable (e.g. the center of a p-norm).
    """

    def __init__(
        self,
        fn: Callable,
        dim_in: int,
        label: str = "",
        singular: Optional[Callable[[np.ndarray], bool]] = None,
    ):
        if dim_in <= 0:
            raise DimensionError(f"dim_in must be positive, got {dim_in}")
        self.fn = fn
        self.dim_in = int(dim_in)
        self.label = label
        self.singular = singular

    def __repr__(self) -> str:
        return f"ScalarField({self.label or self.fn!r}, dim_in={self.dim_in})"

    @functools.cached_property
    def _eval(self):
        return jax.jit(self.fn)

    @functools.cached_property
    def _grad(self):
        return jax.jit(jax.jacfwd(self.fn))

    def check(self, x) -> np.ndarray:
        x = _as_state(x, self.dim_in)
        if self.singular is not None and self.singular(x):
            raise DomainError(f"{self.label or 'field'} is singular at {x}")
        return x

    def __call__(self, x) -> float:
        return float(self._eval(self.check(x)))


class VectorField:
    """A smooth map from R^n to an array of shape ``shape_out``.

    The input matrix of a control-affine system is a VectorField with
    ``shape_out = (n, m)``.
    """

    def __init__(self, fn: Callable, dim_in: int, shape_out: Union[int, Sequence[int]], label: str = ""):
        if isinstance(shape_out, int):
            shape_out = (shape_out,)
        self.fn = fn
        self.dim_in = int(dim_in)
        self.shape_out = tuple(int(s) for s in shape_out)
        self.label = label

    @property
    def dim_out(self) -> int:
        return int(np.prod(self.shape_out))

    def __repr__(self) -> str:
        return f"VectorField({self.label or self.fn!r}, {self.dim_in} -> {self.shape_out})"

    @functools.cached_property
    def _eval(self):
        return jax.jit(self.fn)

    def __call__(self, x) -> np.ndarray:
        out = np.asarray(self._eval(_as_state(x, self.dim_in)))
        if out.shape != self.shape_out:
            raise DimensionError(f"{self!r} returned shape {out.shape}")
        return out


@dataclass(frozen=True, eq=False)
class ControlAffineSystem:
    """Dynamics x' = f(x) + g(x) u with x in R^n and u in R^m."""

    f: VectorField
    g: VectorField

    def __post_init__(self):
        n = self.f.dim_in
        if self.f.shape_out != (n,):
            raise DimensionError(f"drift must map R^{n} -> R^{n}, got {self.f.shape_out}")
        if self.g.dim_in != n or len(self.g.shape_out) != 2 or self.g.shape_out[0] != n:
            raise DimensionError(f"input matrix must map R^{n} -> R^({n}x m), got {self.g.shape_out}")

    @property
    def n(self) -> int:
        return self.f.dim_in

    @property
    def m(self) -> int:
        return self.g.shape_out[1]

    def rhs(self, x, u):
        """Traceable closed-loop vector field f(x) + g(x) u."""
        return self.f.fn(x) + self.g.fn(x) @ u

    @functools.cached_property
    def _rhs(self):
        return jax.jit(self.rhs)

    def __call__(self, x, u) -> np.ndarray:
        x = _as_state(x, self.n)
        return np.asarray(self._rhs(x, jnp.asarray(u, dtype=float)))


# Traceable builders. These operate on raw callables so they can be nested
# inside each other and inside jit.


def lie_pair(fn: Callable, vf: Callable) -> Callable:
    """Return x -> (fn(x), L_vf fn(x)) via a single forward-mode JVP."""

    def pair(x):
        return jax.jvp(fn, (x,), (vf(x),))

    return pair


def _lie_once(fn: Callable, vf: Callable) -> Callable:
    def lf(x):
        return jax.jvp(fn, (x,), (vf(x),))[1]

    return lf


def lie_fn(fn: Callable, vf: Callable, order: int = 1) -> Callable:
    """Return the traceable callable x -> L_vf^order fn(x)."""
    for _ in range(order):
        fn = _lie_once(fn, vf)
    return fn


def input_lie_fn(fn: Callable, g: Callable) -> Callable:
    """Return x -> fn'(x) g(x); scalar fn gives a length-m row."""

    def lg(x):
        return jnp.tensordot(jax.jacfwd(fn)(x), g(x), axes=1)

    return lg


@functools.lru_cache(maxsize=512)
def _compiled_lie(field: ScalarField, sys: ControlAffineSystem, order: int, along):
    drift = lie_fn(field.fn, sys.f.fn, order if along == "drift" else order - 1)
    if along == "drift":
        return jax.jit(drift)
    row = input_lie_fn(drift, sys.g.fn)
    if along == "input":
        return jax.jit(row)
    return jax.jit(lambda x: row(x)[along])


def gradient(field: ScalarField, x) -> np.ndarray:
    """Gradient of a scalar field at ``x`` as a length-n covector."""
    return np.asarray(field._grad(field.check(x)))


def lie_derivative(
    field: ScalarField,
    sys: ControlAffineSystem,
    x,
    order: int = 1,
    along: Union[str, int] = "drift",
    max_order: int = MAX_ORDER,
):
    """Iterated Lie derivative of ``field`` along the system's vector fields.

    ``along="drift"`` returns L_f^order field(x). ``along="input"`` returns the
    row L_g L_f^(order-1) field(x) of length m, and an integer ``along=k``
    returns its k-th entry.
    """
    if field.dim_in != sys.n:
        raise DimensionError(f"field over R^{field.dim_in} used with system over R^{sys.n}")
    if not 0 <= order <= max_order:
        raise LieOrderError(f"order {order} outside [0, {max_order}]")
    if along != "drift":
        if order < 1:
            raise LieOrderError("input Lie derivatives need order >= 1")
        if along != "input" and not (isinstance(along, int) and 0 <= along < sys.m):
            raise ValueError(f"along must be 'drift', 'input' or a column in [0, {sys.m}), got {along!r}")
    x = field.check(x)
    out = np.asarray(_compiled_lie(field, sys, int(order), along)(x))
    return float(out) if out.ndim == 0 else out


def lie_field(field: ScalarField, sys: ControlAffineSystem, order: int = 1) -> ScalarField:
    """Wrap x -> L_f^order field(x) as a new ScalarField."""
    if not 0 <= order <= MAX_ORDER:
        raise LieOrderError(f"order {order} outside [0, {MAX_ORDER}]")
    label = f"L_f^{order} {field.label}" if field.label else ""
    return ScalarField(lie_fn(field.fn, sys.f.fn, order), field.dim_in, label, field.singular)


def central_difference(fn: Callable[[np.ndarray], float], x, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient; the validation oracle for all derivatives."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        grad[i] = (fn(x + e) - fn(x - e)) / (2 * step)
    return grad
