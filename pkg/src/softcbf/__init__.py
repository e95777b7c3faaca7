"""Composite soft-minimum control barrier functions with input-constraint augmentation."""

import jax

jax.config.update("jax_enable_x64", True)

from .cbf_chain import (  # noqa: E402
    AlphaFunction,
    BarrierSpec,
    CompositeCBF,
    chain_value,
    composite_lie_derivatives,
    composite_value,
    membership,
)
from .fields import ControlAffineSystem, ScalarField, VectorField, gradient, lie_derivative  # noqa: E402
from .safety_filter import FilterProblem, FilterSolution, solve_filter  # noqa: E402
from .softmin import softmin, softmin_weights  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "AlphaFunction",
    "BarrierSpec",
    "CompositeCBF",
    "ControlAffineSystem",
    "FilterProblem",
    "FilterSolution",
    "ScalarField",
    "VectorField",
    "chain_value",
    "composite_lie_derivatives",
    "composite_value",
    "gradient",
    "lie_derivative",
    "membership",
    "softmin",
    "softmin_weights",
    "solve_filter",
]
