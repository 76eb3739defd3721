"""Vortex-density variational problems on staggered grids.

Solvers for the limiting superconductor (magnetic-field) and
Bose-Einstein (rotational forcing) vortex-density models: primal-dual
total-variation minimization, dual obstacle certificates, nonlocal
dual norms, and critical applied-field / critical-rotation thresholds.
"""

from vdlab.grids import (
    FormField,
    GridSpec,
    MaskedDomain,
    codifferential,
    exterior_derivative,
    grouped_tv,
    inner_product,
    mask_extend,
    mask_restrict,
)

__all__ = [
    "FormField",
    "GridSpec",
    "MaskedDomain",
    "codifferential",
    "exterior_derivative",
    "grouped_tv",
    "inner_product",
    "mask_extend",
    "mask_restrict",
]

__version__ = "0.1.0"
