"""Benchmark least-squares problems with structured Jacobians.

Both families expose the problem contract the LM drivers expect:
``dim_params``, ``dim_residuals``, ``residuals(x)``, ``jacobian(x)`` and an
initial point ``x0``.
"""

from .ellipse import (
    EllipseProblem,
    ellipse_jacobian,
    ellipse_initial_guess,
    ellipse_jacobian_triplet,
    ellipse_residuals,
    generate_ellipse_data,
    load_ellipse_dataset,
    save_ellipse_dataset,
)
from .bundle import (
    BAProblem,
    ba_jacobian_structure,
    ba_jacobian_triplet,
    ba_residuals,
    bal_parse,
    bal_write,
    synthetic_ba_scene,
)

__all__ = [
    "EllipseProblem",
    "ellipse_residuals",
    "ellipse_jacobian",
    "ellipse_jacobian_triplet",
    "ellipse_initial_guess",
    "generate_ellipse_data",
    "save_ellipse_dataset",
    "load_ellipse_dataset",
    "BAProblem",
    "ba_residuals",
    "bal_parse",
    "bal_write",
    "ba_jacobian_structure",
    "ba_jacobian_triplet",
    "synthetic_ba_scene",
]
