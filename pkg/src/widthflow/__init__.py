"""Numerical doubly monotone flow of constant width bodies in three dimensions.

A width-one body is stored by the odd harmonic expansion of
``g = h - 1/2``, where ``h`` is its support function.  The flow is the
implicit time scheme in :mod:`widthflow.flow_engine`; each step is a
conic program solved by :mod:`widthflow.conic`.
"""

from .convex_program import (
    DualFunctional,
    chi_star,
    dual_norm,
    duality_select,
    e_star,
    energy,
    energy_gradient,
    quotient_norm,
    solve_step,
)
from .flow_engine import FlowTrace, run_flow
from .mollifier import DiscreteMeasure, cap_kernel, mollify, mollify_error
from .sphere_grid import build_grid, default_table, harmonic_table, integrate
from .width_body import (
    WidthBody,
    circumradius,
    export_mesh,
    inradius,
    make_zonal_reuleaux,
    random_body,
    shrink_to_feasible,
    surface_area,
    volume,
)

__version__ = "0.1.0"

__all__ = [
    "DualFunctional", "chi_star", "dual_norm", "duality_select", "e_star", "energy",
    "energy_gradient", "quotient_norm", "solve_step", "FlowTrace", "run_flow",
    "DiscreteMeasure", "cap_kernel", "mollify", "mollify_error", "build_grid",
    "default_table", "harmonic_table", "integrate", "WidthBody", "circumradius",
    "export_mesh", "inradius", "make_zonal_reuleaux", "random_body",
    "shrink_to_feasible", "surface_area", "volume",
]
