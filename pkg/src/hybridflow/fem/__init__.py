"""Finite element machinery for the near-wall subdomain.

Triangle meshes, the Taylor-Hood velocity/pressure space, and the
incremental pressure-correction Navier-Stokes stepper.
"""

from .mesh import (
    OUTER,
    WALL,
    TriMesh,
    annulus_mesh,
    boundary_loops,
    ellipse_annulus_mesh,
    graded_points,
    mesh_info,
    read_mesh,
    rect_mesh,
    write_mesh,
)
from .space import TaylorHoodSpace
from .ipcs import FeState, IPCSSolver

__all__ = [
    "WALL",
    "OUTER",
    "TriMesh",
    "read_mesh",
    "write_mesh",
    "rect_mesh",
    "annulus_mesh",
    "ellipse_annulus_mesh",
    "graded_points",
    "boundary_loops",
    "mesh_info",
    "TaylorHoodSpace",
    "FeState",
    "IPCSSolver",
]
