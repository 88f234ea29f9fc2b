"""Stokes flow on polygonal domains with re-entrant corners.

Equal-order stabilized elements with local energy correction at corners,
an all-at-once Uzawa multigrid with algorithm-based fault recovery, and
locally conservative flux postprocessing feeding a finite-volume
transport solver on the barycentric dual mesh.
"""

from .meshing import (
    TriMesh,
    MeshHierarchy,
    build_initial_domain,
    refine_uniform,
    corner_layers,
    read_mesh,
    write_mesh,
)
from .corners import solve_corner_eigenvalues, make_singular_pair, weighted_norm
from .stokes import StokesSystem, assemble_stokes, solve_direct, energy_defect
from .gamma_fit import solve_gamma_newton, estimate_gamma_star
from .multigrid import MGHierarchy, UzawaSmoother, vcycle_solve, scg_solve
from .dualmesh import DualMesh, build_dual
from .conservation import corrected_flux, check_local_conservation
from .transport import transport_step, run_transport

__all__ = [
    "TriMesh",
    "MeshHierarchy",
    "build_initial_domain",
    "refine_uniform",
    "corner_layers",
    "read_mesh",
    "write_mesh",
    "solve_corner_eigenvalues",
    "make_singular_pair",
    "weighted_norm",
    "StokesSystem",
    "assemble_stokes",
    "solve_direct",
    "energy_defect",
    "solve_gamma_newton",
    "estimate_gamma_star",
    "MGHierarchy",
    "UzawaSmoother",
    "vcycle_solve",
    "scg_solve",
    "DualMesh",
    "build_dual",
    "corrected_flux",
    "check_local_conservation",
    "transport_step",
    "run_transport",
]
