"""Quasiregular dynamics on sub-Riemannian spheres and lens spaces.

Modules
-------
manifolds        S^{2n+1}, lens spaces, contact form, horizontal frames, Heisenberg charts
ccdist           Carnot-Caratheodory distances (closed form, transcription, penalty oracle)
map_zoo          multi-twist maps, rotations, loxodromics, inversions, pushforwards
contact_flow     contact vector fields from potentials, flows, the trap interpolant
distortion       metric, eigenvalue, length and iterate distortion
trap_dynamics    the uniformly quasiregular trap map, orbits and Julia sets
mm_derivative    Pansu derivatives by dilation limits
tukia_structure  invariant conformal structures in the det-1 SPD symmetric space
cli              YAML-driven experiment runner
"""
from ._accel import backend_name, numba_enabled, set_threads
from .ccdist import DistanceOptions, cc_distance, lens_distance, sphere_distance
from .contact_flow import flow, libermann_field, model_interpolant, trap_interpolant, twist_potential
from .distortion import bld_ratio, eigen_distortion, iterate_distortion, metric_distortion
from .manifolds import (
    HorizontalPath, LensPoint, LensSpec, SpherePoint, heisenberg_chart, lens_project,
)
from .map_zoo import (
    MapHandle, compose, horizontal_matrix, inversion, lens_multi_twist, loxodromic, multi_twist,
    pullback_contact_factor, rotation, twist_preimages,
)
from .mm_derivative import GradedHom, hom_distortion, pansu_derivative, privileged_chart
from .trap_dynamics import UQRMap, build_trap, classify_orbit, julia_approx
from .tukia_structure import (
    SPDPoint, build_structure, chebyshev_center, invariance_residual, normalized_gram, orbit_set,
    spd_distance, spd_geodesic,
)

__version__ = "0.1.0"

__all__ = [
    "backend_name", "numba_enabled", "set_threads",
    "DistanceOptions", "cc_distance", "lens_distance", "sphere_distance",
    "flow", "libermann_field", "model_interpolant", "trap_interpolant", "twist_potential",
    "bld_ratio", "eigen_distortion", "iterate_distortion", "metric_distortion",
    "HorizontalPath", "LensPoint", "LensSpec", "SpherePoint", "heisenberg_chart", "lens_project",
    "MapHandle", "compose", "horizontal_matrix", "inversion", "lens_multi_twist", "loxodromic",
    "multi_twist", "pullback_contact_factor", "rotation", "twist_preimages",
    "GradedHom", "hom_distortion", "pansu_derivative", "privileged_chart",
    "UQRMap", "build_trap", "classify_orbit", "julia_approx",
    "SPDPoint", "build_structure", "chebyshev_center", "invariance_residual", "normalized_gram",
    "orbit_set", "spd_distance", "spd_geodesic",
]
