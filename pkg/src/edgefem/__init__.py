"""Lowest-order edge-element solver for the time-harmonic curl-curl problem.

The package solves -omega^2 eps E + curl(nu curl E) = J on tetrahedral
meshes of axis-aligned boxes with perfectly conducting walls, and ships a
verification harness that measures the stability and approximation factors
entering quasi-optimality bounds for the Galerkin error.
"""

from edgefem.mesh import TetMesh, build_box_mesh, uniform_refine

__all__ = ["TetMesh", "build_box_mesh", "uniform_refine"]
__version__ = "0.1.0"
