"""Volume-preserving ball parameterizations and optimal transport maps of tetrahedral meshes."""

from .mesh import BALL_VOLUME, MeshError, TetMesh, build_mesh, folding_count, load_or_build, normalize_total_measure
from .stretch_laplacian import assemble, energy, energy_gradient, stretch_factors
from .vsem import SolverError, VsemConfig, parameterize
from .vomt import VomtConfig

__all__ = [
    "BALL_VOLUME", "MeshError", "SolverError", "TetMesh", "VomtConfig", "VsemConfig",
    "assemble", "build_mesh", "energy", "energy_gradient", "folding_count", "load_or_build",
    "normalize_total_measure", "parameterize", "stretch_factors",
]

__version__ = "0.1.0"
