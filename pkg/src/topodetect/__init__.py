"""Detection of small conductivity inclusions in a semilinear Neumann problem via the topological gradient."""

from .fem import F1, F2, F3, F4, InclusionSpec, SourceTerm
from .mesh import BoundaryPartition, Mesh, build_partition, generate_disk_mesh, load_mesh, save_mesh
from .recon import Measurement, ReconConfig, run_algorithm1, run_algorithm2, run_algorithm3
from .solver import NewtonConfig, solve_forward
from .synth import NoiseSpec, generate_measurement, run_campaign

__version__ = "0.1.0"

__all__ = [
    "F1", "F2", "F3", "F4", "InclusionSpec", "SourceTerm",
    "BoundaryPartition", "Mesh", "build_partition", "generate_disk_mesh", "load_mesh", "save_mesh",
    "Measurement", "ReconConfig", "run_algorithm1", "run_algorithm2", "run_algorithm3",
    "NewtonConfig", "solve_forward", "NoiseSpec", "generate_measurement", "run_campaign",
]
