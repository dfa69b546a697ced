"""Reduced-order deformable-body simulation toolkit.

Full-space FEM snapshot generation, mass-weighted PCA, a symmetric convex
neural decoder with linear and vanilla-autoencoder baselines, reduced-space
implicit dynamics with cubature and SDF collision, benchmark drivers, and a
real-time simulation service.
"""

__version__ = "0.1.0"

from .elastic import Material  # noqa: F401
from .fullsolver import ForceScenario, FullState, generate_snapshots, step_full  # noqa: F401
from .mesh import TetMesh, load_mesh, lump_mass, make_bar_mesh  # noqa: F401
from .reducedsim import ReducedSim, ReducedState, quasi_static_relax, step_reduced  # noqa: F401
from .subspace import compute_pca  # noqa: F401
from .trainer import TrainConfig, train  # noqa: F401
