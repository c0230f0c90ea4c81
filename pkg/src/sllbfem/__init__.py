"""Finite element schemes and Monte Carlo experiments for the stochastic
Landau-Lifshitz-Bloch equation in one and two space dimensions."""

__version__ = "0.1.0"

from .fem import FeField, l2_project, norms
from .geometry import build_mesh_1d, build_mesh_2d
from .noise import NoisePath, coarsen, generate
from .schemes import SchemeParams, StepFailure, implicit_step, run_trajectory, semi_implicit_step

__all__ = [
    "FeField", "NoisePath", "SchemeParams", "StepFailure", "build_mesh_1d", "build_mesh_2d",
    "coarsen", "generate", "implicit_step", "l2_project", "norms", "run_trajectory",
    "semi_implicit_step",
]
