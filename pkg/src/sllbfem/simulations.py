"""Built-in parameter sets, initial data and noise coefficients.

Field callables take coordinate arrays (``f(x)`` in 1D, ``f(x, y)`` in 2D)
and return three components.  They are module-level objects so studies can
ship them to worker processes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fem import FeField, l2_project
from .geometry import build_mesh
from .schemes import SchemeParams

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class AffineField:
    """Component c = table[c][0] + table[c][1] x (+ table[c][2] y)."""

    table: tuple[tuple[float, ...], ...]

    def __call__(self, *coords):
        out = []
        for row in self.table:
            val = row[0] + 0.0 * coords[0]
            for coef, x in zip(row[1:], coords):
                val = val + coef * x
            out.append(val)
        return tuple(out)


@dataclass(frozen=True)
class HelixField:
    """(offset, cos 2 pi x, sin 2 pi x): the 1D initial magnetisation."""

    offset: float = 0.0

    def __call__(self, x, *rest):
        return (self.offset + 0.0 * x, np.cos(TWO_PI * x), np.sin(TWO_PI * x))


def vortex(x, y):
    return (y, -x, 0.0 * x)


@dataclass(frozen=True)
class Simulation:
    name: str
    dim: int
    kappa1: float
    gamma: float
    kappa2: float
    mu: float
    u0: Callable
    g: Callable
    scheme: str

    def params(self, k: float, T: float, scheme: str | None = None, **controls) -> SchemeParams:
        return SchemeParams(self.kappa1, self.gamma, self.kappa2, self.mu, k, T,
                            scheme=scheme or self.scheme, **controls)

    def initial_field(self, n: int, u0: Callable | None = None) -> FeField:
        """u_h^0 as the L2 projection of the initial data."""
        return l2_project(build_mesh(self.dim, n), u0 or self.u0)

    def noise_field(self, n: int) -> FeField:
        return l2_project(build_mesh(self.dim, n), self.g)


NOISE_PRESETS = {
    "small": AffineField(((0.2, 0.0), (0.1, 0.1), (0.0, 0.0))),
    "moderate": AffineField(((0.5, 0.0), (0.3, 0.3), (0.0, 0.0))),
    "large": AffineField(((2.0, 0.0), (1.5, 1.5), (0.0, 0.0))),
}

SIM1 = Simulation("sim1", 1, 0.2, 4.0, 0.5, 1.0, HelixField(), NOISE_PRESETS["small"], "implicit")
SIM2 = Simulation(
    "sim2", 2, 0.5, 2.0, 0.2, 1.0, vortex,
    AffineField(((0.5, 0.5, 0.0), (0.25, 0.0, 0.25), (0.0, 0.0, 0.0))),
    "semi_implicit",
)
SIM3 = Simulation("sim3", 1, 0.2, 4.0, 0.5, 1.0, HelixField(), NOISE_PRESETS["small"], "semi_implicit")

SIMULATIONS = {s.name: s for s in (SIM1, SIM2, SIM3)}


def get_simulation(name: str) -> Simulation:
    try:
        return SIMULATIONS[name]
    except KeyError:
        raise ValueError(f"unknown simulation {name!r}; expected one of {sorted(SIMULATIONS)}") from None
