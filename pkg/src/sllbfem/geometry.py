"""Uniform meshes of the unit interval and the unit square.

Meshes are immutable and hashed by identity, so per-mesh caches (assembled
matrices, factorizations) can key on them directly.  ``build_mesh_1d`` and
``build_mesh_2d`` memoize, so asking twice for the same resolution returns
the same object.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True, eq=False)
class Mesh1D:
    """Uniform partition of [0, 1] into ``n_cells`` intervals."""

    n_cells: int
    h: float
    nodes: np.ndarray   # (n_nodes,)
    cells: np.ndarray   # (n_cells, 2) node indices, left to right

    dim = 1

    @property
    def n_nodes(self) -> int:
        return self.n_cells + 1

    @property
    def n_elements(self) -> int:
        return self.n_cells

    @property
    def elements(self) -> np.ndarray:
        return self.cells

    @property
    def resolution(self) -> int:
        return self.n_cells

    def measures(self) -> np.ndarray:
        return np.diff(self.nodes)

    def __repr__(self) -> str:
        return f"Mesh1D(n_cells={self.n_cells})"


@dataclass(frozen=True, eq=False)
class Mesh2D:
    """Structured triangulation of [0, 1]^2.

    Node ``(i, j)`` sits at ``(i*h, j*h)`` with index ``i + j*(n+1)``.  Each
    square is cut along its lower-left to upper-right diagonal; both
    triangles are stored counter-clockwise.
    """

    n_per_side: int
    h: float
    nodes: np.ndarray       # (n_nodes, 2)
    triangles: np.ndarray   # (2 n^2, 3)

    dim = 2

    @property
    def n_nodes(self) -> int:
        return (self.n_per_side + 1) ** 2

    @property
    def n_elements(self) -> int:
        return 2 * self.n_per_side**2

    @property
    def elements(self) -> np.ndarray:
        return self.triangles

    @property
    def resolution(self) -> int:
        return self.n_per_side

    def measures(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def __repr__(self) -> str:
        return f"Mesh2D(n_per_side={self.n_per_side})"


Mesh = Mesh1D | Mesh2D


def _check_count(n, what: str) -> int:
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise ValueError(f"{what} must be a positive integer, got {n!r}")
    return int(n)


@lru_cache(maxsize=None)
def build_mesh_1d(n_cells: int) -> Mesh1D:
    n = _check_count(n_cells, "n_cells")
    idx = np.arange(n + 1)
    nodes = idx / n
    nodes.flags.writeable = False
    cells = np.column_stack([idx[:-1], idx[1:]])
    cells.flags.writeable = False
    return Mesh1D(n_cells=n, h=1.0 / n, nodes=nodes, cells=cells)


@lru_cache(maxsize=None)
def build_mesh_2d(n_per_side: int) -> Mesh2D:
    n = _check_count(n_per_side, "n_per_side")
    ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="xy")
    nodes = np.column_stack([ii.ravel() / n, jj.ravel() / n])
    nodes.flags.writeable = False

    ci, cj = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    a = (ci + cj * (n + 1)).ravel()
    b = a + 1
    c = a + n + 2
    d = a + n + 1
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([a, b, c])
    tris[1::2] = np.column_stack([a, c, d])
    tris.flags.writeable = False
    return Mesh2D(n_per_side=n, h=1.0 / n, nodes=nodes, triangles=tris)


def build_mesh(dim: int, n: int) -> Mesh:
    if dim == 1:
        return build_mesh_1d(n)
    if dim == 2:
        return build_mesh_2d(n)
    raise ValueError(f"unsupported dimension {dim}")


def refinement_ratio(coarse: Mesh, fine: Mesh) -> int:
    """Integer ratio ``n_fine / n_coarse`` of a nested pair; raises otherwise."""
    if coarse.dim != fine.dim:
        raise ValueError("meshes have different dimensions")
    nc, nf = coarse.resolution, fine.resolution
    if nf % nc:
        raise ValueError(f"mesh with n={nf} is not a nested refinement of n={nc}")
    return nf // nc


def prolong_values(values: np.ndarray, coarse: Mesh, fine: Mesh) -> np.ndarray:
    """Evaluate the coarse P1 function with nodal ``values`` at the fine nodes.

    ``values`` has shape (coarse.n_nodes, ...) and the result has shape
    (fine.n_nodes, ...).
    """
    r = refinement_ratio(coarse, fine)
    values = np.asarray(values, dtype=float)
    if values.shape[0] != coarse.n_nodes:
        raise ValueError("values do not live on the coarse mesh")
    if r == 1:
        return values.copy()
    nc = coarse.resolution
    tail = (slice(None),) + (None,) * (values.ndim - 1)
    if coarse.dim == 1:
        i = np.arange(fine.n_nodes)
        cell = np.minimum(i // r, nc - 1)
        s = ((i - cell * r) / r)[tail]
        return (1.0 - s) * values[cell] + s * values[cell + 1]

    nf = fine.resolution
    fi, fj = np.meshgrid(np.arange(nf + 1), np.arange(nf + 1), indexing="xy")
    fi, fj = fi.ravel(), fj.ravel()
    ci = np.minimum(fi // r, nc - 1)
    cj = np.minimum(fj // r, nc - 1)
    s = (fi - ci * r) / r
    t = (fj - cj * r) / r
    a = ci + cj * (nc + 1)
    va, vb = values[a], values[a + 1]
    vc, vd = values[a + nc + 2], values[a + nc + 1]
    lower = (s >= t)[tail]
    s, t = s[tail], t[tail]
    # lower triangle (a, b, c) for s >= t, upper (a, c, d) otherwise
    v_low = va + s * (vb - va) + t * (vc - vb)
    v_up = va + t * (vd - va) + s * (vc - vd)
    return np.where(lower, v_low, v_up)
