"""Element quadrature rules in barycentric form.

A rule is a pair ``(lam, w)``: ``lam`` has shape (m, d+1) with the
barycentric coordinates of the points, ``w`` has shape (m,) and sums to 1,
so that the integral over an element is ``measure * sum(w * f(points))``.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def interval_rule(n_points: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre with ``n_points`` points, exact to degree 2n-1."""
    x, w = np.polynomial.legendre.leggauss(n_points)
    s = 0.5 * (x + 1.0)
    lam = np.column_stack([1.0 - s, s])
    return lam, 0.5 * w


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed (Stroud conical product) rule exact to total ``degree``."""
    n = max(1, (degree + 2) // 2)
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xl, wl = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (1.0 + xj)
    wu = 0.25 * wj
    v = 0.5 * (1.0 + xl)
    wv = 0.5 * wl
    U, V = np.meshgrid(u, v, indexing="ij")
    x = U.ravel()
    y = ((1.0 - U) * V).ravel()
    w = np.outer(wu, wv).ravel()
    lam = np.column_stack([1.0 - x - y, x, y])
    # reference triangle has area 1/2
    return lam, 2.0 * w


def element_rule(dim: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    if dim == 1:
        return interval_rule(max(1, (degree + 2) // 2))
    return triangle_rule(degree)
