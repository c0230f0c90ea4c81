from math import factorial

import numpy as np
import pytest

from sllbfem.quadrature import interval_rule, triangle_rule


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_interval_exactness(n):
    lam, w = interval_rule(n)
    x = lam[:, 1]
    for p in range(2 * n):
        assert np.dot(w, x**p) == pytest.approx(1 / (p + 1), abs=1e-14)


@pytest.mark.parametrize("deg", [1, 2, 3, 4, 6])
def test_triangle_exactness(deg):
    lam, w = triangle_rule(deg)
    assert np.all(w > 0) and np.allclose(lam.sum(axis=1), 1)
    # int_T l1^a l2^b l0^c / |T| = 2 a! b! c! / (a+b+c+2)!
    for a in range(deg + 1):
        for b in range(deg + 1 - a):
            c = deg - a - b
            exact = 2 * factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 2)
            assert np.dot(w, lam[:, 1] ** a * lam[:, 2] ** b * lam[:, 0] ** c) == pytest.approx(exact, abs=1e-14)
