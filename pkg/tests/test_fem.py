import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sllbfem.fem import (
    FeField, assemble_cross_convection, assemble_cross_mass, assemble_cubic_weight, assemble_double_cross,
    assemble_mass, assemble_noise_rhs, assemble_stiffness, blockify, discrete_laplacian, inner, interpolate,
    l2_project, norms, space,
)
from sllbfem.geometry import build_mesh, build_mesh_1d, build_mesh_2d
from sllbfem.simulations import HelixField

MESHES = [build_mesh_1d(7), build_mesh_2d(5)]


def _rand(mesh, rng, scale=1.0):
    return scale * rng.normal(size=(mesh.n_nodes, 3))


def test_field_validation():
    m = build_mesh_1d(2)
    with pytest.raises(ValueError):
        FeField(m, np.zeros((2, 3)))
    with pytest.raises(ValueError):
        FeField(m, np.full((3, 3), np.nan))


def test_mass_rows_1d():
    h = 1 / 8
    M = assemble_mass(build_mesh_1d(8)).toarray()
    assert np.allclose(M[3, 2:5], [h / 6, 2 * h / 3, h / 6], atol=1e-15)
    assert np.allclose(M.sum(axis=1)[1:-1], h, atol=1e-15)
    assert M.sum() == pytest.approx(1.0, abs=1e-14)


def test_stiffness_rows_1d():
    h = 1 / 8
    S = assemble_stiffness(build_mesh_1d(8)).toarray()
    assert np.allclose(S[3, 2:5], [-1 / h, 2 / h, -1 / h], atol=1e-12)


@pytest.mark.parametrize("mesh", MESHES, ids=["1d", "2d"])
def test_mass_spd(mesh):
    M = assemble_mass(mesh).toarray()
    assert np.allclose(M, M.T, atol=0)
    assert np.linalg.eigvalsh(M).min() > 0
    assert M.sum() == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("mesh", MESHES, ids=["1d", "2d"])
def test_stiffness_kernel_is_constants(mesh):
    S = assemble_stiffness(mesh).toarray()
    assert np.max(np.abs(S @ np.ones(mesh.n_nodes))) <= 1e-12
    ev = np.linalg.eigvalsh(S)
    assert ev[0] == pytest.approx(0.0, abs=1e-10) and ev[1] > 1e-6


@pytest.mark.parametrize("mesh", MESHES, ids=["1d", "2d"])
def test_cross_convection_skew(mesh, rng):
    w = _rand(mesh, rng)
    C = assemble_cross_convection(mesh, w)
    assert abs(C + C.T).max() <= 1e-13
    v = rng.normal(size=3 * mesh.n_nodes)
    assert abs(v @ (C @ v)) <= 1e-12 * np.dot(v, v)
    assert assemble_cross_convection(mesh, np.zeros((mesh.n_nodes, 3))).count_nonzero() == 0


@pytest.mark.parametrize("mesh", MESHES, ids=["1d", "2d"])
def test_cross_mass_skew(mesh, rng):
    X = assemble_cross_mass(mesh, _rand(mesh, rng))
    assert abs(X + X.T).max() <= 1e-13


@pytest.mark.parametrize("mesh", MESHES, ids=["1d", "2d"])
def test_cubic_weight(mesh, rng):
    M = assemble_mass(mesh)
    assert assemble_cubic_weight(mesh, np.zeros((mesh.n_nodes, 3))).count_nonzero() == 0
    A = assemble_cubic_weight(mesh, np.tile([0.6, 0.0, 0.8], (mesh.n_nodes, 1)))
    assert abs(A - M).max() <= 1e-15
    A = assemble_cubic_weight(mesh, _rand(mesh, rng))
    v = rng.normal(size=mesh.n_nodes)
    assert v @ (A @ v) >= 0


@pytest.mark.parametrize("mesh", MESHES, ids=["1d", "2d"])
def test_double_cross_nonpositive(mesh, rng):
    Q = assemble_double_cross(mesh, _rand(mesh, rng))
    v = rng.normal(size=3 * mesh.n_nodes)
    assert v @ (Q @ v) <= 1e-14
    assert abs(Q - Q.T).max() <= 1e-14


@pytest.mark.parametrize("mesh", MESHES, ids=["1d", "2d"])
def test_noise_rhs(mesh, rng):
    M = assemble_mass(mesh)
    g = _rand(mesh, rng)
    corr, diff = assemble_noise_rhs(mesh, np.zeros_like(g), g, kappa1=0.3, gamma=2.0)
    assert not np.any(corr) and np.allclose(diff, 0.3 * (M @ g), atol=1e-14)
    corr, diff = assemble_noise_rhs(mesh, _rand(mesh, rng), np.zeros_like(g), 0.3, 2.0)
    assert not np.any(corr) and not np.any(diff)
    corr, diff = assemble_noise_rhs(mesh, 2.5 * g, g, 0.3, 2.0)
    assert np.max(np.abs(corr)) <= 1e-14 and np.allclose(diff, 0.3 * (M @ g), atol=1e-14)


@pytest.mark.parametrize("dim", [1, 2])
def test_projection_reproduces_affine(dim):
    mesh = build_mesh(dim, 4)
    const = l2_project(mesh, lambda *x: (1.0, -2.0, 0.5))
    assert np.allclose(const.values, [1.0, -2.0, 0.5], atol=1e-13)
    f = lambda x, *y: (1 + 2 * x, -x, 3.0)
    assert np.max(np.abs(l2_project(mesh, f).values - interpolate(mesh, f).values)) <= 1e-13


@pytest.mark.parametrize("mesh", MESHES, ids=["1d", "2d"])
def test_galerkin_orthogonality(mesh, rng):
    V = space(mesh)
    f = (lambda x: (np.sin(3 * x), np.exp(x), x**3)) if mesh.dim == 1 else (
        lambda x, y: (np.sin(3 * x) * y, np.exp(x - y), x**2 * y))
    p = l2_project(mesh, f)
    rule_pts = V.quad_points(V_rule := (__import__("sllbfem.quadrature", fromlist=["x"]).element_rule(mesh.dim, 8)))
    fq = np.stack(np.broadcast_arrays(*f(*[rule_pts[..., d] for d in range(mesh.dim)])), axis=-1)
    resid_q = fq - V.at_quad(p.values, V_rule)
    # <f - Pi f, phi_i> for every basis function, evaluated with a finer rule
    loads = V.load(resid_q, V_rule)
    assert np.max(np.abs(loads)) <= 1e-10


def test_projection_rate_h2():
    errs = []
    for n in (4, 8, 16, 32, 64):
        mesh = build_mesh_1d(n)
        V = space(mesh)
        from sllbfem.quadrature import interval_rule
        rule = interval_rule(6)
        p = l2_project(mesh, HelixField())
        x = V.quad_points(rule)[..., 0]
        fq = np.stack(HelixField()(x), axis=-1)
        e = fq - V.at_quad(p.values, rule)
        errs.append(np.sqrt(V.integrate(np.einsum("eqc,eqc->eq", e, e), rule)))
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    # h = 1/4 is pre-asymptotic; from h = 1/8 on the rate is 2
    assert np.all(np.abs(rates[1:] - 2) < 0.1), rates


def test_discrete_laplacian(rng):
    mesh = build_mesh_1d(12)
    assert np.max(np.abs(discrete_laplacian(mesh, np.tile([1.0, 2.0, 3.0], (13, 1))).values)) <= 1e-12
    for _ in range(5):
        v = FeField(mesh, rng.normal(size=(13, 3)))
        w = discrete_laplacian(mesh, v)
        nv = norms(v)
        assert inner(w, v) == pytest.approx(-nv.h1_semi**2, rel=1e-10)
        assert nv.h1_semi**2 <= nv.l2 * norms(w).l2 * (1 + 1e-12)


@pytest.mark.parametrize("dim", [1, 2])
def test_norms_of_constant(dim):
    nm = norms(FeField.constant(build_mesh(dim, 3), (1.0, 0.0, 0.0)))
    assert nm.l2 == pytest.approx(1.0, abs=1e-14)
    assert nm.h1_semi == pytest.approx(0.0, abs=1e-7)
    assert nm.l4 == pytest.approx(1.0, abs=1e-14)


def test_norm_of_projected_helix():
    l2 = [norms(l2_project(build_mesh_1d(n), HelixField())).l2 for n in (4, 16, 64)]
    gaps = np.abs(np.array(l2) - 1.0)
    assert gaps[-1] < 1e-3 and np.all(np.diff(gaps) < 0)


@settings(max_examples=25, deadline=None)
@given(c=st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3), seed=st.integers(0, 2**31), dim=st.sampled_from([1, 2]))
def test_norm_homogeneity(c, seed, dim):
    mesh = build_mesh(dim, 3)
    v = FeField(mesh, np.random.default_rng(seed).normal(size=(mesh.n_nodes, 3)))
    a, b = norms(v), norms(v * c)
    assert b.l2 == pytest.approx(abs(c) * a.l2, rel=1e-12)
    assert b.h1_semi == pytest.approx(abs(c) * a.h1_semi, rel=1e-12)
    assert b.l4**4 == pytest.approx(c**4 * a.l4**4, rel=1e-11)


def test_blockify_matches_block_mass(rng):
    mesh = build_mesh_2d(3)
    M = assemble_mass(mesh)
    v = rng.normal(size=(mesh.n_nodes, 3))
    assert np.allclose((blockify(M) @ v.ravel()).reshape(-1, 3), M @ v, atol=1e-15)
