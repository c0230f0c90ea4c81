"""Vector-valued P1 finite elements on 1D and 2D meshes.

Nodal fields are ``(n_nodes, 3)`` arrays.  Scalar-block operators (mass,
stiffness, cubic weight) are ``n x n`` sparse matrices applied to every
component at once; operators that mix components (cross products) are
``3n x 3n`` with unknowns ordered node by node, i.e. they act on
``values.ravel()``.

Every integral is done with a rule exact for its integrand, so discrete
identities built from these pieces hold to roundoff.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from weakref import WeakKeyDictionary

import numpy as np
import scipy.sparse as sp

from .geometry import Mesh, prolong_values, refinement_ratio
from .linsolve import Factorization, LinearSolveError
from .quadrature import element_rule, interval_rule, triangle_rule

# LEVI[a, b, c] = epsilon_{abc}
LEVI = np.zeros((3, 3, 3))
LEVI[0, 1, 2] = LEVI[1, 2, 0] = LEVI[2, 0, 1] = 1.0
LEVI[0, 2, 1] = LEVI[2, 1, 0] = LEVI[1, 0, 2] = -1.0



@dataclass(frozen=True, eq=False)
class FeField:
    """A P1 function with values in R^3."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.mesh.n_nodes, 3):
            raise ValueError(
                f"expected values of shape ({self.mesh.n_nodes}, 3), got {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("field has non-finite entries")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, mesh: Mesh, value) -> "FeField":
        return cls(mesh, np.tile(np.asarray(value, dtype=float), (mesh.n_nodes, 1)))

    @classmethod
    def zeros(cls, mesh: Mesh) -> "FeField":
        return cls(mesh, np.zeros((mesh.n_nodes, 3)))

    def __add__(self, other: "FeField") -> "FeField":
        _same_mesh(self, other)
        return FeField(self.mesh, self.values + other.values)

    def __sub__(self, other: "FeField") -> "FeField":
        _same_mesh(self, other)
        return FeField(self.mesh, self.values - other.values)

    def __mul__(self, c: float) -> "FeField":
        return FeField(self.mesh, c * self.values)

    __rmul__ = __mul__


def _same_mesh(*fields: FeField) -> Mesh:
    mesh = fields[0].mesh
    for f in fields[1:]:
        if f.mesh is not mesh:
            raise ValueError("fields live on different meshes")
    return mesh


def _values_on(mesh: Mesh, f) -> np.ndarray:
    if isinstance(f, FeField):
        if f.mesh is not mesh:
            raise ValueError("field lives on a different mesh")
        return f.values
    v = np.asarray(f, dtype=float)
    if v.shape != (mesh.n_nodes, 3):
        raise ValueError(f"expected nodal values of shape ({mesh.n_nodes}, 3)")
    return v


class P1Space:
    """Per-mesh geometric data, cached matrices and a mass factorization."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.dim = mesh.dim
        self.n = mesh.n_nodes
        self.elements = np.asarray(mesh.elements)
        self.measures = mesh.measures()
        nv = self.elements.shape[1]

        if self.dim == 1:
            h = self.measures
            self.grads = np.stack([-1.0 / h, 1.0 / h], axis=1)[:, :, None]
        else:
            p = mesh.nodes[self.elements]
            # gradients of barycentric coordinates: inverse of the affine map
            J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
            Jinv = np.linalg.inv(J)
            g12 = Jinv  # rows: grad(lambda_1), grad(lambda_2)
            g0 = -g12.sum(axis=1, keepdims=True)
            self.grads = np.concatenate([g0, g12], axis=1)

        self._patterns: dict[int, tuple] = {}

    # -- assembly helpers -------------------------------------------------

    def _pattern(self, b: int):
        """CSR structure and scatter map for b x b node blocks."""
        pat = self._patterns.get(b)
        if pat is None:
            el = self.elements
            nv = el.shape[1]
            ar = np.arange(b)
            rows = (el[:, :, None, None, None] * b + ar[None, None, None, :, None])
            cols = (el[:, None, :, None, None] * b + ar[None, None, None, None, :])
            rows, cols = np.broadcast_arrays(rows, cols)
            N = self.n * b
            keys = rows.astype(np.int64).ravel() * N + cols.ravel()
            uniq, scatter = np.unique(keys, return_inverse=True)
            indices = (uniq % N).astype(np.int32)
            counts = np.bincount(uniq // N, minlength=N)
            indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
            pat = self._patterns[b] = (scatter, indices, indptr, N)
        return pat

    def assemble_local(self, local: np.ndarray) -> sp.csr_matrix:
        """Sum element matrices into CSR.

        ``local`` is (ne, nv, nv) for scalar operators or (ne, nv, nv, b, b)
        for operators coupling b unknowns per node (ordered node by node).
        """
        b = 1 if local.ndim == 3 else local.shape[-1]
        scatter, indices, indptr, N = self._pattern(b)
        data = np.bincount(scatter, weights=local.ravel(), minlength=len(indices))
        return sp.csr_matrix((data, indices, indptr), shape=(N, N))

    def local_weighted_mass(self, rho_q: np.ndarray | None, rule) -> np.ndarray:
        """Element matrices of int rho phi_i phi_j.

        ``rho_q`` is (ne, ..., nq); the result is (ne, nv, nv, ...).
        """
        lam, w = rule
        nq, nv = lam.shape
        lamlam = (lam[:, :, None] * lam[:, None, :]).reshape(nq, nv * nv)
        if rho_q is None:
            return self.measures[:, None, None] * (w @ lamlam).reshape(nv, nv)
        rw = rho_q * (w * self.measures[(slice(None),) + (None,) * (rho_q.ndim - 1)])
        extra = rw.shape[1:-1]
        out = rw.reshape(-1, nq) @ lamlam
        out = out.reshape((len(self.elements),) + extra + (nv, nv))
        return np.moveaxis(out, (-2, -1), (1, 2))

    def quad_points(self, rule):
        lam, _ = rule
        return np.einsum("qi,eid->eqd", lam, self.mesh.nodes[self.elements].reshape(
            len(self.elements), -1, self.dim))

    def at_quad(self, values: np.ndarray, rule) -> np.ndarray:
        """Evaluate nodal values (n, ...) at quadrature points -> (ne, nq, ...)."""
        lam, _ = rule
        v = values[self.elements]
        tail = v.shape[2:]
        out = lam @ v.reshape(v.shape[0], v.shape[1], -1)
        return out.reshape(out.shape[:2] + tail)

    def integrate(self, fq: np.ndarray, rule) -> float:
        _, w = rule
        return float(self.measures @ (fq.reshape(len(fq), len(w), -1).sum(-1) @ w))

    def weighted_mass(self, rho_q: np.ndarray | None, rule) -> sp.csr_matrix:
        """Matrix of int rho phi_i phi_j, with rho sampled at quadrature points."""
        return self.assemble_local(self.local_weighted_mass(rho_q, rule))

    def load(self, fq: np.ndarray, rule) -> np.ndarray:
        """Vector of int f phi_i for f sampled at quadrature points (ne, nq, 3)."""
        lam, w = rule
        local = lam.T @ (fq * (self.measures[:, None] * w)[..., None])
        out = np.zeros((self.n, fq.shape[-1]))
        np.add.at(out, self.elements, local)
        return out

    # -- fixed operators --------------------------------------------------

    @cached_property
    def local_mass(self) -> np.ndarray:
        return self.local_weighted_mass(None, element_rule(self.dim, 2))

    @cached_property
    def local_stiffness(self) -> np.ndarray:
        return np.einsum("e,eid,ejd->eij", self.measures, self.grads, self.grads)

    @cached_property
    def mass(self) -> sp.csr_matrix:
        return self.assemble_local(self.local_mass)

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        return self.assemble_local(self.local_stiffness)

    @cached_property
    def mass_factor(self) -> Factorization:
        return Factorization(self.mass, symmetric_hint=True)

    def mass_solve(self, b: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        x, _ = self.mass_factor.solve(b, tol)
        return x


_SPACES: "WeakKeyDictionary[Mesh, P1Space]" = WeakKeyDictionary()


def space(mesh: Mesh) -> P1Space:
    sp_ = _SPACES.get(mesh)
    if sp_ is None:
        sp_ = _SPACES[mesh] = P1Space(mesh)
    return sp_


def blockify(A) -> sp.csr_matrix:
    """Lift a scalar-block operator to act on node-ordered 3-vectors."""
    return sp.kron(A, sp.identity(3), format="csr")


def block_local(local: np.ndarray) -> np.ndarray:
    """Scalar element matrices (ne, nv, nv) -> 3x3 identity blocks."""
    return local[..., None, None] * np.eye(3)


def _cross_local(scalar_locals: np.ndarray) -> np.ndarray:
    """(ne, nv, nv, 3) per-component locals -> blocks sum_g L_g eps_{a g b}."""
    return np.einsum("eijg,agb->eijab", scalar_locals, LEVI)


def local_cross_convection(mesh: Mesh, w) -> np.ndarray:
    V = space(mesh)
    wbar = _values_on(mesh, w)[V.elements].mean(axis=1)
    return _cross_local(V.local_stiffness[..., None] * wbar[:, None, None, :])


def local_cubic_weight(mesh: Mesh, w) -> np.ndarray:
    V = space(mesh)
    rule = element_rule(V.dim, 4)
    wq = V.at_quad(_values_on(mesh, w), rule)
    return V.local_weighted_mass(np.einsum("eqc,eqc->eq", wq, wq), rule)


def local_cross_mass(mesh: Mesh, a) -> np.ndarray:
    V = space(mesh)
    rule = element_rule(V.dim, 3)
    aq = V.at_quad(_values_on(mesh, a), rule)
    return _cross_local(V.local_weighted_mass(np.moveaxis(aq, -1, 1), rule))


def local_double_cross(mesh: Mesh, g) -> np.ndarray:
    V = space(mesh)
    rule = element_rule(V.dim, 4)
    gq = V.at_quad(_values_on(mesh, g), rule)
    G = np.einsum("eqa,eqb->eabq", gq, gq)
    G -= np.einsum("eqc,eqc->eq", gq, gq)[:, None, None, :] * np.eye(3)[None, :, :, None]
    return V.local_weighted_mass(G, rule)


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    """Scalar P1 mass matrix <phi_j, phi_i>."""
    return space(mesh).mass


def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    """Scalar P1 stiffness matrix <grad phi_j, grad phi_i>."""
    return space(mesh).stiffness


def assemble_cross_convection(mesh: Mesh, w) -> sp.csr_matrix:
    """3x3-block operator C(w) with (C(w) v) . phi = <w x grad v, grad phi>.

    Gradients are elementwise constant, so only the element mean of ``w``
    enters and the result is skew-symmetric.
    """
    return space(mesh).assemble_local(local_cross_convection(mesh, w))


def assemble_cubic_weight(mesh: Mesh, w) -> sp.csr_matrix:
    """Scalar-block matrix of int |w|^2 phi_i phi_j."""
    return space(mesh).assemble_local(local_cubic_weight(mesh, w))


def assemble_cross_mass(mesh: Mesh, a) -> sp.csr_matrix:
    """3x3-block operator X(a) with (X(a) v) . phi = <a x v, phi>."""
    return space(mesh).assemble_local(local_cross_mass(mesh, a))


def assemble_double_cross(mesh: Mesh, g) -> sp.csr_matrix:
    """3x3-block operator Q(g) with (Q(g) v) . phi = <(v x g) x g, phi>.

    Uses (v x g) x g = (g g^T - |g|^2 I) v.
    """
    return space(mesh).assemble_local(local_double_cross(mesh, g))


def cross_load(mesh: Mesh, a, b) -> np.ndarray:
    """Vector of <a x b, phi_i>, shape (n_nodes, 3)."""
    V = space(mesh)
    rule = element_rule(V.dim, 3)
    return V.load(np.cross(V.at_quad(_values_on(mesh, a), rule), V.at_quad(_values_on(mesh, b), rule)), rule)


def assemble_noise_rhs(mesh: Mesh, w, g, kappa1: float = 1.0, gamma: float = 1.0):
    """Loads of the Ito correction and of the noise coefficient.

    Returns ``(drift_correction, diffusion)``, both (n_nodes, 3):
    ``<gamma^2/2 (w x g) x g, phi_i>`` and ``<kappa1 g + gamma w x g, phi_i>``.
    """
    V = space(mesh)
    rule = element_rule(V.dim, 4)
    wq = V.at_quad(_values_on(mesh, w), rule)
    gq = V.at_quad(_values_on(mesh, g), rule)
    wxg = np.cross(wq, gq)
    corr = V.load(0.5 * gamma**2 * np.cross(wxg, gq), rule)
    diff = V.load(kappa1 * gq + gamma * wxg, rule)
    return corr, diff


def _eval_function(f, coords: np.ndarray) -> np.ndarray:
    """Call ``f(x)`` or ``f(x, y)`` on arrays and stack three components."""
    pts = [coords[..., d] for d in range(coords.shape[-1])]
    comps = f(*pts)
    if len(comps) != 3:
        raise ValueError("function must return three components")
    comps = [np.asarray(c, dtype=float) for c in comps]
    out = np.stack(np.broadcast_arrays(*comps, pts[0])[:3], axis=-1)
    return out


def interpolate(mesh: Mesh, f) -> FeField:
    """Nodal interpolant of ``f``."""
    nodes = np.asarray(mesh.nodes, dtype=float).reshape(mesh.n_nodes, mesh.dim)
    return FeField(mesh, _eval_function(f, nodes))


def l2_project(mesh: Mesh, f, tol: float = 1e-12) -> FeField:
    """Orthogonal L2 projection of a closed-form R^3-valued function.

    ``f`` is called as ``f(x)`` in 1D and ``f(x, y)`` in 2D with arrays of
    coordinates and must return three components (scalars broadcast).
    """
    V = space(mesh)
    rule = interval_rule(5) if V.dim == 1 else triangle_rule(10)
    fq = _eval_function(f, V.quad_points(rule))
    b = V.load(fq, rule)
    return FeField(mesh, V.mass_solve(b, tol))


def discrete_laplacian(mesh: Mesh, v, tol: float = 1e-12) -> FeField:
    """w in V_h with <w, chi> = -<grad v, grad chi> for all chi."""
    V = space(mesh)
    return FeField(mesh, V.mass_solve(-(V.stiffness @ _values_on(mesh, v)), tol))


@dataclass(frozen=True)
class Norms:
    l2: float
    h1_semi: float
    l4: float

    @property
    def h1(self) -> float:
        return float(np.hypot(self.l2, self.h1_semi))


def norms(v: FeField) -> Norms:
    V = space(v.mesh)
    x = v.values
    l2sq = float(np.einsum("ic,ic->", x, V.mass @ x))
    h1sq = float(np.einsum("ic,ic->", x, V.stiffness @ x))
    rule = element_rule(V.dim, 4)
    vq = V.at_quad(x, rule)
    l4 = V.integrate(np.einsum("eqc,eqc->eq", vq, vq) ** 2, rule)
    return Norms(np.sqrt(max(l2sq, 0.0)), np.sqrt(max(h1sq, 0.0)), l4**0.25)


def inner(u: FeField, v: FeField) -> float:
    """L2 inner product of two fields on the same mesh."""
    mesh = _same_mesh(u, v)
    return float(np.einsum("ic,ic->", u.values, space(mesh).mass @ v.values))


def prolong(coarse: FeField, fine_mesh: Mesh) -> FeField:
    """Exact embedding of a coarse P1 field into a nested finer P1 space."""
    refinement_ratio(coarse.mesh, fine_mesh)
    return FeField(fine_mesh, prolong_values(coarse.values, coarse.mesh, fine_mesh))


__all__ = [
    "FeField", "Norms", "P1Space", "LinearSolveError", "space", "blockify",
    "assemble_mass", "assemble_stiffness", "assemble_cross_convection",
    "assemble_cubic_weight", "assemble_cross_mass", "assemble_double_cross",
    "cross_load", "block_local",
    "assemble_noise_rhs", "interpolate", "l2_project", "discrete_laplacian",
    "norms", "inner", "prolong",
]
