"""Measured quantities: energy, pathwise error, per-step identity defect."""
from __future__ import annotations

import numpy as np

from .fem import FeField, norms, prolong, space
from .geometry import refinement_ratio
from .quadrature import element_rule


def energy(u: FeField, params) -> float:
    """(k1/2)|grad u|^2 + (k2/2)|u|^2 + (k2 mu/4)|u|_{L4}^4."""
    nm = norms(u)
    return (
        0.5 * params.kappa1 * nm.h1_semi**2
        + 0.5 * params.kappa2 * nm.l2**2
        + 0.25 * params.kappa2 * params.mu * nm.l4**4
    )


def pathwise_error(u: FeField, v: FeField, s: int = 0) -> float:
    """L2 (s=0) or full H1 (s=1) norm of u - v on the finer of the two meshes."""
    if s not in (0, 1):
        raise ValueError(f"s must be 0 or 1, got {s}")
    if u.mesh.resolution > v.mesh.resolution:
        u, v = v, u
    refinement_ratio(u.mesh, v.mesh)
    nm = norms(prolong(u, v.mesh) - v)
    return nm.l2 if s == 0 else nm.h1


def identity_residual(u_prev: FeField, u_next: FeField, g: FeField, dW: float, params, scheme_kind: str) -> float:
    """Defect of the discrete energy law obtained by testing a step with u^n.

    Evaluated pointwise at quadrature nodes, independently of the matrices
    used to take the step.  The precession terms vanish identically and are
    left out.
    """
    if scheme_kind not in ("semi_implicit", "implicit"):
        raise ValueError(f"unknown scheme {scheme_kind!r}")
    mesh = u_next.mesh
    V = space(mesh)
    rule = element_rule(V.dim, 4)
    a = V.at_quad(u_prev.values, rule)
    b = V.at_quad(u_next.values, rule)
    gq = V.at_quad(g.values, rule)
    grad_b = np.einsum("eid,eic->edc", V.grads, u_next.values[V.elements])

    def integral(f):
        return V.integrate(f, rule)

    def dot(x, y):
        return np.einsum("eqc,eqc->eq", x, y)

    p = params
    nb2 = integral(dot(b, b))
    terms = [
        0.5 * (nb2 - integral(dot(a, a))),
        0.5 * integral(dot(b - a, b - a)),
        p.k * p.kappa1 * float(np.einsum("e,edc,edc->", V.measures, grad_b, grad_b)),
        p.k * p.kappa2 * nb2,
        p.k * p.kappa2 * p.mu * integral(dot(a, a) * dot(b, b)),
    ]
    if scheme_kind == "semi_implicit":
        terms.append(-0.5 * p.k * p.gamma**2 * integral(dot(np.cross(np.cross(a, gq), gq), b)))
    else:
        bxg = np.cross(b, gq)
        terms.append(0.5 * p.k * p.gamma**2 * integral(dot(bxg, bxg)))
    terms.append(-dW * integral(dot(p.kappa1 * gq + p.gamma * np.cross(a, gq), b)))
    return abs(float(np.sum(terms)))
