"""Time stepping for the stochastic LLB equation.

Both schemes advance ``u^{n-1} -> u^n`` for

    du = (k1 Lap u + gam u x Lap u - k2 (1 + mu |u|^2) u) dt
         + (k1 g + gam u x g) o dW

written in Ito form, which adds the drift ``gam^2/2 (u x g) x g``.

* ``semi_implicit_step``: linear; the precession ``u^{n-1} x grad u^n`` and
  the cubic weight ``|u^{n-1}|^2`` are lagged, so each step is one
  nonsymmetric sparse solve.  Works on 1D and 2D meshes.
* ``implicit_step`` (1D only): the precession ``u^n x Lap_h u^n`` and the
  Ito correction are taken at the new time level.  The nonlinear system is
  solved by Newton's method on the mixed unknowns ``(u^n, Lap_h u^n)``,
  which keeps every linear solve sparse and banded.  The lagged-term Picard
  iteration is available as ``nonlinear_solver="picard"``; it only
  contracts when ``gamma |u| k |Lap_h| / (1 + kappa1 k |Lap_h|)`` is below
  one, which fails on fine meshes whenever ``gamma > kappa1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import fem
from .fem import FeField, space
from .linsolve import Factorization, LinearSolveError, solve
from .noise import NoisePath, coarsen
from .observables import identity_residual

SCHEMES = ("semi_implicit", "implicit")
NONLINEAR_SOLVERS = ("newton", "picard")
NEWTON_FORCING = 1e-10


class StepFailure(RuntimeError):
    def __init__(self, message: str, step: int | None = None, residual: float = float("nan")):
        self.message = message
        self.step = step
        self.residual = residual
        where = "" if step is None else f" at step {step}"
        super().__init__(f"{message}{where} (residual {residual:.3e})")


@dataclass(frozen=True)
class SchemeParams:
    kappa1: float
    gamma: float
    kappa2: float
    mu: float
    k: float
    T: float
    scheme: str = "semi_implicit"
    picard_tol: float = 1e-10
    picard_max: int = 100
    linsolve_tol: float = 1e-12
    nonlinear_solver: str = "newton"

    def __post_init__(self):
        for name in ("kappa1", "gamma", "kappa2", "mu", "k"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.T >= self.k * (1 - 1e-12):
            raise ValueError(f"horizon T={self.T} is shorter than one step k={self.k}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.nonlinear_solver not in NONLINEAR_SOLVERS:
            raise ValueError(f"unknown nonlinear solver {self.nonlinear_solver!r}")
        if self.picard_max < 1 or not self.picard_tol > 0 or not self.linsolve_tol > 0:
            raise ValueError("solver controls must be positive")

    @property
    def n_steps(self) -> int:
        """N = floor(T / k), tolerant of T/k landing just below an integer."""
        return int(np.floor(self.T / self.k + 1e-9))


@dataclass(frozen=True)
class StepReport:
    linear_solve_residual: float
    picard_iterations: int
    energy_identity_residual: float


def _lhs_local(V, u_prev: np.ndarray, p: SchemeParams) -> np.ndarray:
    """Element matrices of (1 + k k2) M + k k2 mu A(u_prev) + k k1 S."""
    return (
        (1.0 + p.k * p.kappa2) * V.local_mass
        + (p.k * p.kappa1) * V.local_stiffness
        + (p.k * p.kappa2 * p.mu) * fem.local_cubic_weight(V.mesh, u_prev)
    )


def _zero_g(mesh, g):
    return FeField.zeros(mesh) if g is None else g


def semi_implicit_step(u_prev: FeField, g: FeField | None, dW: float, params: SchemeParams):
    mesh = u_prev.mesh
    V = space(mesh)
    g = _zero_g(mesh, g)
    p = params
    x0 = u_prev.values
    local = fem.block_local(_lhs_local(V, x0, p)) + (p.k * p.gamma) * fem.local_cross_convection(mesh, x0)
    lhs = V.assemble_local(local)
    corr, diff = fem.assemble_noise_rhs(mesh, x0, g, p.kappa1, p.gamma)
    rhs = V.mass @ x0 + p.k * corr + dW * diff
    try:
        x, rep = solve(lhs, rhs.ravel(), tol=p.linsolve_tol)
    except LinearSolveError as exc:
        raise StepFailure("linear solve failed", residual=exc.residual) from exc
    u_next = FeField(mesh, x.reshape(-1, 3))
    res = identity_residual(u_prev, u_next, g, dW, p, "semi_implicit")
    return u_next, StepReport(rep.relative_residual, 0, res)


def _l2(V, d: np.ndarray) -> float:
    return float(np.sqrt(max(np.einsum("ic,ic->", d, V.mass @ d), 0.0)))


class _Stall(Exception):
    pass


def _implicit_newton(V, u_prev, g, dW, p):
    """Damped Newton on the mixed unknowns z_i = (v_i, w_i), w = Lap_h v.

    Starts from the semi-implicit step.  If the line search stalls in a local
    minimum of the residual, the precession coefficient is ramped from 0 to
    ``k gamma`` and each stage is solved from the previous one; the last
    stage is the original system.
    """
    mesh = V.mesh
    kg = p.k * p.gamma
    K_local = fem.block_local(_lhs_local(V, u_prev, p)) - (0.5 * p.k * p.gamma**2) * fem.local_double_cross(mesh, g)
    K = V.assemble_local(K_local)
    _, diff = fem.assemble_noise_rhs(mesh, u_prev, g, p.kappa1, p.gamma)
    rhs = V.mass @ u_prev + dW * diff
    eye = np.eye(3)
    J_local = np.zeros(K_local.shape[:3] + (6, 6))
    J_local[..., 3:, :3] = V.local_stiffness[..., None, None] * eye
    J_local[..., 3:, 3:] = V.local_mass[..., None, None] * eye
    iterations = 0

    def newton(v, c, budget):
        nonlocal iterations

        def residual(v, w):
            r1 = (K @ v.ravel()).reshape(-1, 3) - c * fem.cross_load(mesh, v, w) - rhs
            r2 = V.mass @ w + V.stiffness @ v
            return np.concatenate([r1, r2], axis=1)

        w = V.mass_solve(-(V.stiffness @ v))
        r = residual(v, w)
        rnorm = np.linalg.norm(r)
        stalled = 0
        for _ in range(budget):
            iterations += 1
            J_local[..., :3, :3] = K_local + c * fem.local_cross_mass(mesh, w)
            J_local[..., :3, 3:] = -c * fem.local_cross_mass(mesh, v)
            J = V.assemble_local(J_local)
            # inexact Newton: the mixed system pairs O(h) and O(1/h) rows, so near
            # convergence roundoff can hold the relative residual just above 1e-12
            try:
                d, rep = solve(J, -r.ravel(), tol=max(p.linsolve_tol, NEWTON_FORCING))
            except LinearSolveError as exc:   # near-singular Jacobian: a stall
                raise _Stall(exc.residual) from exc
            d = d.reshape(-1, 6)
            dv, dw = d[:, :3], d[:, 3:]
            upd = _l2(V, dv)
            if not np.isfinite(upd):
                raise _Stall(upd)
            if upd <= p.picard_tol:
                return v + dv, rep.relative_residual
            # backtracking on the residual norm; far from the solution the
            # quadratic precession term makes full steps overshoot
            t = 1.0
            while True:
                r_new = residual(v + t * dv, w + t * dw)
                rn_new = np.linalg.norm(r_new)
                if rn_new <= (1.0 - 1e-4 * t) * rnorm or t <= 1.0 / 1024:
                    break
                t *= 0.5
            stalled = stalled + 1 if t <= 1.0 / 1024 else 0
            if stalled >= 5:
                raise _Stall(upd)
            v, w, r, rnorm = v + t * dv, w + t * dw, r_new, rn_new
        raise _Stall(upd)

    guess, _ = semi_implicit_step(FeField(mesh, u_prev), FeField(mesh, g), dW, p)
    try:
        v, res = newton(guess.values, kg, p.picard_max)
        return v, res, iterations
    except _Stall:
        pass
    v = u_prev
    s, ds = 0.0, 0.25
    while s < 1.0:
        s_next = min(1.0, s + ds)
        try:
            v_next, res = newton(v, s_next * kg, p.picard_max)
        except _Stall as exc:
            ds /= 2
            if ds < 1.0 / 64:
                raise StepFailure("Newton continuation stalled", residual=float(exc.args[0])) from None
            continue
        v, s = v_next, s_next
    return v, res, iterations


def _implicit_picard(V, u_prev, g, dW, p):
    mesh = V.mesh
    K = V.assemble_local(fem.block_local(_lhs_local(V, u_prev, p)))
    fac = Factorization(K, symmetric_hint=True)
    Q = fem.assemble_double_cross(mesh, g)
    _, diff = fem.assemble_noise_rhs(mesh, u_prev, g, p.kappa1, p.gamma)
    base = (V.mass @ u_prev + dW * diff).ravel()
    v = u_prev.copy()
    upd = float("inf")
    for it in range(1, p.picard_max + 1):
        lap = V.mass_solve(-(V.stiffness @ v))
        cross = fem.cross_load(mesh, v, lap).ravel()
        rhs = base + (p.k * p.gamma) * cross + (0.5 * p.k * p.gamma**2) * (Q @ v.ravel())
        try:
            x, rep = fac.solve(rhs, p.linsolve_tol)
        except LinearSolveError as exc:
            raise StepFailure("Picard linear solve failed", residual=exc.residual) from exc
        x = x.reshape(-1, 3)
        upd = _l2(V, x - v)
        v = x
        if not np.isfinite(upd):
            break
        if upd <= p.picard_tol:
            return v, rep.relative_residual, it
    raise StepFailure(f"Picard iteration did not converge in {p.picard_max} iterations", residual=upd)


def implicit_step(u_prev: FeField, g: FeField | None, dW: float, params: SchemeParams):
    mesh = u_prev.mesh
    if mesh.dim != 1:
        raise ValueError("the implicit scheme is defined for 1D meshes only")
    V = space(mesh)
    g = _zero_g(mesh, g)
    solver = _implicit_newton if params.nonlinear_solver == "newton" else _implicit_picard
    x, lin_res, its = solver(V, u_prev.values, g.values, dW, params)
    u_next = FeField(mesh, x)
    res = identity_residual(u_prev, u_next, g, dW, params, "implicit")
    return u_next, StepReport(lin_res, its, res)


def step(u_prev: FeField, g: FeField | None, dW: float, params: SchemeParams):
    if params.scheme == "implicit":
        return implicit_step(u_prev, g, dW, params)
    return semi_implicit_step(u_prev, g, dW, params)


Observer = Callable[[int, float, FeField], None]


@dataclass
class Trajectory:
    final: FeField
    reports: list[StepReport] = field(default_factory=list)
    k: float = 0.0
    n_steps: int = 0


def run_trajectory(
    u0: FeField,
    g: FeField | None,
    path: NoisePath,
    coarsen_factor: int,
    params: SchemeParams,
    observers: Sequence[Observer] = (),
) -> Trajectory:
    """Run N = floor(T/k) steps driven by ``path`` coarsened to step ``k``.

    Each observer is called as ``obs(n, t_n, u^n)`` for n = 0..N.
    """
    incs = coarsen(path, coarsen_factor)
    if not np.isclose(incs.k_fine, params.k, rtol=1e-10, atol=0.0):
        raise ValueError(f"coarsened noise step {incs.k_fine} does not match k={params.k}")
    N = params.n_steps
    if incs.n_fine < N:
        raise ValueError(f"noise path has {incs.n_fine} increments, need {N}")
    u = u0
    for obs in observers:
        obs(0, 0.0, u)
    reports = []
    for n in range(1, N + 1):
        try:
            u, rep = step(u, g, float(incs.increments[n - 1]), params)
        except StepFailure as exc:
            raise StepFailure(exc.message, step=n, residual=exc.residual) from exc
        reports.append(rep)
        for obs in observers:
            obs(n, n * params.k, u)
    return Trajectory(final=u, reports=reports, k=params.k, n_steps=N)
