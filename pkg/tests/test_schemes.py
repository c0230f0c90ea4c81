import numpy as np
import pytest

from sllbfem.fem import FeField, l2_project
from sllbfem.geometry import build_mesh, build_mesh_1d, build_mesh_2d
from sllbfem.noise import generate
from sllbfem.schemes import SchemeParams, StepFailure, implicit_step, run_trajectory, semi_implicit_step, step
from sllbfem.simulations import SIM1, SIM2, NOISE_PRESETS
from sllbfem.observables import energy

C0 = np.array([0.3, -0.2, 0.5])


def _scalar_recursion(c, k, kappa2, mu, n):
    c = np.array(c, dtype=float)
    for _ in range(n):
        c = c / (1 + k * kappa2 * (1 + mu * np.dot(c, c)))
    return c


def test_params_validation():
    with pytest.raises(ValueError):
        SchemeParams(0.0, 1, 1, 1, 0.1, 1)
    with pytest.raises(ValueError):
        SchemeParams(1, 1, 1, 1, 0.1, 0.05)
    with pytest.raises(ValueError):
        SchemeParams(1, 1, 1, 1, 0.1, 1, scheme="crank")
    assert SchemeParams(1, 1, 1, 1, 0.01, 0.2).n_steps == 20
    assert SchemeParams(1, 1, 1, 1, 1 / 3, 1.0).n_steps == 3


@pytest.mark.parametrize("scheme, dim", [("semi_implicit", 1), ("semi_implicit", 2), ("implicit", 1)])
def test_constant_single_step(scheme, dim):
    mesh = build_mesh(dim, 4)
    p = SIM1.params(0.01, 0.01, scheme)
    u, rep = step(FeField.constant(mesh, C0), None, 0.7, p)
    expect = _scalar_recursion(C0, 0.01, 0.5, 1.0, 1)
    assert np.max(np.abs(u.values - expect)) <= 1e-13
    if scheme == "implicit":
        assert rep.picard_iterations <= 2


@pytest.mark.parametrize("scheme, dim", [("semi_implicit", 1), ("semi_implicit", 2), ("implicit", 1)])
def test_zero_is_fixed_point(scheme, dim):
    mesh = build_mesh(dim, 4)
    g = l2_project(mesh, SIM2.g if dim == 2 else NOISE_PRESETS["large"])
    u, rep = step(FeField.zeros(mesh), g, 0.0, SIM1.params(0.01, 0.01, scheme))
    assert not np.any(u.values)
    if scheme == "implicit":
        assert rep.picard_iterations <= 1


def test_implicit_rejects_2d():
    with pytest.raises(ValueError):
        implicit_step(FeField.zeros(build_mesh_2d(2)), None, 0.0, SIM1.params(0.01, 0.01, "implicit"))


@pytest.mark.parametrize("scheme", ["semi_implicit", "implicit"])
def test_trajectory_constant_matches_recursion(scheme):
    p = SIM1.params(0.01, 1.0, scheme)
    path = generate(0, 0, 0.01, p.n_steps)
    tr = run_trajectory(FeField.constant(build_mesh_1d(8), C0), None, path, 1, p)
    assert tr.n_steps == 100
    expect = _scalar_recursion(C0, 0.01, 0.5, 1.0, 100)
    assert np.max(np.abs(tr.final.values - expect)) <= 1e-12


@pytest.mark.parametrize("scheme, dim, tol", [("semi_implicit", 1, 1e-10), ("semi_implicit", 2, 1e-10), ("implicit", 1, 1e-9)])
def test_identity_residual_per_step(scheme, dim, tol):
    sim = SIM2 if dim == 2 else SIM1
    n = 8 if dim == 2 else 16
    p = sim.params(0.01, 0.1, scheme)
    u0, g = sim.initial_field(n), sim.noise_field(n)
    tr = run_trajectory(u0, g, generate(5, 0, 0.01, p.n_steps), 1, p)
    assert max(r.energy_identity_residual for r in tr.reports) <= tol
    assert max(r.linear_solve_residual for r in tr.reports) <= 1e-12


def test_sim1_runs_to_snapshot_time():
    p = SIM1.params(0.01, 0.4)
    tr = run_trajectory(SIM1.initial_field(16), SIM1.noise_field(16), generate(1, 0, 0.01, 40), 1, p)
    assert tr.n_steps == 40 and np.all(np.isfinite(tr.final.values))
    assert max(r.picard_iterations for r in tr.reports) <= 30


@pytest.mark.parametrize("scheme, dim", [("semi_implicit", 1), ("semi_implicit", 2), ("implicit", 1)])
def test_zero_noise_energy_nonincreasing(scheme, dim):
    sim = SIM2 if dim == 2 else SIM1
    p = sim.params(0.01, 0.3, scheme)
    es = []
    run_trajectory(sim.initial_field(8), None, generate(0, 0, 0.01, p.n_steps), 1, p,
                   [lambda n, t, u: es.append(energy(u, p))])
    assert np.all(np.diff(es) <= 1e-14)


def test_coarsened_path_drives_coarse_step():
    p = SIM1.params(0.02, 0.2, "semi_implicit")
    fine = generate(2, 0, 0.01, 20)
    with pytest.raises(ValueError):
        run_trajectory(SIM1.initial_field(4), None, fine, 1, p)
    tr = run_trajectory(SIM1.initial_field(4), SIM1.noise_field(4), fine, 2, p)
    assert tr.n_steps == 10


def test_picard_matches_newton_where_it_contracts():
    # coarse mesh, tiny step: the lagged iteration is a contraction
    mesh_n, k = 4, 1e-4
    p_new = SIM1.params(k, k)
    p_pic = SIM1.params(k, k, nonlinear_solver="picard", picard_tol=1e-13)
    u0, g = SIM1.initial_field(mesh_n), SIM1.noise_field(mesh_n)
    a, _ = implicit_step(u0, g, 0.003, p_new)
    b, rep = implicit_step(u0, g, 0.003, p_pic)
    assert np.max(np.abs(a.values - b.values)) <= 1e-10
    assert rep.picard_iterations > 1


def test_picard_fails_loudly_on_fine_mesh():
    p = SIM1.params(0.01, 0.01, nonlinear_solver="picard", picard_max=50)
    with pytest.raises(StepFailure):
        implicit_step(SIM1.initial_field(32), SIM1.noise_field(32), 0.05, p)


def test_step_failure_carries_step_index():
    p = SIM1.params(0.01, 0.05, nonlinear_solver="picard", picard_max=5)
    with pytest.raises(StepFailure) as info:
        run_trajectory(SIM1.initial_field(32), SIM1.noise_field(32), generate(0, 0, 0.01, 5), 1, p)
    assert info.value.step == 1
