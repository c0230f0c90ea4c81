"""Monte Carlo studies: convergence order, energy evolution, stability.

Every study treats a sample path as an independent work item.  Items are
mapped over a process pool when ``workers > 1`` and folded back in
path-index order, so results do not depend on scheduling.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fem import FeField
from .noise import generate
from .observables import energy, pathwise_error
from .schemes import StepFailure, run_trajectory
from .simulations import HelixField, Simulation, get_simulation

log = logging.getLogger(__name__)


class StudyError(RuntimeError):
    def __init__(self, message: str, path_index: int | None = None, level=None):
        self.path_index = path_index
        self.level = level
        super().__init__(message)


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- slope fitting -----------------------------------------------------------


def fit_slope(points, model: str = "loglog") -> tuple[float, float, float]:
    """Least-squares line through transformed points.

    ``loglog`` fits log y against log x, ``semilog`` fits log y against x.
    Returns ``(slope, intercept, r_squared)``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValueError("need at least two (x, y) points")
    x, y = pts[:, 0], pts[:, 1]
    if np.any(y <= 0) or (model == "loglog" and np.any(x <= 0)):
        raise ValueError("logarithmic fit needs positive values")
    if model == "loglog":
        X = np.log(x)
    elif model == "semilog":
        X = x
    else:
        raise ValueError(f"unknown model {model!r}")
    Y = np.log(y)
    if np.ptp(X) == 0:
        raise ValueError("abscissae are all equal")
    A = np.column_stack([X, np.ones_like(X)])
    (slope, intercept), *_ = np.linalg.lstsq(A, Y, rcond=None)
    ss_res = float(np.sum((Y - A @ np.array([slope, intercept])) ** 2))
    ss_tot = float(np.sum((Y - Y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


# -- convergence -------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceConfig:
    """Spatial axis: ``levels``/``reference`` are cells per side, ``fixed`` is 1/k.
    Temporal axis: ``levels``/``reference`` are 1/k, ``fixed`` is cells per side.
    """

    simulation: Simulation
    axis: str
    levels: tuple[int, ...]
    reference: int
    fixed: int
    M: int = 50
    seed: int = 0
    T: float = 0.2
    scheme: str | None = None
    workers: int = 1
    u0: Callable | None = None
    g: Callable | None = None

    def __post_init__(self):
        if self.axis not in ("spatial", "temporal"):
            raise ValueError(f"axis must be 'spatial' or 'temporal', got {self.axis!r}")
        if len(self.levels) < 2:
            raise ValueError("need at least two levels to fit a slope")
        if list(self.levels) != sorted(set(self.levels)):
            raise ValueError("levels must be strictly increasing")
        if self.levels[-1] >= self.reference or any(self.reference % n for n in self.levels):
            raise ValueError("every level must divide the (finer) reference level")
        if self.M < 1:
            raise ValueError("M must be positive")


@dataclass
class ConvergenceTable:
    axis: str
    sizes: list[float]           # h or k per level
    E0: list[float]
    E1: list[float]
    order_0: float               # fitted slope of log E0 against log h (or log k)
    order_1: float
    r2_0: float
    r2_1: float
    M: int
    reference_size: float

    @property
    def levels(self) -> list[tuple[float, float, float]]:
        return list(zip(self.sizes, self.E0, self.E1))


def _conv_fields(cfg: ConvergenceConfig, n: int):
    sim = cfg.simulation
    u0 = sim.initial_field(n, cfg.u0)
    g = sim.noise_field(n) if cfg.g is None else _project(sim, n, cfg.g)
    return u0, g


def _project(sim: Simulation, n: int, f) -> FeField:
    from .fem import l2_project
    from .geometry import build_mesh
    return l2_project(build_mesh(sim.dim, n), f)


def _convergence_path(args) -> np.ndarray:
    cfg, path_index = args
    sim = cfg.simulation
    if cfg.axis == "spatial":
        k = 1.0 / cfg.fixed
        params = sim.params(k, cfg.T, cfg.scheme)
        path = generate(cfg.seed, path_index, k, params.n_steps)
        runs = [(n, params, 1) for n in (*cfg.levels, cfg.reference)]
    else:
        k_ref = 1.0 / cfg.reference
        params_ref = sim.params(k_ref, cfg.T, cfg.scheme)
        path = generate(cfg.seed, path_index, k_ref, params_ref.n_steps)
        runs = [(cfg.fixed, sim.params(1.0 / m, cfg.T, cfg.scheme), cfg.reference // m)
                for m in (*cfg.levels, cfg.reference)]

    finals = []
    for level, (n, params, factor) in zip((*cfg.levels, cfg.reference), runs):
        u0, g = _conv_fields(cfg, n)
        try:
            finals.append(run_trajectory(u0, g, path, factor, params).final)
        except StepFailure as exc:
            raise StudyError(f"path {path_index}, level {level}: {exc}", path_index, level) from exc
    ref = finals[-1]
    return np.array([[pathwise_error(u, ref, 0) ** 2, pathwise_error(u, ref, 1) ** 2]
                     for u in finals[:-1]])


def convergence_study(cfg: ConvergenceConfig) -> ConvergenceTable:
    log.info("convergence study %s/%s: levels %s ref %s, M=%d",
             cfg.simulation.name, cfg.axis, cfg.levels, cfg.reference, cfg.M)
    sq = _map(_convergence_path, [(cfg, i) for i in range(cfg.M)], cfg.workers)
    total = np.zeros((len(cfg.levels), 2))
    for s in sq:  # fold in path order
        total += s
    E = np.sqrt(total / cfg.M)
    sizes = [1.0 / n for n in cfg.levels]
    fits = []
    for col in range(2):
        if np.all(E[:, col] > 0):
            fits.append(fit_slope(list(zip(sizes, E[:, col]))))
        else:
            fits.append((float("nan"), float("nan"), float("nan")))
    return ConvergenceTable(
        axis=cfg.axis, sizes=sizes, E0=E[:, 0].tolist(), E1=E[:, 1].tolist(),
        order_0=fits[0][0], order_1=fits[1][0], r2_0=fits[0][2], r2_1=fits[1][2],
        M=cfg.M, reference_size=1.0 / cfg.reference,
    )


# -- energy --------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyConfig:
    simulation: Simulation
    n: int = 32
    k: float = 0.01
    T: float = 1.0
    M: int = 30
    seed: int = 0
    scheme: str | None = None
    workers: int = 1
    g: Callable | None = None
    zero_noise: bool = False


@dataclass
class EnergyResult:
    times: np.ndarray
    energies: np.ndarray   # (M, N+1)
    mean: np.ndarray


def _energy_path(args) -> np.ndarray:
    cfg, path_index = args
    sim = cfg.simulation
    params = sim.params(cfg.k, cfg.T, cfg.scheme)
    u0 = sim.initial_field(cfg.n)
    if cfg.zero_noise:
        g = FeField.zeros(u0.mesh)
    else:
        g = sim.noise_field(cfg.n) if cfg.g is None else _project(sim, cfg.n, cfg.g)
    path = generate(cfg.seed, path_index, cfg.k, params.n_steps)
    out = np.empty(params.n_steps + 1)

    def record(n, t, u):
        out[n] = energy(u, params)

    try:
        run_trajectory(u0, g, path, 1, params, [record])
    except StepFailure as exc:
        raise StudyError(f"path {path_index}: {exc}", path_index) from exc
    return out


def energy_study(cfg: EnergyConfig) -> EnergyResult:
    series = _map(_energy_path, [(cfg, i) for i in range(cfg.M)], cfg.workers)
    E = np.vstack(series)
    times = cfg.k * np.arange(E.shape[1])
    return EnergyResult(times=times, energies=E, mean=E.mean(axis=0))


# -- stability -----------------------------------------------------------------


@dataclass(frozen=True)
class StabilityConfig:
    simulation: Simulation
    epsilons: tuple[float, ...] = (1e-1, 1e-2, 1e-3)
    g: Callable | None = None
    n: int = 32
    k: float = 0.01
    T: float = 2.0
    M: int = 30
    seed: int = 0
    fit_window: tuple[float, float] = (0.5, 2.0)
    scheme: str = "semi_implicit"
    workers: int = 1
    keep_paths: bool = False


@dataclass
class StabilityResult:
    epsilons: list[float]
    times: np.ndarray
    mean_curves: np.ndarray              # (n_eps, N+1)
    fitted_lambda: list[float | None]
    r_squared: list[float | None]
    reliable: list[bool]
    fit_window: tuple[float, float]
    path_curves: np.ndarray | None = None   # (n_eps, M, N+1) if kept


def _stability_path(args) -> np.ndarray:
    cfg, path_index = args
    sim = cfg.simulation
    params = sim.params(cfg.k, cfg.T, cfg.scheme)
    g = sim.noise_field(cfg.n) if cfg.g is None else _project(sim, cfg.n, cfg.g)
    path = generate(cfg.seed, path_index, cfg.k, params.n_steps)
    N = params.n_steps

    def trajectory(offset: float) -> list[FeField]:
        states: list[FeField] = [None] * (N + 1)

        def keep(n, t, u):
            states[n] = u

        u0 = sim.initial_field(cfg.n, HelixField(offset))
        try:
            run_trajectory(u0, g, path, 1, params, [keep])
        except StepFailure as exc:
            raise StudyError(f"path {path_index}, eps={offset}: {exc}", path_index, offset) from exc
        return states

    v = trajectory(0.0)
    out = np.zeros((len(cfg.epsilons), N + 1))
    for j, eps in enumerate(cfg.epsilons):
        w = trajectory(eps)
        out[j] = [pathwise_error(a, b, 0) ** 2 for a, b in zip(v, w)]
    return out


def stability_study(cfg: StabilityConfig) -> StabilityResult:
    curves = np.stack(_map(_stability_path, [(cfg, i) for i in range(cfg.M)], cfg.workers), axis=1)
    mean = curves.mean(axis=1)
    N = mean.shape[1] - 1
    times = cfg.k * np.arange(N + 1)
    t0, t1 = cfg.fit_window
    sel = (times >= t0 - 1e-12) & (times <= t1 + 1e-12)
    lams, r2s, ok = [], [], []
    for j, eps in enumerate(cfg.epsilons):
        m = mean[j, sel]
        if eps == 0.0 or not np.any(m):
            lams.append(None), r2s.append(None), ok.append(False)
            continue
        if np.any(m <= 0):
            raise StudyError(f"nonpositive mean difference inside the fit window for eps={eps}")
        slope, _, r2 = fit_slope(list(zip(times[sel], m)), "semilog")
        lams.append(-slope)
        r2s.append(r2)
        ok.append(bool(-slope > 0 and r2 >= 0.9))
    return StabilityResult(
        epsilons=list(cfg.epsilons), times=times, mean_curves=mean,
        fitted_lambda=lams, r_squared=r2s, reliable=ok, fit_window=(t0, t1),
        path_curves=curves if cfg.keep_paths else None,
    )


# -- study defaults ------------------------------------------------------------

SPATIAL_LEVELS = (4, 8, 16, 32)
SPATIAL_REFERENCE = 64
SPATIAL_INV_K = 400
TEMPORAL_LEVELS = (25, 50, 100, 200)
TEMPORAL_REFERENCE = 400
TEMPORAL_MESH = 64


def default_convergence(sim_name: str, axis: str, **overrides) -> ConvergenceConfig:
    sim = get_simulation(sim_name)
    if axis == "spatial":
        base = dict(levels=SPATIAL_LEVELS, reference=SPATIAL_REFERENCE, fixed=SPATIAL_INV_K)
    else:
        base = dict(levels=TEMPORAL_LEVELS, reference=TEMPORAL_REFERENCE, fixed=TEMPORAL_MESH)
    base.update(overrides)
    return ConvergenceConfig(simulation=sim, axis=axis, **base)
