"""Command-line front end.

    sllb run <simulation> <study> [--config FILE] [--seed N] [--m N]
             [--scheme semi|implicit] [--h-levels N ...] [--k-levels N ...]
             [--out DIR] [--noise small|moderate|large]

Values are resolved as built-in defaults < config file < flags.  The config
file is INI-style with flat ``[run]``, ``[coefficients]``, ``[fields]`` and
``[study]`` sections.  Exit status: 0 success, 1 study failure, 2 config
error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import (
    SPATIAL_INV_K, SPATIAL_LEVELS, SPATIAL_REFERENCE, TEMPORAL_LEVELS, TEMPORAL_MESH,
    TEMPORAL_REFERENCE, ConvergenceConfig, EnergyConfig, StabilityConfig, StudyError,
    convergence_study, energy_study, stability_study,
)
from .fem import norms
from .noise import generate
from .observables import energy
from .schemes import StepFailure, run_trajectory
from .simulations import NOISE_PRESETS, SIMULATIONS, AffineField, HelixField, Simulation, vortex

log = logging.getLogger("sllbfem")

STUDIES = ("convergence_spatial", "convergence_temporal", "energy", "stability", "single_run")
SCHEME_ALIASES = {"semi": "semi_implicit", "semi_implicit": "semi_implicit", "implicit": "implicit"}
NAMED_FIELDS = {
    "sim1": HelixField(),
    "helix": HelixField(),
    "sim2": vortex,
    "vortex": vortex,
    **NOISE_PRESETS,
}


class ConfigError(ValueError):
    pass


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _field_spec(text: str, where: str):
    text = text.strip()
    if text in NAMED_FIELDS:
        return NAMED_FIELDS[text]
    rows = [r.split() for r in text.split("|")]
    try:
        table = tuple(tuple(float(c) for c in r) for r in rows)
    except ValueError:
        raise ConfigError(f"{where}: expected a named field {sorted(NAMED_FIELDS)} or "
                          f"an affine table 'c0 cx [cy] | ... | ...', got {text!r}") from None
    if len(table) != 3 or any(not 1 <= len(r) <= 3 for r in table):
        raise ConfigError(f"{where}: affine table needs three rows of 1-3 coefficients")
    return AffineField(table)


def _get(cfg: configparser.ConfigParser, section: str, key: str, conv, default=None):
    if not cfg.has_option(section, key):
        return default
    raw = cfg.get(section, key)
    try:
        return conv(raw)
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags into one plain dict."""
    cfg = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            cfg.read_string(path.read_text(), source=str(path))
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        unknown = set(cfg.sections()) - {"run", "coefficients", "fields", "study"}
        if unknown:
            raise ConfigError(f"unknown section(s) {sorted(unknown)}")

    r = {
        "simulation": _get(cfg, "run", "simulation", str),
        "study": _get(cfg, "run", "study", str),
        "seed": _get(cfg, "run", "seed", int, 0),
        "M": _get(cfg, "run", "m", int),
        "scheme": _get(cfg, "run", "scheme", str),
        "out": _get(cfg, "run", "out", str, "results"),
        "workers": _get(cfg, "run", "workers", int, 1),
        "noise": _get(cfg, "fields", "noise", str),
        "u0": _get(cfg, "fields", "u0", lambda t: t.strip()),
        "g": _get(cfg, "fields", "g", lambda t: t.strip()),
        "coefficients": {k: _get(cfg, "coefficients", k, float)
                         for k in ("kappa1", "gamma", "kappa2", "mu") if cfg.has_option("coefficients", k)},
        "dim": _get(cfg, "coefficients", "dim", int),
        "h_levels": _get(cfg, "study", "h_levels", _ints),
        "k_levels": _get(cfg, "study", "k_levels", _ints),
        "reference": _get(cfg, "study", "reference", int),
        "fixed": _get(cfg, "study", "fixed", int),
        "T": _get(cfg, "study", "t", float),
        "n": _get(cfg, "study", "n", int),
        "inv_k": _get(cfg, "study", "inv_k", int),
        "epsilons": _get(cfg, "study", "epsilons", _floats),
        "fit_window": _get(cfg, "study", "fit_window", _floats),
    }
    for key, val in (("simulation", args.simulation), ("study", args.study), ("seed", args.seed),
                     ("M", args.m), ("scheme", args.scheme), ("out", args.out), ("workers", args.workers),
                     ("noise", args.noise), ("h_levels", args.h_levels), ("k_levels", args.k_levels),
                     ("reference", args.reference), ("T", args.T)):
        if val is not None:
            r[key] = tuple(val) if isinstance(val, list) else val

    if r["simulation"] is None or r["study"] is None:
        raise ConfigError("simulation and study must be given (positionally or in [run])")
    if r["simulation"] not in (*SIMULATIONS, "custom"):
        raise ConfigError(f"simulation: unknown {r['simulation']!r}")
    if r["study"] not in STUDIES:
        raise ConfigError(f"study: unknown {r['study']!r}; expected one of {STUDIES}")
    if r["scheme"] is not None:
        if r["scheme"] not in SCHEME_ALIASES:
            raise ConfigError(f"scheme: unknown {r['scheme']!r}")
        r["scheme"] = SCHEME_ALIASES[r["scheme"]]
    if r["noise"] is not None and r["noise"] not in NOISE_PRESETS:
        raise ConfigError(f"noise: unknown preset {r['noise']!r}")
    if r["fit_window"] is not None and len(r["fit_window"]) != 2:
        raise ConfigError("[study] fit_window: expected two numbers")
    return r


def build_simulation(r: dict) -> Simulation:
    if r["simulation"] == "custom":
        missing = [k for k in ("kappa1", "gamma", "kappa2", "mu") if k not in r["coefficients"]]
        if missing or r["u0"] is None or (r["g"] is None and r["noise"] is None):
            raise ConfigError(f"custom simulation needs [coefficients] {missing or ''} and [fields] u0, g")
        base = Simulation("custom", r["dim"] or 1, 1.0, 1.0, 1.0, 1.0, HelixField(), NOISE_PRESETS["small"],
                          r["scheme"] or "semi_implicit")
    else:
        base = SIMULATIONS[r["simulation"]]
    sim = replace(base, **r["coefficients"]) if r["coefficients"] else base
    if r["u0"] is not None:
        sim = replace(sim, u0=_field_spec(r["u0"], "[fields] u0"))
    if r["g"] is not None:
        sim = replace(sim, g=_field_spec(r["g"], "[fields] g"))
    if r["noise"] is not None:
        sim = replace(sim, g=NOISE_PRESETS[r["noise"]])
    if r["scheme"] is not None:
        sim = replace(sim, scheme=r["scheme"])
    if sim.scheme == "implicit" and sim.dim != 1:
        raise ConfigError("scheme: the implicit scheme is 1D only")
    for k in ("kappa1", "gamma", "kappa2", "mu"):
        if not getattr(sim, k) > 0:
            raise ConfigError(f"[coefficients] {k}: must be positive")
    return sim


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def execute(r: dict, sim: Simulation, out: Path) -> dict:
    study = r["study"]
    seed = r["seed"]
    if study.startswith("convergence"):
        axis = study.split("_")[1]
        if axis == "spatial":
            levels = r["h_levels"] or SPATIAL_LEVELS
            reference = r["reference"] or SPATIAL_REFERENCE
            fixed = r["fixed"] or r["inv_k"] or SPATIAL_INV_K
        else:
            levels = r["k_levels"] or TEMPORAL_LEVELS
            reference = r["reference"] or TEMPORAL_REFERENCE
            fixed = r["fixed"] or r["n"] or TEMPORAL_MESH
        try:
            cfg = ConvergenceConfig(simulation=sim, axis=axis, levels=tuple(levels), reference=reference,
                                    fixed=fixed, M=r["M"] or 50, seed=seed, T=r["T"] or 0.2,
                                    workers=r["workers"])
        except ValueError as exc:
            raise ConfigError(f"[study] {exc}") from None
        tab = convergence_study(cfg)
        size = "h" if axis == "spatial" else "k"
        _write_csv(out / "convergence.csv", ["level", size, f"inv_{size}", "E0", "E1"],
                   [(i, s, 1.0 / s, e0, e1) for i, (s, e0, e1) in enumerate(tab.levels)])
        return {"axis": axis, "order_E0": tab.order_0, "order_E1": tab.order_1, "r2_E0": tab.r2_0,
                "r2_E1": tab.r2_1, "M": tab.M, "reference": reference, "fixed": fixed,
                "E0": tab.E0, "E1": tab.E1, "sizes": tab.sizes}
    if study == "energy":
        k = 1.0 / (r["inv_k"] or 100)
        cfg = EnergyConfig(simulation=sim, n=r["n"] or 32, k=k, T=r["T"] or 1.0, M=r["M"] or 30,
                           seed=seed, workers=r["workers"])
        res = energy_study(cfg)
        _write_csv(out / "energy.csv", ["t", "path_id", "energy"],
                   [(t, p, res.energies[p, n]) for p in range(res.energies.shape[0])
                    for n, t in enumerate(res.times)])
        _write_csv(out / "energy_mean.csv", ["t", "mean"], zip(res.times, res.mean))
        return {"M": cfg.M, "n": cfg.n, "k": k, "T": cfg.T, "final_mean_energy": res.mean[-1],
                "initial_energy": res.mean[0]}
    if study == "stability":
        eps = r["epsilons"] or (1e-1, 1e-2, 1e-3)
        cfg = StabilityConfig(simulation=sim, epsilons=tuple(eps), n=r["n"] or 32,
                              k=1.0 / (r["inv_k"] or 100), T=r["T"] or 2.0, M=r["M"] or 30, seed=seed,
                              fit_window=tuple(r["fit_window"] or (0.5, 2.0)),
                              scheme=r["scheme"] or "semi_implicit", workers=r["workers"])
        res = stability_study(cfg)
        cols = [f"mean_eps_{e:.6g}" for e in res.epsilons]
        _write_csv(out / "stability.csv", ["t", *cols],
                   [(t, *res.mean_curves[:, n]) for n, t in enumerate(res.times)])
        return {"epsilons": res.epsilons, "lambda": res.fitted_lambda, "r2": res.r_squared,
                "reliable": res.reliable, "fit_window": list(res.fit_window), "M": cfg.M}
    # single_run
    n = r["n"] or (16 if sim.dim == 1 else 16)
    k = 1.0 / (r["inv_k"] or 100)
    params = sim.params(k, r["T"] or 0.4)
    u0 = sim.initial_field(n)
    g = sim.noise_field(n)
    path = generate(seed, 0, k, params.n_steps)
    rows = []

    def record(step, t, u):
        nm = norms(u)
        rows.append((t, energy(u, params), nm.l2, nm.h1_semi))

    traj = run_trajectory(u0, g, path, 1, params, [record])
    _write_csv(out / "trajectory.csv", ["t", "energy", "l2", "h1_semi"], rows)
    coords = np.asarray(u0.mesh.nodes, dtype=float).reshape(u0.mesh.n_nodes, -1)
    names = ["x", "y"][: coords.shape[1]]
    _write_csv(out / "final_field.csv", [*names, "u1", "u2", "u3"],
               [(*c, *v) for c, v in zip(coords, traj.final.values)])
    return {"n": n, "k": k, "T": params.T, "steps": traj.n_steps,
            "max_identity_residual": max(rep.energy_identity_residual for rep in traj.reports),
            "max_nonlinear_iterations": max(rep.picard_iterations for rep in traj.reports)}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sllb", description="stochastic LLB finite element experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a study and write CSV/JSON artifacts")
    run.add_argument("simulation", nargs="?", help="sim1 | sim2 | sim3 | custom")
    run.add_argument("study", nargs="?", help=" | ".join(STUDIES))
    run.add_argument("--config", help="INI config file")
    run.add_argument("--seed", type=int)
    run.add_argument("--m", type=int, help="number of sample paths")
    run.add_argument("--scheme", choices=sorted(SCHEME_ALIASES))
    run.add_argument("--h-levels", type=int, nargs="+", dest="h_levels", metavar="N",
                     help="cells per side of the coarse meshes")
    run.add_argument("--k-levels", type=int, nargs="+", dest="k_levels", metavar="N",
                     help="inverse time steps 1/k of the coarse runs")
    run.add_argument("--reference", type=int, help="reference level (cells per side or 1/k)")
    run.add_argument("--T", type=float, dest="T", help="final time")
    run.add_argument("--out", help="output directory")
    run.add_argument("--noise", choices=sorted(NOISE_PRESETS))
    run.add_argument("--workers", type=int)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        r = resolve(args)
        sim = build_simulation(r)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out = Path(r["out"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"version": __version__, **{k: v for k, v in r.items() if k not in ("workers", "out")},
                "resolved": {"kappa1": sim.kappa1, "gamma": sim.gamma, "kappa2": sim.kappa2,
                             "mu": sim.mu, "dim": sim.dim, "scheme": sim.scheme}}
    _write_json(out / "manifest.json", manifest)
    try:
        summary = execute(r, sim, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (StudyError, StepFailure) as exc:
        print(f"study failed: {exc}", file=sys.stderr)
        return 1
    _write_json(out / "summary.json", {"simulation": sim.name, "study": r["study"], "seed": r["seed"], **summary})
    print(json.dumps(_jsonable(summary), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
