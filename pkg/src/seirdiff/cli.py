"""Command-line entry point: ``seirdiff {simulate,optimize,verify} <config>``.

Exit codes: 0 ok, 2 parse error, 3 validation error, 4 solver error,
5 optimizer error, 6 verification threshold violated.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigParseError, ScenarioConfig, load_config
from .control import ReducedProblem, evaluate_cost, optimize, project
from .errors import ConfigurationError, OptimizationError, SolverError
from .forward import Trajectory, check_time_step, mass_history, simulate
from .model import SPECIES, ControlVector
from . import verify as checks

EXIT_OK, EXIT_PARSE, EXIT_CONFIG, EXIT_SOLVER, EXIT_OPTIMIZER, EXIT_VERIFY = 0, 2, 3, 4, 5, 6
CHECKS = ("gradient", "duality", "conservation", "ode", "contdep")

log = logging.getLogger("seirdiff")


def fmt(x) -> str:
    return format(float(x), ".17g")


def _json_ready(obj):
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_ready(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        # round-trips exactly through float(); 17 significant digits
        return float(fmt(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def metadata(cfg: ScenarioConfig, command: str) -> dict:
    tg = cfg.model.timegrid
    return {
        "tool": "seirdiff", "version": __version__, "command": command, "config_sha256": cfg.digest(),
        "cells": list(cfg.domain.cells), "n_cells": cfg.domain.n_cells, "regions": cfg.partition.n_regions,
        "steps": tg.steps, "T": tg.T, "seed": cfg.seed,
    }


def write_json(path: Path, payload: dict, meta: dict) -> None:
    body = {"metadata": meta, **payload}
    path.write_text(json.dumps(_json_ready(body), indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _region_means(cfg: ScenarioConfig, fields: np.ndarray) -> np.ndarray:
    """Region averages of ``fields`` with shape ``(..., n_cells)``."""
    part = cfg.partition
    vol = cfg.domain.cell_volume
    out = np.zeros(fields.shape[:-1] + (part.n_regions,))
    for j in range(part.n_regions):
        out[..., j] = fields[..., part.labels == j].sum(axis=-1) * vol / part.measures[j]
    return out


def write_simulation(cfg: ScenarioConfig, traj: Trajectory, outdir: Path, meta: dict, runtime: float) -> dict:
    outdir.mkdir(parents=True, exist_ok=True)
    times = traj.times
    X = traj.states
    n = X.sum(axis=1)
    if cfg.resolution == "region":
        data = _region_means(cfg, np.concatenate([X, n[:, None]], axis=1))
        key = "region_id"
    else:
        data = np.concatenate([X, n[:, None]], axis=1)
        key = "cell_id"
    rows = ([times[k], c + 1 if key == "region_id" else c, *data[k, :, c]]
            for k in range(len(times)) for c in range(data.shape[-1]))
    write_csv(outdir / "trajectory.csv", ["time", key, *SPECIES, "n"], rows)

    mass = mass_history(traj)
    drift = np.abs(mass - mass[0]) / (abs(mass[0]) if mass[0] != 0.0 else 1.0)
    write_csv(outdir / "mass.csv", ["time", "total_n", "relative_drift"],
              ([times[k], mass[k], drift[k]] for k in range(len(times))))

    if cfg.snapshot_every > 0:
        snap = outdir / "snapshots"
        snap.mkdir(exist_ok=True)
        x = cfg.domain.centers
        coords = ["x", "y"][: cfg.domain.dimension]
        for k in range(0, len(times), cfg.snapshot_every):
            write_csv(snap / f"fields_{k:05d}.csv", ["cell_id", *coords, *SPECIES, "n"],
                      ([c, *x[c], *X[k, :, c], n[k, c]] for c in range(cfg.domain.n_cells)))

    vol = cfg.domain.cell_volume
    summary = {
        "final_mass": {name: float(X[-1, k].sum() * vol) for k, name in enumerate(SPECIES)},
        "final_total": float(mass[-1]),
        "min_values": {name: float(X[:, k].min()) for k, name in enumerate(SPECIES)},
        "conservation_drift": float(drift.max()),
        "negative_warning": bool(traj.metadata["negative"]),
        "mode": traj.mode,
        "runtime_seconds": round(runtime, 3),
    }
    if "picard_iterations" in traj.metadata:
        summary["picard_iterations"] = traj.metadata["picard_iterations"]
    write_json(outdir / "summary.json", summary, meta)
    files = ["trajectory.csv", "mass.csv", "summary.json"]
    (outdir / "metadata.json").write_text(
        json.dumps(_json_ready({**meta, "files": files, "config": cfg.raw}), indent=2, sort_keys=True) + "\n")
    return summary


def _run_forward(cfg: ScenarioConfig, controls: ControlVector | None = None) -> Trajectory:
    if cfg.diffusion is not None and controls is None:
        return simulate(cfg.model, cfg.diffusion, picard_iterations=cfg.picard_iterations)
    return simulate(cfg.model, controls if controls is not None else cfg.controls, cfg.partition)


def cmd_simulate(cfg: ScenarioConfig, outdir: Path) -> int:
    check_time_step(cfg.model)
    t0 = time.perf_counter()
    traj = _run_forward(cfg)
    write_simulation(cfg, traj, outdir, metadata(cfg, "simulate"), time.perf_counter() - t0)
    return EXIT_OK


def _controls_payload(u: ControlVector, report) -> dict:
    table = {}
    for k, name in enumerate(SPECIES):
        table[name] = [{
            "region": j + 1, "u": u.values[k, j], "mu": report.mu[k, j], "clamp_target": report.target[k, j],
            "lower": u.lower[k, j], "upper": u.upper[k, j],
            "active_bound": ("lower" if u.values[k, j] <= u.lower[k, j] else
                             "upper" if u.values[k, j] >= u.upper[k, j] else None),
        } for j in range(u.n_regions)]
    return {
        "controls": table, "residual": report.residual, "cost": report.cost, "converged": report.converged,
        "gradient_norm": report.gradient_norm, "variational_min": report.variational_min,
        "start": report.start, "restarts": report.restarts,
    }


def cmd_optimize(cfg: ScenarioConfig, outdir: Path) -> int:
    if cfg.diffusion is not None:
        raise ConfigurationError("optimize requires diffusion.mode 'controls'")
    check_time_step(cfg.model)
    outdir.mkdir(parents=True, exist_ok=True)
    meta = metadata(cfg, "optimize")
    problem = ReducedProblem(cfg.model, cfg.partition, cfg.cost)
    rng = np.random.default_rng(cfg.seed)
    t0 = time.perf_counter()
    try:
        u, report = optimize(problem, cfg.bounds, cfg.optimizer, start=cfg.controls, rng=rng)
    except OptimizationError as exc:
        write_json(outdir / "controls.json", {"error": str(exc), "report": exc.report}, meta)
        raise
    runtime = time.perf_counter() - t0
    write_json(outdir / "controls.json", _controls_payload(u, report), meta)
    write_csv(outdir / "history.csv", ["iteration", "cost", "gradient_norm", "residual", "step"],
              ([h["iteration"], h["cost"], h["gradient_norm"], h["residual"], h["step"]] for h in report.history))
    traj = simulate(cfg.model, u, cfg.partition)
    write_simulation(cfg, traj, outdir, meta, runtime)
    if not report.converged:
        log.warning("optimizer stopped at the iteration cap with residual %.3e", report.residual)
        return EXIT_OPTIMIZER
    return EXIT_OK


def run_check(cfg: ScenarioConfig, name: str) -> dict:
    rng = np.random.default_rng(cfg.seed)
    model, part = cfg.model, cfg.partition
    u = cfg.controls
    if name == "conservation":
        if cfg.diffusion is not None:
            return checks.check_conservation(model, cfg.diffusion, picard_iterations=cfg.picard_iterations)
        return checks.check_conservation(model, u, part)
    if name == "ode":
        return checks.check_ode(model, u.values.mean(axis=1))
    if name == "gradient":
        return checks.check_gradient(ReducedProblem(model, part, cfg.cost), u)
    if name == "duality":
        return checks.check_duality(model, u, part, rng)
    if name == "contdep":
        direction = rng.uniform(-1.0, 1.0, u.values.shape)
        return checks.continuous_dependence(model, u, part, direction, h=0.1 * float(u.values.min()))
    raise ValueError(name)


def cmd_verify(cfg: ScenarioConfig, outdir: Path, check: str) -> int:
    outdir.mkdir(parents=True, exist_ok=True)
    result = run_check(cfg, check)
    write_json(outdir / f"verify_{check}.json", result, metadata(cfg, f"verify:{check}"))
    log.info("%s: measured %s threshold %s -> %s", check, result["measured"], result["threshold"],
             "pass" if result["passed"] else "FAIL")
    return EXIT_OK if result["passed"] else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seirdiff", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"seirdiff {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="scenario JSON file")
    common.add_argument("--output-dir", help="override output.directory")
    common.add_argument("--seed", type=int, help="override the random seed")
    common.add_argument("--quiet", action="store_true", help="only report errors")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="integrate the state system")
    sub.add_parser("optimize", parents=[common], help="optimize the region diffusivities")
    ver = sub.add_parser("verify", parents=[common], help="run a numerical verification check")
    ver.add_argument("--check", required=True, choices=CHECKS)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.raw["seed"] = args.seed
            cfg = dataclasses.replace(cfg, seed=args.seed)
        if args.output_dir is not None:
            cfg.raw["output"]["directory"] = args.output_dir
        outdir = Path(cfg.raw["output"]["directory"])
        if args.command == "simulate":
            return cmd_simulate(cfg, outdir)
        if args.command == "optimize":
            return cmd_optimize(cfg, outdir)
        return cmd_verify(cfg, outdir, args.check)
    except ConfigParseError as exc:
        log.error("parse error: %s", exc)
        return EXIT_PARSE
    except FileNotFoundError as exc:
        log.error("parse error: %s", exc)
        return EXIT_PARSE
    except ConfigurationError as exc:
        log.error("validation error: %s", exc)
        return EXIT_CONFIG
    except SolverError as exc:
        log.error("solver error: %s %s", exc, exc.diagnostics)
        return EXIT_SOLVER
    except OptimizationError as exc:
        log.error("optimization error: %s", exc)
        return EXIT_OPTIMIZER


if __name__ == "__main__":
    sys.exit(main())
