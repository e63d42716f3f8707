"""JSON scenario files: parsing, validation, defaults and the resolved echo."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .control import CostConfig, OptimizerOptions
from .errors import ConfigurationError, SeirDiffError
from .forward import SEIRModel
from .grid import Box, Domain, SubdomainPartition, TimeGrid, build_grid
from .linalg import SolverOptions
from .model import (
    SPECIES, ControlVector, GammaTable, MobilityLaw, NonlinearDiffusion, Parameters, TransmissionRate,
)


class ConfigParseError(SeirDiffError):
    """The file is not valid JSON (or not a JSON object)."""


DEFAULTS = {
    "time": {"T": 1.0, "steps": 50},
    "regions": None,
    "target": [],
    "transmission": {"n_sat": 1.0, "n_crit": 1.0, "width": 0.1, "multiplier": None},
    "diffusion": {"mode": "controls", "laws": None, "picard_iterations": 0},
    "optimizer": {"max_iter": 200, "tol": 1e-8, "mode": "projected_gradient", "restarts": 1},
    "solver": {"rtol": 1e-12, "maxiter": 2000},
    "output": {"directory": "output", "snapshot_every": 0, "resolution": "region"},
    "seed": 0,
}

REQUIRED = ("domain", "parameters", "transmission", "initial", "kappa_bounds", "controls", "alpha")


def _merge(defaults, given):
    if isinstance(defaults, dict) and isinstance(given, dict):
        out = copy.deepcopy(defaults)
        for k, v in given.items():
            out[k] = _merge(defaults.get(k), v) if k in defaults else v
        return out
    return copy.deepcopy(given)


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigurationError(f"missing required field {where}{key!r}")
    return d[key]


def _boxes(spec, name: str) -> list[Box] | None:
    if spec is None:
        return None
    out = []
    for n, b in enumerate(spec):
        try:
            lo, hi = tuple(map(float, b["lo"])), tuple(map(float, b["hi"]))
        except (KeyError, TypeError, ValueError):
            raise ConfigurationError(f"{name}[{n}] must have numeric 'lo' and 'hi' lists") from None
        if len(lo) != len(hi) or any(a > c for a, c in zip(lo, hi)):
            raise ConfigurationError(f"{name}[{n}] has an invalid box")
        out.append(Box(lo, hi))
    return out


def _per_region(value, m: int, field: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(m, float(arr))
    if arr.shape != (m,):
        raise ConfigurationError(f"{field} must be a scalar or a list of {m} region values")
    return arr


def _initial_field(spec: dict, name: str, domain: Domain, partition: SubdomainPartition) -> np.ndarray:
    m = partition.n_regions
    if "regions" in spec:
        base = _per_region(spec["regions"], m, f"initial.{name}.regions")[partition.labels]
    else:
        base = np.full(domain.n_cells, float(spec.get("background", 0.0)))
    x = domain.centers
    for n, bump in enumerate(spec.get("bumps", [])):
        try:
            c = np.asarray(bump["center"], dtype=float)
            width = float(bump["width"])
            amp = float(bump["amplitude"])
        except (KeyError, TypeError, ValueError):
            raise ConfigurationError(f"initial.{name}.bumps[{n}] needs center, width, amplitude") from None
        if c.shape != (domain.dimension,) or width <= 0.0:
            raise ConfigurationError(f"initial.{name}.bumps[{n}] has an invalid center or width")
        base = base + amp * np.exp(-np.sum((x - c) ** 2, axis=1) / width**2)
    return base


@dataclass(eq=False)
class ScenarioConfig:
    raw: dict
    domain: Domain
    partition: SubdomainPartition
    model: SEIRModel
    bounds: ControlVector
    kappa_bounds: tuple[float, float]
    cost: CostConfig
    optimizer: OptimizerOptions
    diffusion: NonlinearDiffusion | None
    picard_iterations: int
    output_dir: str
    snapshot_every: int
    resolution: str
    seed: int

    @property
    def controls(self) -> ControlVector:
        """Starting controls: explicit ``controls.initial`` or interval midpoints."""
        init = self.raw["controls"].get("initial")
        if init is None:
            return self.bounds.midpoint()
        return self.bounds.with_values(_control_table(init, self.partition.n_regions, "controls.initial"))

    def echo(self) -> str:
        return dump_config(self.raw)

    def digest(self) -> str:
        return hashlib.sha256(self.echo().encode()).hexdigest()


def dump_config(raw: dict) -> str:
    return json.dumps(raw, indent=2, sort_keys=True) + "\n"


def _control_table(spec, m: int, where: str) -> np.ndarray:
    if isinstance(spec, dict):
        rows = []
        for name in SPECIES:
            if name not in spec:
                raise ConfigurationError(f"missing required field {where}.{name}")
            rows.append(_per_region(spec[name], m, f"{where}.{name}"))
        return np.array(rows)
    return np.stack([_per_region(spec, m, where)] * 4)


def from_dict(given: dict) -> ScenarioConfig:
    if not isinstance(given, dict):
        raise ConfigurationError("configuration must be a JSON object")
    for key in REQUIRED:
        _require(given, key, "")
    raw = _merge(DEFAULTS, given)

    dom_spec = raw["domain"]
    domain = Domain(tuple(_require(dom_spec, "extents", "domain.")), tuple(_require(dom_spec, "cells", "domain.")))
    time_spec = raw["time"]
    timegrid = TimeGrid(float(time_spec["T"]), int(time_spec["steps"]))
    _, partition = build_grid(domain, _boxes(raw["regions"], "regions"), _boxes(raw["target"], "target"))
    m = partition.n_regions

    par = raw["parameters"]
    gamma = par.get("gamma", 0.0)
    if isinstance(gamma, dict):
        gamma_table = GammaTable(tuple(gamma.get("values", ())), tuple(gamma.get("breakpoints", ())))
    else:
        gamma_table = GammaTable.constant(float(gamma))
    params = Parameters(float(_require(par, "sigma", "parameters.")), float(_require(par, "phi_e", "parameters.")),
                        float(_require(par, "phi_r", "parameters.")), gamma_table)

    tr = raw["transmission"]
    mult = tr.get("multiplier")
    if mult is not None:
        mult = _per_region(mult, m, "transmission.multiplier")[partition.labels]
    rate = TransmissionRate(
        str(_require(tr, "form", "transmission.")), float(_require(tr, "beta_i0", "transmission.")),
        float(_require(tr, "beta_e0", "transmission.")), float(tr["n_sat"]), float(tr["n_crit"]),
        float(tr["width"]), mult,
    )

    init_spec = raw["initial"]
    init = np.stack([_initial_field(_require(init_spec, name, "initial."), name, domain, partition)
                     for name in SPECIES])

    solver = SolverOptions(float(raw["solver"]["rtol"]), int(raw["solver"]["maxiter"]))
    model = SEIRModel(domain, params, rate, init, timegrid, solver)

    kb = raw["kappa_bounds"]
    if len(kb) != 2 or not (0.0 < float(kb[0]) <= float(kb[1])):
        raise ConfigurationError("kappa_bounds must be [kappa_lower, kappa_star] with 0 < lower <= upper")
    kappa_bounds = (float(kb[0]), float(kb[1]))
    ctl = raw["controls"]
    lower = _control_table(_require(ctl, "lower", "controls."), m, "controls.lower")
    upper = _control_table(_require(ctl, "upper", "controls."), m, "controls.upper")
    bounds = ControlVector(lower.copy(), lower, upper)
    bounds.check_kappa_bounds(*kappa_bounds)

    diff = raw["diffusion"]
    nonlinear = None
    if diff["mode"] == "nonlinear":
        laws = diff.get("laws")
        if not isinstance(laws, dict):
            raise ConfigurationError("diffusion.laws must map each compartment to a law")
        try:
            nonlinear = NonlinearDiffusion(tuple(MobilityLaw(**laws[name]) for name in SPECIES))
        except KeyError as exc:
            raise ConfigurationError(f"missing required field diffusion.laws.{exc.args[0]}") from None
        except TypeError as exc:
            raise ConfigurationError(f"invalid diffusion law: {exc}") from None
        if nonlinear.kappa_lower < kappa_bounds[0] or nonlinear.kappa_upper > kappa_bounds[1]:
            raise ConfigurationError("diffusion laws leave the kappa_bounds interval")
    elif diff["mode"] != "controls":
        raise ConfigurationError("diffusion.mode must be 'controls' or 'nonlinear'")

    opt = raw["optimizer"]
    options = OptimizerOptions(max_iter=int(opt["max_iter"]), tol=float(opt["tol"]), mode=str(opt["mode"]),
                               restarts=int(opt["restarts"]))
    out = raw["output"]
    if out["resolution"] not in ("region", "cell"):
        raise ConfigurationError("output.resolution must be 'region' or 'cell'")
    cfg = ScenarioConfig(
        raw=raw, domain=domain, partition=partition, model=model, bounds=bounds,
        kappa_bounds=kappa_bounds, cost=CostConfig(float(raw["alpha"])), optimizer=options,
        diffusion=nonlinear, picard_iterations=int(diff["picard_iterations"]),
        output_dir=str(out["directory"]), snapshot_every=int(out["snapshot_every"]),
        resolution=str(out["resolution"]), seed=int(raw["seed"]),
    )
    start = cfg.controls
    if not start.is_admissible():
        raise ConfigurationError("controls.initial lies outside the admissible intervals")
    return cfg


def load_config(path: str | Path) -> ScenarioConfig:
    """Read and validate a scenario file.

    Raises :class:`ConfigParseError` for malformed JSON (with line and column)
    and :class:`ConfigurationError` for violated invariants.
    """
    text = Path(path).read_text()
    try:
        given = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(given, dict):
        raise ConfigParseError(f"{path}: top level must be a JSON object")
    try:
        return from_dict(given)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"invalid value: {exc}") from None
