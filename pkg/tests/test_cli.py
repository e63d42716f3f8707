import csv
import json
from pathlib import Path

import pytest

from seirdiff.cli import main
from seirdiff.config import load_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def scenario(tmp_path, name="gradient_1d.json", **changes):
    raw = json.loads((CONFIGS / name).read_text())
    for dotted, value in changes.items():
        node = raw
        *path, last = dotted.split(".")
        for key in path:
            node = node[key]
        if value is None:
            del node[last]
        else:
            node[last] = value
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(raw))
    return path


def run(args, tmp_path, out="out"):
    return main([*args, "--output-dir", str(tmp_path / out), "--quiet"])


def test_missing_parameter_names_the_field(tmp_path, capsys):
    code = run(["simulate", str(scenario(tmp_path, **{"parameters.sigma": None}))], tmp_path)
    assert code == 3
    assert "parameters.'sigma'" in capsys.readouterr().err


def test_empty_control_interval(tmp_path, capsys):
    code = run(["simulate", str(scenario(tmp_path, **{"controls.lower": 0.5, "controls.upper": 0.2,
                                                      "controls.initial": None}))], tmp_path)
    assert code == 3
    assert "empty control interval" in capsys.readouterr().err


def test_malformed_json_is_a_parse_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"domain": {"extents": [1.0],\n  "cells": [8]')
    assert run(["simulate", str(bad)], tmp_path) == 2
    assert "line 2" in capsys.readouterr().err
    assert run(["simulate", str(tmp_path / "missing.json")], tmp_path) == 2


def test_echo_round_trip(tmp_path):
    cfg = load_config(CONFIGS / "demo.json")
    first = tmp_path / "echo.json"
    first.write_text(cfg.echo())
    assert load_config(first).echo() == first.read_text()


def test_zero_data_gives_zero_trajectory(tmp_path):
    zero = {"background": 0.0}
    path = scenario(tmp_path, **{"initial": {"s": zero, "e": zero, "i": zero, "r": zero}})
    assert run(["simulate", str(path)], tmp_path) == 0
    with (tmp_path / "out" / "trajectory.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 21 * 2
    assert all(float(r[k]) == 0.0 for r in rows for k in ("s", "e", "i", "r", "n"))
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["final_total"] == 0.0


def test_simulate_is_deterministic(tmp_path):
    path = scenario(tmp_path, **{"output.snapshot_every": 10, "output.resolution": "cell"})
    assert run(["simulate", str(path), "--seed", "5"], tmp_path, "a") == 0
    assert run(["simulate", str(path), "--seed", "5"], tmp_path, "b") == 0
    for name in ("trajectory.csv", "mass.csv", "snapshots/fields_00010.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header = (tmp_path / "a" / "trajectory.csv").read_text().splitlines()[0]
    assert header == "time,cell_id,s,e,i,r,n"
    drift = [float(r["relative_drift"]) for r in csv.DictReader((tmp_path / "a" / "mass.csv").open())]
    assert max(drift) <= 1e-10


def test_optimize_outputs(tmp_path):
    assert run(["optimize", str(scenario(tmp_path))], tmp_path) == 0
    out = tmp_path / "out"
    controls = json.loads((out / "controls.json").read_text())
    assert controls["converged"] and controls["residual"] <= 1e-6
    assert controls["metadata"]["config_sha256"]
    entry = controls["controls"]["e"][0]
    assert set(entry) >= {"u", "mu", "clamp_target", "lower", "upper", "active_bound"}
    costs = [float(r["cost"]) for r in csv.DictReader((out / "history.csv").open())]
    assert all(b <= a for a, b in zip(costs, costs[1:]))
    assert (out / "trajectory.csv").exists()


@pytest.mark.parametrize("check", ["gradient", "duality", "conservation", "contdep"])
def test_verify_checks_pass(tmp_path, check):
    assert run(["verify", str(scenario(tmp_path)), "--check", check], tmp_path) == 0
    result = json.loads((tmp_path / "out" / f"verify_{check}.json").read_text())
    assert result["passed"]


def test_verify_ode(tmp_path):
    assert run(["verify", str(CONFIGS / "homogeneous.json"), "--check", "ode"], tmp_path) == 0
    # 40 steps on the demo horizon are too coarse for the 1e-5 threshold
    assert run(["verify", str(CONFIGS / "demo.json"), "--check", "ode"], tmp_path, "demo") == 6


def test_optimize_rejects_nonlinear_mode(tmp_path):
    law = {"form": "constant", "kappa_min": 0.1}
    path = scenario(tmp_path, diffusion={"mode": "nonlinear", "laws": {k: law for k in "seir"}})
    assert run(["simulate", str(path)], tmp_path) == 0
    assert run(["optimize", str(path)], tmp_path) == 3
