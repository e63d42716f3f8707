"""Independent numerical checks: finite differences, ODE reduction, duality, convergence rates."""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.integrate import solve_ivp

from .control import ReducedProblem
from .forward import SEIRModel, h1_distance, relative_drift, simulate
from .grid import SubdomainPartition
from .model import ControlVector
from .sensitivity import assemble_coeffs, duality_gap, solve_tangent

THRESHOLDS = {
    "gradient": 1e-6,
    "duality": 1e-9,
    "conservation": 1e-10,
    "ode": 1e-5,
    "contdep": (1.8, 2.2),
}


def fd_gradient(problem: ReducedProblem, u: ControlVector, eps: float = 1e-4) -> np.ndarray:
    """Centered finite differences of the reduced cost, one coordinate at a time."""
    g = np.zeros_like(u.values)
    for idx in np.ndindex(*u.values.shape):
        v = u.values.copy()
        v[idx] += eps
        plus = problem.cost(v, u)
        v[idx] -= 2.0 * eps
        minus = problem.cost(v, u)
        g[idx] = (plus - minus) / (2.0 * eps)
    return g


def check_gradient(problem: ReducedProblem, u: ControlVector, eps: float = 1e-4) -> dict:
    ev = problem.evaluate(u, gradient=True)
    fd = fd_gradient(problem, u, eps)
    rel = np.abs(ev.gradient - fd) / np.maximum(np.abs(fd), np.finfo(float).tiny)
    return {
        "check": "gradient", "eps": eps, "adjoint": ev.gradient.tolist(), "finite_difference": fd.tolist(),
        "relative_errors": rel.tolist(), "measured": float(rel.max()), "threshold": THRESHOLDS["gradient"],
        "passed": bool(rel.max() <= THRESHOLDS["gradient"]),
    }


def check_duality(model: SEIRModel, u: ControlVector, partition: SubdomainPartition,
                  rng: np.random.Generator) -> dict:
    traj = simulate(model, u, partition)
    coeffs = assemble_coeffs(traj)
    direction = rng.normal(size=u.values.shape)
    gap = duality_gap(traj, coeffs, direction, partition)
    return {"check": "duality", "measured": gap, "threshold": THRESHOLDS["duality"],
            "passed": bool(gap <= THRESHOLDS["duality"])}


def check_conservation(model: SEIRModel, diffusion, partition: SubdomainPartition | None = None,
                       picard_iterations: int = 0) -> dict:
    traj = simulate(model, diffusion, partition, picard_iterations=picard_iterations)
    drift = relative_drift(traj)
    return {"check": "conservation", "measured": drift, "threshold": THRESHOLDS["conservation"],
            "min_value": traj.metadata["min_value"], "passed": bool(drift <= THRESHOLDS["conservation"])}


def ode_reference(model: SEIRModel, y0: np.ndarray, rtol: float = 1e-13, atol: float = 1e-15) -> np.ndarray:
    """Solution at ``T`` of the spatially homogeneous system, by an 8th-order Runge-Kutta method.

    Returns shape ``(4,)``.
    """
    if model.rate.multiplier is not None:
        raise ValueError("the ODE reduction needs a spatially uniform transmission rate")
    p = model.params
    rate = model.rate
    breaks = [0.0] + [b for b in p.gamma.breakpoints if 0.0 < b < model.timegrid.T] + [model.timegrid.T]

    def rhs(t, y, g):
        s, e, i, r = y
        bi, be = rate.evaluate(t, np.array([y.sum()]))
        inc = float(bi[0] * s * i + be[0] * s * e)
        return [-inc + g * r, inc - (p.sigma + p.phi_e) * e, p.sigma * e - p.phi_r * i,
                p.phi_r * i + p.phi_e * e - g * r]

    y = np.asarray(y0, dtype=float)
    # integrate piecewise so each gamma value is applied on its own interval
    for a, b in zip(breaks[:-1], breaks[1:]):
        g = p.gamma(0.5 * (a + b))
        sol = solve_ivp(rhs, (a, b), y, method="DOP853", rtol=rtol, atol=atol, args=(g,))
        y = sol.y[:, -1]
    return y


def homogeneous_model(model: SEIRModel) -> SEIRModel:
    """Same parameters with the initial data replaced by its spatial mean and no spatial multiplier."""
    init = np.repeat(model.initial.mean(axis=1, keepdims=True), model.domain.n_cells, axis=1)
    rate = dataclasses.replace(model.rate, multiplier=None)
    return dataclasses.replace(model, initial=init, rate=rate)


def check_ode(model: SEIRModel, kappa_value: float | np.ndarray = 0.1) -> dict:
    hom = homogeneous_model(model)
    kappa = np.broadcast_to(np.reshape(kappa_value, (-1, 1)), (4, hom.domain.n_cells)).astype(float)
    traj = simulate(hom, kappa)
    ref = ode_reference(hom, hom.initial[:, 0])
    final = traj.states[-1]
    err = float(np.max(np.abs(final - ref[:, None])) / max(np.max(np.abs(ref)), np.finfo(float).tiny))
    spread = float(np.max(np.abs(traj.states - traj.states[:, :, :1])))
    return {"check": "ode", "steps": hom.timegrid.steps, "reference": ref.tolist(),
            "final_mean": final.mean(axis=1).tolist(), "measured": err, "spatial_spread": spread,
            "threshold": THRESHOLDS["ode"], "passed": bool(err <= THRESHOLDS["ode"])}


def tangent_fd_errors(model: SEIRModel, u: ControlVector, partition: SubdomainPartition,
                      direction: np.ndarray, epsilons=(1e-3, 1e-4)) -> list[float]:
    """Max-norm gap between the tangent solution and centered differences of two forward solves."""
    traj = simulate(model, u, partition)
    tangent = solve_tangent(traj, assemble_coeffs(traj), direction, partition)
    errors = []
    for eps in epsilons:
        plus = simulate(model, u.with_values(u.values + eps * direction), partition).states
        minus = simulate(model, u.with_values(u.values - eps * direction), partition).states
        errors.append(float(np.max(np.abs((plus - minus) / (2.0 * eps) - tangent))))
    return errors


def continuous_dependence(model: SEIRModel, u: ControlVector, partition: SubdomainPartition,
                          direction: np.ndarray, h: float, levels: int = 3) -> dict:
    """Trajectory distances for control perturbations ``h, h/2, h/4, ...`` along ``direction``.

    ``direction`` is normalized to unit max norm, so the perturbation size
    equals ``||delta u||_inf``.
    """
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.max(np.abs(direction))
    base = simulate(model, u, partition)
    sizes = [h / 2**k for k in range(levels)]
    dists = [h1_distance(simulate(model, u.with_values(u.values + s * direction), partition), base)
             for s in sizes]
    ratios = [a / b for a, b in zip(dists, dists[1:])]
    lo, hi = THRESHOLDS["contdep"]
    return {"check": "contdep", "sizes": sizes, "distances": dists, "ratios": ratios,
            "constant_estimates": [d / s for d, s in zip(dists, sizes)],
            "threshold": [lo, hi], "measured": ratios,
            "passed": bool(all(lo <= r <= hi for r in ratios))}


def temporal_convergence(model: SEIRModel, diffusion, partition: SubdomainPartition | None = None,
                         steps=(64, 128, 256), reference_steps: int = 4096) -> dict:
    """Observed order of the final-time error against a fine-step reference."""
    def final(K):
        m = dataclasses.replace(model, timegrid=dataclasses.replace(model.timegrid, steps=K))
        return simulate(m, diffusion, partition).states[-1]

    ref = final(reference_steps)
    errors = [float(np.max(np.abs(final(K) - ref))) for K in steps]
    orders = [float(np.log2(a / b)) for a, b in zip(errors, errors[1:])]
    return {"steps": list(steps), "reference_steps": reference_steps, "errors": errors, "orders": orders}
