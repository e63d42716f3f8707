"""Cost functional, reduced gradient and projected-gradient optimization of region diffusivities."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, OptimizationError
from .forward import SEIRModel, Trajectory, simulate
from .grid import SubdomainPartition
from .model import E, I, ControlVector
from .sensitivity import assemble_coeffs, gradient_pairings, solve_adjoint, tracking_weights

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CostConfig:
    alpha: float

    def __post_init__(self):
        if not (self.alpha > 0.0 and np.isfinite(self.alpha)):
            raise ConfigurationError("alpha must be a positive constant")


def tracking_cost(traj: Trajectory, target: np.ndarray) -> float:
    vol = traj.model.domain.cell_volume
    chi = np.asarray(target, dtype=bool)
    X = traj.states
    per_level = np.sum(X[:, E][:, chi] ** 2 + X[:, I][:, chi] ** 2, axis=1) * vol
    return 0.5 * float(tracking_weights(traj) @ per_level)


def control_cost(u: ControlVector | np.ndarray, alpha: float, partition: SubdomainPartition, T: float) -> float:
    values = u.values if isinstance(u, ControlVector) else np.asarray(u)
    return 0.5 * alpha * T * float(np.sum(partition.measures * np.sum(values**2, axis=0)))


def evaluate_cost(traj: Trajectory, u: ControlVector | np.ndarray, cfg: CostConfig,
                  partition: SubdomainPartition) -> float:
    """Tracking of ``e`` and ``i`` on the target (trapezoid in time) plus the control penalty."""
    return tracking_cost(traj, partition.target) + control_cost(u, cfg.alpha, partition, traj.timegrid.T)


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, ControlVector) else np.asarray(u, dtype=float)


def weighted_means(traj: Trajectory, adjoint: np.ndarray, partition: SubdomainPartition) -> np.ndarray:
    """Space-time region means of ``grad x . grad p``, shape ``(4, m)``."""
    T = traj.timegrid.T
    return gradient_pairings(traj, adjoint, partition) / (partition.measures * T)


def reduced_gradient(traj: Trajectory, adjoint: np.ndarray, u, cfg: CostConfig,
                     partition: SubdomainPartition) -> np.ndarray:
    T = traj.timegrid.T
    return cfg.alpha * _values(u) * partition.measures * T - gradient_pairings(traj, adjoint, partition)


def project(values: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    return np.maximum(np.minimum(upper, values), lower)


def optimality_residual(u, mu: np.ndarray, alpha: float, lower: np.ndarray | None = None,
                        upper: np.ndarray | None = None) -> float:
    """``max |u - clamp(mu / alpha)|`` over all compartments and regions."""
    if isinstance(u, ControlVector):
        lower = u.lower if lower is None else lower
        upper = u.upper if upper is None else upper
    values = _values(u)
    return float(np.max(np.abs(values - project(mu / alpha, lower, upper))))


def variational_check(gradient: np.ndarray, u: ControlVector, rng: np.random.Generator,
                      samples: int = 100) -> float:
    """Smallest ``<g, v - u>`` over random admissible ``v`` (nonnegative at a stationary point)."""
    worst = np.inf
    for _ in range(samples):
        v = rng.uniform(u.lower, u.upper)
        worst = min(worst, float(np.sum(gradient * (v - u.values))))
    return worst


@dataclass
class Evaluation:
    u: ControlVector
    trajectory: Trajectory
    cost: float
    adjoint: np.ndarray | None = None
    gradient: np.ndarray | None = None
    mu: np.ndarray | None = None


class ReducedProblem:
    """Cost as a function of the region controls alone, with adjoint gradients."""

    def __init__(self, model: SEIRModel, partition: SubdomainPartition, cfg: CostConfig):
        self.model = model
        self.partition = partition
        self.cfg = cfg
        self.n_forward = 0
        self.n_adjoint = 0

    def evaluate(self, u: ControlVector, gradient: bool = False) -> Evaluation:
        traj = simulate(self.model, u, self.partition)
        self.n_forward += 1
        ev = Evaluation(u, traj, evaluate_cost(traj, u, self.cfg, self.partition))
        if gradient:
            self.complete(ev)
        return ev

    def complete(self, ev: Evaluation) -> Evaluation:
        if ev.gradient is None:
            coeffs = assemble_coeffs(ev.trajectory)
            ev.adjoint = solve_adjoint(ev.trajectory, coeffs, self.partition.target)
            self.n_adjoint += 1
            pair = gradient_pairings(ev.trajectory, ev.adjoint, self.partition)
            T = self.model.timegrid.T
            ev.mu = pair / (self.partition.measures * T)
            ev.gradient = self.cfg.alpha * ev.u.values * self.partition.measures * T - pair
        return ev

    def cost(self, values: np.ndarray, template: ControlVector) -> float:
        return self.evaluate(template.with_values(values)).cost

    def metric(self) -> np.ndarray:
        """Diagonal of the control-penalty Hessian, ``alpha |Omega_j| T``."""
        return self.cfg.alpha * self.partition.measures * self.model.timegrid.T * np.ones((4, 1))


@dataclass(frozen=True)
class OptimizerOptions:
    max_iter: int = 200
    tol: float = 1e-8
    armijo_c: float = 1e-4
    shrink: float = 0.5
    max_halvings: int = 40
    mode: str = "projected_gradient"
    restarts: int = 1

    def __post_init__(self):
        if self.mode not in ("projected_gradient", "fixed_point"):
            raise ConfigurationError(f"unknown optimizer mode {self.mode!r}")
        if self.restarts < 1:
            raise ConfigurationError("restarts must be at least 1")


@dataclass
class OptimalityReport:
    mu: np.ndarray
    target: np.ndarray
    residual: float
    cost: float
    gradient: np.ndarray
    converged: bool
    start: np.ndarray
    history: list[dict] = field(default_factory=list)
    restarts: list[dict] = field(default_factory=list)
    variational_min: float | None = None

    @property
    def gradient_norm(self) -> float:
        return float(np.max(np.abs(self.gradient)))


def _run(problem: ReducedProblem, start: ControlVector, opts: OptimizerOptions):
    metric = problem.metric()
    ev = problem.evaluate(start, gradient=True)
    history = []
    step = 1.0
    alpha = problem.cfg.alpha
    for it in range(opts.max_iter + 1):
        res = optimality_residual(ev.u, ev.mu, alpha)
        history.append({"iteration": it, "cost": ev.cost, "gradient_norm": float(np.max(np.abs(ev.gradient))),
                        "residual": res, "step": step if it else 0.0})
        log.debug("iter %d cost %.12g residual %.3e", it, ev.cost, res)
        if res <= opts.tol or it == opts.max_iter:
            return ev, history, res <= opts.tol
        if opts.mode == "fixed_point":
            ev = problem.evaluate(ev.u.with_values(project(ev.mu / alpha, ev.u.lower, ev.u.upper)), gradient=True)
            step = 1.0
            continue
        # scaled projected gradient; unit step in this metric is the clamp(mu/alpha) map
        step = min(1.0, 2.0 * step)
        for _ in range(opts.max_halvings):
            trial = project(ev.u.values - step * ev.gradient / metric, ev.u.lower, ev.u.upper)
            cand = problem.evaluate(ev.u.with_values(trial))
            if cand.cost <= ev.cost + opts.armijo_c * float(np.sum(ev.gradient * (trial - ev.u.values))):
                break
            step *= opts.shrink
        else:
            raise OptimizationError(
                f"line search failed after {opts.max_halvings} halvings at iteration {it}",
                {"iteration": it, "cost": ev.cost, "residual": res, "history": history},
            )
        ev = problem.complete(cand)
    raise AssertionError("unreachable")


def optimize(problem: ReducedProblem, bounds: ControlVector, opts: OptimizerOptions | None = None,
             start: ControlVector | None = None, rng: np.random.Generator | None = None,
             variational_samples: int = 100) -> tuple[ControlVector, OptimalityReport]:
    """Minimize the reduced cost over the box ``bounds.lower <= u <= bounds.upper``.

    The first run starts from ``start`` (default: interval midpoints); further
    restarts draw random admissible points from ``rng``. The best stationary
    result is returned.
    """
    opts = opts or OptimizerOptions()
    rng = rng if rng is not None else np.random.default_rng(0)
    starts = [start if start is not None else bounds.midpoint()]
    starts += [bounds.random(rng) for _ in range(opts.restarts - 1)]
    best = None
    runs = []
    for x0 in starts:
        ev, history, converged = _run(problem, x0, opts)
        runs.append({"start": x0.values.tolist(), "cost": ev.cost, "converged": converged,
                     "iterations": len(history) - 1})
        if best is None or ev.cost < best[0].cost:
            best = (ev, history, converged, x0)
    ev, history, converged, x0 = best
    alpha = problem.cfg.alpha
    report = OptimalityReport(
        mu=ev.mu, target=project(ev.mu / alpha, ev.u.lower, ev.u.upper),
        residual=optimality_residual(ev.u, ev.mu, alpha), cost=ev.cost, gradient=ev.gradient,
        converged=converged, start=x0.values, history=history, restarts=runs,
        variational_min=variational_check(ev.gradient, ev.u, rng, variational_samples),
    )
    return ev.u, report
