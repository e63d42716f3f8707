"""Backward-Euler time stepping of the four-compartment reaction-diffusion system.

One step from level k to k+1 solves the compartments in the order s, e, i, r:

    (1/dt + P) s'  - div(k_s grad s') = s/dt + g r          P = b_i(n) i + b_e(n) e
    (1/dt + sig + phi_e) e' - div(k_e grad e') = e/dt + P s'
    (1/dt + phi_r) i' - div(k_i grad i') = i/dt + sig e'
    (1/dt) r'      - div(k_r grad r') = r/dt + phi_r i' + phi_e e' - g r

with ``n`` and ``P`` from level k and ``g = gamma(t_{k+1})``. Each exchange
term appears with opposite signs in exactly two equations, so the discrete
total population is conserved up to the linear-solver residual.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, UsageError
from .grid import Domain, SubdomainPartition, TimeGrid, assemble_diffusion
from .linalg import DEFAULT_SOLVER, SolverOptions, pcg
from .model import (
    E, I, R, S, ControlVector, NonlinearDiffusion, Parameters, TransmissionRate,
    expand_controls, validate_initial,
)

log = logging.getLogger(__name__)

NEGATIVITY_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SEIRModel:
    domain: Domain
    params: Parameters
    rate: TransmissionRate
    initial: np.ndarray
    timegrid: TimeGrid
    solver: SolverOptions = DEFAULT_SOLVER

    def __post_init__(self):
        init = validate_initial(self.initial)
        if init.shape[1] != self.domain.n_cells:
            raise ConfigurationError("initial data does not match the grid")
        object.__setattr__(self, "initial", init)
        if self.rate.multiplier is not None and self.rate.multiplier.shape != (self.domain.n_cells,):
            raise ConfigurationError("transmission multiplier does not match the grid")


def safe_time_step(model: SEIRModel) -> float:
    """Heuristic positivity bound on the step size."""
    n_max = float(model.initial.sum(axis=0).max())
    p = model.params
    return 0.5 / (model.rate.bound * n_max + p.sigma + p.phi_e + p.phi_r + p.gamma.bound)


def check_time_step(model: SEIRModel) -> bool:
    dt_safe = safe_time_step(model)
    if model.timegrid.dt > dt_safe:
        log.warning("time step %.3g exceeds the positivity guard %.3g", model.timegrid.dt, dt_safe)
        return False
    return True


def incidence(model: SEIRModel, t: float, state: np.ndarray) -> np.ndarray:
    """``beta_i(n) i + beta_e(n) e`` per cell."""
    bi, be = model.rate.evaluate(t, state.sum(axis=0))
    return bi * state[I] + be * state[E]


def _system(K: sp.spmatrix, vol: float, diag: np.ndarray | float) -> sp.csr_matrix:
    n = K.shape[0]
    return (K + sp.diags(np.broadcast_to(vol * diag, (n,)))).tocsr()


def step_forward(model: SEIRModel, current: np.ndarray, t: float,
                 stiffness: list[sp.spmatrix], dt: float | None = None) -> np.ndarray:
    """Advance the state ``current`` (shape ``(4, n_cells)``) from ``t`` to ``t + dt``."""
    dt = model.timegrid.dt if dt is None else dt
    vol = model.domain.cell_volume
    p = model.params
    opts = model.solver
    s, e, i, r = current
    g = p.gamma(t + dt)
    P = incidence(model, t, current)

    new = np.empty_like(current)
    new[S] = pcg(_system(stiffness[S], vol, 1.0 / dt + P), vol * (s / dt + g * r), s, opts.rtol, opts.maxiter)
    new[E] = pcg(_system(stiffness[E], vol, 1.0 / dt + p.sigma + p.phi_e),
                 vol * (e / dt + P * new[S]), e, opts.rtol, opts.maxiter)
    new[I] = pcg(_system(stiffness[I], vol, 1.0 / dt + p.phi_r),
                 vol * (i / dt + p.sigma * new[E]), i, opts.rtol, opts.maxiter)
    new[R] = pcg(_system(stiffness[R], vol, 1.0 / dt),
                 vol * (r / dt + p.phi_r * new[I] + p.phi_e * new[E] - g * r), r, opts.rtol, opts.maxiter)
    return new


@dataclass(eq=False)
class Trajectory:
    model: SEIRModel
    states: np.ndarray
    mode: str
    kappa: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def timegrid(self) -> TimeGrid:
        return self.model.timegrid

    @property
    def dt(self) -> float:
        return self.model.timegrid.dt

    @property
    def times(self) -> np.ndarray:
        return self.model.timegrid.times

    @property
    def total(self) -> np.ndarray:
        """``n`` at every level, shape ``(K+1, n_cells)``."""
        return self.states.sum(axis=1)


def _stiffness(domain: Domain, kappa: np.ndarray) -> list[sp.csr_matrix]:
    return [assemble_diffusion(domain, k).stiffness for k in kappa]


def simulate(model: SEIRModel, diffusion, partition: SubdomainPartition | None = None,
             picard_iterations: int = 0, picard_tol: float = 1e-10) -> Trajectory:
    """Integrate the state system over the model's time grid.

    ``diffusion`` is either fixed coefficients (a ``ControlVector`` together
    with ``partition``, or per-cell fields of shape ``(4, n_cells)``) or a
    :class:`NonlinearDiffusion`, evaluated at the previous level's ``n``.
    With ``picard_iterations > 0`` the nonlinear mode instead re-evaluates
    the coefficients at the new level until ``n`` changes by less than
    ``picard_tol`` in the max norm.
    """
    domain, tg = model.domain, model.timegrid
    K = tg.steps
    states = np.empty((K + 1, 4, domain.n_cells))
    states[0] = model.initial
    times = tg.times

    if isinstance(diffusion, NonlinearDiffusion):
        mode, kappa = "nonlinear", None
        picard_used = 0
        for k in range(K):
            x = states[k]
            new = step_forward(model, x, times[k], _stiffness(domain, diffusion.evaluate(x.sum(axis=0))))
            for _ in range(picard_iterations):
                again = step_forward(model, x, times[k], _stiffness(domain, diffusion.evaluate(new.sum(axis=0))))
                picard_used += 1
                delta = np.max(np.abs(again.sum(axis=0) - new.sum(axis=0)))
                new = again
                if delta <= picard_tol:
                    break
            states[k + 1] = new
        extra = {"picard_iterations": picard_used}
    else:
        if isinstance(diffusion, ControlVector):
            if partition is None:
                raise UsageError("a partition is required to expand region controls")
            kappa = expand_controls(diffusion, partition)
        else:
            kappa = np.asarray(diffusion, dtype=float)
            if kappa.shape != (4, domain.n_cells):
                raise UsageError("diffusion fields must have shape (4, n_cells)")
        mode = "fixed"
        stiff = _stiffness(domain, kappa)
        for k in range(K):
            states[k + 1] = step_forward(model, states[k], times[k], stiff)
        extra = {}

    min_value = float(states.min())
    meta = {"min_value": min_value, "negative": min_value < -NEGATIVITY_TOL, **extra}
    if meta["negative"]:
        log.warning("state dropped to %.3g (below -%g)", min_value, NEGATIVITY_TOL)
    return Trajectory(model, states, mode, kappa, meta)


def mass_history(traj: Trajectory) -> np.ndarray:
    """Total population ``int n`` at every level."""
    return traj.total.sum(axis=1) * traj.model.domain.cell_volume


def relative_drift(traj: Trajectory) -> float:
    mass = mass_history(traj)
    if mass[0] == 0.0:
        return float(np.max(np.abs(mass)))
    return float(np.max(np.abs(mass - mass[0])) / abs(mass[0]))


def h1_distance(traj_a: Trajectory, traj_b: Trajectory) -> float:
    """Discrete ``L2(0,T; H1)`` norm of the difference of two trajectories.

    Uses the unit-coefficient stiffness for the gradient part and the
    right-endpoint rule in time (levels 1..K).
    """
    domain = traj_a.model.domain
    diff = traj_a.states[1:] - traj_b.states[1:]
    K1 = assemble_diffusion(domain, np.ones(domain.n_cells)).stiffness
    l2 = np.sum(diff**2) * domain.cell_volume
    grad = sum(float(np.sum(d * (K1 @ d.T).T)) for d in diff)
    return float(np.sqrt(traj_a.dt * (l2 + grad)))
