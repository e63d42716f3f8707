"""Tangent and adjoint sensitivities of the discrete forward map.

The tangent solver is the exact derivative of :func:`forward.step_forward`
with respect to the region controls, and the adjoint solver is its exact
transpose, so adjoint gradients agree with finite differences of the
discrete cost up to linear-solver tolerance.

Reaction coupling is described by the 4x4 Jacobian of the pointwise
reaction map

    R_s = b_i(n) s i + b_e(n) s e - g r
    R_e = -(b_i(n) s i + b_e(n) s e) + (sig + phi_e) e
    R_i = phi_r i - sig e
    R_r = -phi_r i - phi_e e + g r

whose rows are (A_k, B_k, C_k, D_k) for k = 1..4. For step k the Jacobian is
taken at the scheme's evaluation point: ``s`` from level k+1, ``e``, ``i``,
``r`` and the argument of ``b`` from level k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import UsageError
from .forward import SEIRModel, Trajectory, _system, incidence
from .grid import Domain, SubdomainPartition, face_differences, stiffness, transmissibility_sensitivity
from .linalg import pcg
from .model import E, I, R, S, expand_controls


def reaction_terms(model: SEIRModel, t: float, state: np.ndarray, n: np.ndarray | None = None,
                   gamma: float | None = None) -> np.ndarray:
    """Pointwise reaction map, shape ``(4, n_cells)``.

    ``n`` overrides the argument of the transmission rates (default: the
    sum of ``state``).
    """
    p = model.params
    s, e, i, r = state
    n = state.sum(axis=0) if n is None else n
    g = p.gamma(t) if gamma is None else gamma
    bi, be = model.rate.evaluate(t, n)
    inc = bi * s * i + be * s * e
    return np.stack([
        inc - g * r,
        -inc + (p.sigma + p.phi_e) * e,
        p.phi_r * i - p.sigma * e,
        -p.phi_r * i - p.phi_e * e + g * r,
    ])


def reaction_jacobian(model: SEIRModel, t: float, state: np.ndarray, n: np.ndarray | None = None,
                      gamma: float | None = None) -> np.ndarray:
    """Jacobian of :func:`reaction_terms`, shape ``(4, 4, n_cells)`` as [row, column, cell].

    Differentiation is w.r.t. the state including its entry into ``n``.
    """
    p = model.params
    s, e, i, r = state
    n = state.sum(axis=0) if n is None else n
    g = p.gamma(t) if gamma is None else gamma
    bi, be = model.rate.evaluate(t, n)
    dbi, dbe = model.rate.derivative(t, n)
    common = dbi * s * i + dbe * s * e
    zero = np.zeros_like(s)
    A1 = common + bi * i + be * e
    B1 = common + be * s
    C1 = common + bi * s
    D1 = common - g
    row1 = [A1, B1, C1, D1]
    row2 = [-A1, -B1 + p.sigma + p.phi_e, -C1, -D1 - g]
    row3 = [zero, zero - p.sigma, zero + p.phi_r, zero]
    row4 = [zero, zero - p.phi_e, zero - p.phi_r, zero + g]
    return np.array([row1, row2, row3, row4])


@dataclass(frozen=True, eq=False)
class LinearizedCoefficients:
    """Per-step coefficient fields.

    ``matrix[k, row, col]`` is the coefficient of compartment ``col`` in
    equation ``row`` for step k -> k+1; columns are (A, B, C, D). ``incidence``
    is ``b_i(n^k) i^k + b_e(n^k) e^k``, the part of A_1 multiplying the new
    level ``s`` in the semi-implicit step.
    """

    matrix: np.ndarray
    incidence: np.ndarray

    def coefficient(self, letter: str, row: int) -> np.ndarray:
        """Letter-and-row access, e.g. ``coefficient("B", 2)``; shape ``(K, n_cells)``."""
        return self.matrix[:, row - 1, "ABCD".index(letter)]


def _require_fixed(traj: Trajectory) -> None:
    if traj.mode != "fixed":
        raise UsageError("sensitivities need a trajectory computed with fixed diffusion coefficients")


def assemble_coeffs(traj: Trajectory) -> LinearizedCoefficients:
    _require_fixed(traj)
    model = traj.model
    X = traj.states
    times = traj.times
    K = traj.timegrid.steps
    mats = np.empty((K, 4, 4, model.domain.n_cells))
    inc = np.empty((K, model.domain.n_cells))
    for k in range(K):
        point = X[k].copy()
        point[S] = X[k + 1, S]
        mats[k] = reaction_jacobian(model, times[k], point, n=X[k].sum(axis=0),
                                    gamma=model.params.gamma(times[k + 1]))
        inc[k] = incidence(model, times[k], X[k])
    return LinearizedCoefficients(mats, inc)


class _StepOperators:
    """Fixed-coefficient stiffness matrices and their control derivatives."""

    def __init__(self, domain: Domain, kappa: np.ndarray):
        self.domain = domain
        self.kappa = kappa
        self.stiffness = []
        self.dtrans = []
        for k in kappa:
            da, db = transmissibility_sensitivity(domain, k)
            self.dtrans.append((da, db))
            a, b, geom = domain.faces
            self.stiffness.append(stiffness(domain, geom * 2.0 * k[a] * k[b] / (k[a] + k[b])))

    def face_rate(self, species: int, dkappa: np.ndarray) -> np.ndarray:
        """Directional derivative of the face transmissibilities."""
        a, b, _ = self.domain.faces
        da, db = self.dtrans[species]
        return da * dkappa[a] + db * dkappa[b]

    def region_weights(self, species: int, labels: np.ndarray, m: int) -> np.ndarray:
        """``dT_f / du_j`` for every region j, shape ``(m, n_faces)``."""
        a, b, _ = self.domain.faces
        da, db = self.dtrans[species]
        w = np.zeros((m, a.size))
        np.add.at(w, (labels[a], np.arange(a.size)), da)
        np.add.at(w, (labels[b], np.arange(a.size)), db)
        return w


def _apply_flux_derivative(domain: Domain, face_rate: np.ndarray, v: np.ndarray) -> np.ndarray:
    a, b, _ = domain.faces
    flux = face_rate * (v[a] - v[b])
    out = np.zeros(domain.n_cells)
    np.add.at(out, a, flux)
    np.add.at(out, b, -flux)
    return out


def solve_tangent(traj: Trajectory, coeffs: LinearizedCoefficients, direction: np.ndarray,
                  partition: SubdomainPartition) -> np.ndarray:
    """Derivative of the trajectory along a control direction of shape ``(4, m)``.

    Returns tangent fields ``(xi, eta, iota, rho)`` per level, shape
    ``(K+1, 4, n_cells)``, zero at level 0.
    """
    _require_fixed(traj)
    model = traj.model
    domain = model.domain
    p = model.params
    dt = traj.dt
    vol = domain.cell_volume
    opts = model.solver
    X = traj.states
    K = traj.timegrid.steps
    ops = _StepOperators(domain, traj.kappa)
    dkappa = expand_controls(direction, partition)
    rates = [ops.face_rate(x, dkappa[x]) for x in range(4)]
    inactive = [not np.any(dkappa[x]) for x in range(4)]

    T = np.zeros((K + 1, 4, domain.n_cells))
    for k in range(K):
        c = coeffs.matrix[k]
        P = coeffs.incidence[k]
        prev = T[k]
        new = X[k + 1]
        src = [np.zeros(domain.n_cells) if inactive[x] else
               -_apply_flux_derivative(domain, rates[x], new[x]) for x in range(4)]

        explicit_s = prev[S] / dt - (c[0, 0] - P) * prev[S] - c[0, 1] * prev[E] - c[0, 2] * prev[I] - c[0, 3] * prev[R]
        xi = pcg(_system(ops.stiffness[S], vol, 1.0 / dt + P), vol * explicit_s + src[S],
                 prev[S], opts.rtol, opts.maxiter)
        explicit_e = (prev[E] / dt - (c[1, 0] + P) * prev[S] - (c[1, 1] - p.sigma - p.phi_e) * prev[E]
                      - c[1, 2] * prev[I] - c[1, 3] * prev[R] + P * xi)
        eta = pcg(_system(ops.stiffness[E], vol, 1.0 / dt + p.sigma + p.phi_e), vol * explicit_e + src[E],
                  prev[E], opts.rtol, opts.maxiter)
        iota = pcg(_system(ops.stiffness[I], vol, 1.0 / dt + c[2, 2]),
                   vol * (prev[I] / dt - c[2, 1] * eta) + src[I], prev[I], opts.rtol, opts.maxiter)
        rho = pcg(_system(ops.stiffness[R], vol, 1.0 / dt),
                  vol * (prev[R] / dt - c[3, 1] * eta - c[3, 2] * iota - c[3, 3] * prev[R]) + src[R],
                  prev[R], opts.rtol, opts.maxiter)
        T[k + 1] = xi, eta, iota, rho
    return T


def tracking_weights(traj: Trajectory) -> np.ndarray:
    """Time weights of the tracking term at levels 0..K (trapezoid rule times dt)."""
    return traj.timegrid.trapezoid_weights * traj.dt


def solve_adjoint(traj: Trajectory, coeffs: LinearizedCoefficients, target: np.ndarray) -> np.ndarray:
    """Discrete adjoint fields ``(p, q, w, z)`` per level, shape ``(K+1, 4, n_cells)``.

    Level k holds the multiplier of step k -> k+1 divided by ``dt``; level K
    is zero. The sources are ``e`` and ``i`` restricted to ``target``, with
    the trapezoid weights of the tracking term.
    """
    _require_fixed(traj)
    model = traj.model
    domain = model.domain
    p = model.params
    dt = traj.dt
    vol = domain.cell_volume
    opts = model.solver
    X = traj.states
    K = traj.timegrid.steps
    ops = _StepOperators(domain, traj.kappa)
    chi = np.asarray(target, dtype=float)
    w = traj.timegrid.trapezoid_weights

    Z = np.zeros((K + 1, 4, domain.n_cells))
    for k in range(K - 1, -1, -1):
        # right side: tracking source at level k+1 plus F_{k+1}^T applied to level k+1
        b = np.zeros((4, domain.n_cells))
        b[E] = w[k + 1] * vol * chi * X[k + 1, E]
        b[I] = w[k + 1] * vol * chi * X[k + 1, I]
        if k + 1 < K:
            nxt = Z[k + 1]
            c = coeffs.matrix[k + 1]
            P = coeffs.incidence[k + 1]
            F = np.zeros((4, 4, domain.n_cells))
            F[0] = [1.0 / dt - (c[0, 0] - P), -c[0, 1], -c[0, 2], -c[0, 3]]
            F[1] = [-(c[1, 0] + P), 1.0 / dt - (c[1, 1] - p.sigma - p.phi_e), -c[1, 2], -c[1, 3]]
            F[2, 2] = 1.0 / dt
            F[3, 3] = 1.0 / dt - c[3, 3]
            b += vol * np.einsum("rcn,rn->cn", F, nxt)
        c = coeffs.matrix[k]
        P = coeffs.incidence[k]
        z = pcg(_system(ops.stiffness[R], vol, 1.0 / dt), b[R], None, opts.rtol, opts.maxiter)
        wi = pcg(_system(ops.stiffness[I], vol, 1.0 / dt + c[2, 2]), b[I] - vol * c[3, 2] * z,
                 None, opts.rtol, opts.maxiter)
        q = pcg(_system(ops.stiffness[E], vol, 1.0 / dt + p.sigma + p.phi_e),
                b[E] - vol * c[2, 1] * wi - vol * c[3, 1] * z, None, opts.rtol, opts.maxiter)
        ps = pcg(_system(ops.stiffness[S], vol, 1.0 / dt + P), b[S] + vol * P * q, None, opts.rtol, opts.maxiter)
        Z[k] = ps, q, wi, z
    return Z


def gradient_pairings(traj: Trajectory, adjoint: np.ndarray, partition: SubdomainPartition) -> np.ndarray:
    """Region-wise discrete ``int_{Q_j} grad x . grad p`` for each compartment, shape ``(4, m)``.

    Face-based: ``sum_k dt sum_f (dT_f/du_j) (jump of x^{k+1}) (jump of p^k)``,
    i.e. the derivative of the diffusion bilinear form w.r.t. ``u_j``.
    """
    _require_fixed(traj)
    domain = traj.model.domain
    ops = _StepOperators(domain, traj.kappa)
    m = partition.n_regions
    out = np.zeros((4, m))
    for x in range(4):
        dx = face_differences(domain, traj.states[1:, x])
        dp = face_differences(domain, adjoint[:-1, x])
        per_face = traj.dt * np.sum(dx * dp, axis=0)
        out[x] = ops.region_weights(x, partition.labels, m) @ per_face
    return out


def tracking_derivative(traj: Trajectory, tangent: np.ndarray, target: np.ndarray) -> float:
    """Directional derivative of ``1/2 int_{Q_C} (e^2 + i^2)`` given a tangent trajectory."""
    vol = traj.model.domain.cell_volume
    chi = np.asarray(target, dtype=float)
    w = tracking_weights(traj)
    X = traj.states
    per_level = np.sum(chi * (X[:, E] * tangent[:, E] + X[:, I] * tangent[:, I]), axis=1) * vol
    return float(w @ per_level)


def duality_gap(traj: Trajectory, coeffs: LinearizedCoefficients, direction: np.ndarray,
                partition: SubdomainPartition, adjoint: np.ndarray | None = None,
                tangent: np.ndarray | None = None) -> float:
    """Relative mismatch between the tracking derivative via tangent and via adjoint.

    Tangent side: ``sum_k w_k dt int_{Omega_C} (e eta + i iota)``. Adjoint side:
    ``-sum_species sum_j delta u_j int_{Q_j} grad x . grad p``.
    """
    if adjoint is None:
        adjoint = solve_adjoint(traj, coeffs, partition.target)
    if tangent is None:
        tangent = solve_tangent(traj, coeffs, direction, partition)
    lhs = tracking_derivative(traj, tangent, partition.target)
    rhs = -float(np.sum(np.asarray(direction) * gradient_pairings(traj, adjoint, partition)))
    scale = max(abs(lhs), abs(rhs))
    return 0.0 if scale == 0.0 else abs(lhs - rhs) / scale
