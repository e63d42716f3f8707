import numpy as np
import pytest

from seirdiff.errors import UsageError
from seirdiff.forward import simulate
from seirdiff.model import ControlVector, MobilityLaw, NonlinearDiffusion, TransmissionRate
from seirdiff.sensitivity import (
    assemble_coeffs, duality_gap, gradient_pairings, reaction_jacobian, reaction_terms, solve_adjoint, solve_tangent,
)
from seirdiff.verify import tangent_fd_errors

from conftest import PARAMS, make_1d
from oracles import dense_transpose_system


def test_coefficient_identities(small_problem):
    model, part, u = small_problem
    c = assemble_coeffs(simulate(model, u, part))
    g = np.array([PARAMS.gamma(t) for t in model.timegrid.times[1:]])[:, None]
    co = c.coefficient
    assert np.array_equal(co("A", 2), -co("A", 1))
    assert np.array_equal(co("C", 2), -co("C", 1))
    assert np.array_equal(co("B", 2), -co("B", 1) + PARAMS.sigma + PARAMS.phi_e)
    assert np.array_equal(co("D", 2), -co("D", 1) - g)
    assert np.all(co("A", 3) == 0) and np.all(co("D", 3) == 0) and np.all(co("A", 4) == 0)
    assert np.all(co("B", 3) == -PARAMS.sigma) and np.all(co("C", 3) == PARAMS.phi_r)
    assert np.all(co("B", 4) == -PARAMS.phi_e) and np.all(co("C", 4) == -PARAMS.phi_r)
    assert np.array_equal(co("D", 4), np.broadcast_to(g, co("D", 4).shape))


def test_constant_beta_b1(small_problem):
    _, part, u = small_problem
    model, _ = make_1d(rate=TransmissionRate("constant", 0.6, 0.4))
    traj = simulate(model, u, part)
    c = assemble_coeffs(traj)
    np.testing.assert_array_equal(c.coefficient("B", 1), 0.4 * traj.states[1:, 0])


@pytest.mark.parametrize("form", ["saturating", "logistic"])
def test_reaction_jacobian_matches_fd(form, rng):
    # derived oracle: centered differences of the pointwise reaction map, 4 cells
    model, _ = make_1d(cells=4, form=form)
    state = rng.uniform(0.05, 1.0, (4, 4))
    d = rng.normal(size=(4, 4))
    J = reaction_jacobian(model, 0.3, state)
    lin = np.einsum("rcn,cn->rn", J, d)
    h = 1e-5
    fd = (reaction_terms(model, 0.3, state + h * d) - reaction_terms(model, 0.3, state - h * d)) / (2 * h)
    np.testing.assert_allclose(lin, fd, rtol=1e-6, atol=1e-9 * np.abs(fd).max())


def test_literal_b2_would_fail_fd(rng):
    # the typeset B2 = -A2 + sigma + phi_e differs from the exact linearization
    model, _ = make_1d(cells=4)
    state = rng.uniform(0.05, 1.0, (4, 4))
    J = reaction_jacobian(model, 0.0, state)
    literal = J[0, 0] + PARAMS.sigma + PARAMS.phi_e
    assert np.max(np.abs(literal - J[1, 1])) > 1e-3


def test_tangent_zero_and_linear(small_problem, rng):
    model, part, u = small_problem
    traj = simulate(model, u, part)
    c = assemble_coeffs(traj)
    assert np.all(solve_tangent(traj, c, np.zeros((4, 2)), part) == 0.0)
    d1, d2 = rng.normal(size=(2, 4, 2))
    t1 = solve_tangent(traj, c, d1, part)
    t2 = solve_tangent(traj, c, d2, part)
    assert np.all(t1[0] == 0.0)
    scale = np.abs(t1).max() + np.abs(t2).max()
    np.testing.assert_allclose(solve_tangent(traj, c, 2 * d1, part), 2 * t1, atol=1e-12 * scale)
    np.testing.assert_allclose(solve_tangent(traj, c, d1 + d2, part), t1 + t2, atol=1e-12 * scale)


def test_tangent_matches_central_differences(small_problem, rng):
    model, part, u = small_problem
    e3, e4 = tangent_fd_errors(model, u, part, rng.normal(size=(4, 2)))
    assert 50 <= e3 / e4 <= 200


def test_adjoint_empty_target_and_terminal(small_problem):
    model, part, u = small_problem
    traj = simulate(model, u, part)
    c = assemble_coeffs(traj)
    assert np.all(solve_adjoint(traj, c, np.zeros(8, bool)) == 0.0)
    adj = solve_adjoint(traj, c, part.target)
    assert np.all(adj[-1] == 0.0) and np.abs(adj[:-1]).max() > 0


def test_duality_gap_examples(small_problem, rng):
    model, part, u = small_problem
    traj = simulate(model, u, part)
    c = assemble_coeffs(traj)
    assert duality_gap(traj, c, np.zeros((4, 2)), part) == 0.0
    d = rng.normal(size=(4, 2))
    gap = duality_gap(traj, c, d, part)
    assert gap <= 1e-10
    assert duality_gap(traj, c, 2 * d, part) <= 1e-10


def test_nonlinear_trajectory_rejected(small_problem):
    model, _, _ = small_problem
    law = MobilityLaw("constant", 0.1)
    traj = simulate(model, NonlinearDiffusion((law,) * 4))
    with pytest.raises(UsageError):
        assemble_coeffs(traj)


def test_dense_transpose_oracle(rng):
    """4 cells, 5 steps: adjoint fields and gradient against a dense transposed solve."""
    model, part = make_1d(cells=4, steps=5, form="logistic", target=(0.5, 1.0))
    u = ControlVector(rng.uniform(0.1, 0.5, (4, 2)), 0.05, 0.5)
    traj = simulate(model, u, part)
    c = assemble_coeffs(traj)
    adjoint = solve_adjoint(traj, c, part.target)

    big, dGdu, dJdx = dense_transpose_system(model, part, u, traj)
    K, N, dt = 5, 4, traj.dt
    lam = np.linalg.solve(big.T, dJdx.ravel())
    np.testing.assert_allclose(adjoint[:-1], lam.reshape(K, 4, N) / dt, rtol=1e-10, atol=1e-12 * np.abs(lam).max() / dt)
    grad_dense = -(lam @ dGdu).reshape(4, 2)
    grad_adj = -gradient_pairings(traj, adjoint, part)
    np.testing.assert_allclose(grad_adj, grad_dense, rtol=1e-9, atol=1e-12 * np.abs(grad_dense).max())
    assert duality_gap(traj, c, rng.normal(size=(4, 2)), part, adjoint=adjoint) <= 1e-9
