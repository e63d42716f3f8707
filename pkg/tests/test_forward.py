import dataclasses

import numpy as np
import pytest

from seirdiff.forward import (
    SEIRModel, check_time_step, h1_distance, mass_history, relative_drift, safe_time_step, simulate, step_forward,
)
from seirdiff.grid import Domain, TimeGrid, assemble_diffusion
from seirdiff.linalg import pcg
from seirdiff.errors import SolverError, UsageError
from seirdiff.model import ControlVector, GammaTable, MobilityLaw, NonlinearDiffusion, Parameters, TransmissionRate
from seirdiff.verify import homogeneous_model, ode_reference

from conftest import PARAMS, make_1d


def stiff(domain, value=0.1):
    return [assemble_diffusion(domain, np.full(domain.n_cells, value)).stiffness] * 4


def test_zero_is_equilibrium():
    model, _ = make_1d(initial=np.zeros((4, 8)))
    assert np.all(step_forward(model, np.zeros((4, 8)), 0.0, stiff(model.domain)) == 0.0)
    traj = simulate(model, np.full((4, 8), 0.2))
    assert np.all(traj.states == 0.0)
    assert np.all(mass_history(traj) == 0.0)


def test_decoupled_exposed_decay():
    # beta = gamma = 0, homogeneous data: scalar backward Euler for e
    params = Parameters(0.5, 0.3, 0.4, GammaTable.constant(0.0))
    model, _ = make_1d(rate=TransmissionRate("constant", 0.0, 0.0), params=params,
                       initial=np.array([[0.7], [0.2], [0.1], [0.0]]) * np.ones(8))
    new = step_forward(model, model.initial, 0.0, stiff(model.domain))
    dt = model.timegrid.dt
    np.testing.assert_allclose(new[1], 0.2 / (1 + dt * (0.5 + 0.3)), rtol=1e-12)


def test_single_step_conserves_mass(small_problem):
    model, part, u = small_problem
    from seirdiff.model import expand_controls
    kappa = expand_controls(u, part)
    st = [assemble_diffusion(model.domain, k).stiffness for k in kappa]
    new = step_forward(model, model.initial, 0.0, st)
    before, after = model.initial.sum(), new.sum()
    assert abs(after - before) <= 1e-12 * before


def test_mass_history_symmetric_in_species(small_problem):
    model, part, u = small_problem
    swapped = model.initial[[1, 0, 2, 3]]
    traj_a = simulate(model, u, part)
    traj_b = simulate(dataclasses.replace(model, initial=swapped), u, part)
    np.testing.assert_allclose(mass_history(traj_a)[0], mass_history(traj_b)[0], rtol=1e-15)
    assert relative_drift(traj_a) <= 1e-10 and relative_drift(traj_b) <= 1e-10


def test_homogeneous_stays_homogeneous():
    model, part = make_1d(cells=6, steps=20, initial=np.array([[0.8], [0.1], [0.1], [0.0]]) * np.ones(6))
    traj = simulate(model, np.full((4, 6), 0.3))
    spread = np.abs(traj.states - traj.states[:, :, :1]).max(axis=2)
    assert np.all(spread <= 1e-12 * np.abs(traj.states).max())


def test_ode_reduction():
    # derived oracle: 8th-order RK on the spatially reduced four-dimensional system
    dom = Domain((1.0, 1.0), (3, 3))
    init = np.array([[0.9], [0.05], [0.05], [0.0]]) * np.ones(9)
    model = SEIRModel(dom, PARAMS, TransmissionRate("saturating", 0.5, 0.25), init, TimeGrid(1.0, 1000))
    traj = simulate(model, np.full((4, 9), 0.1))
    ref = ode_reference(model, init[:, 0])
    assert np.max(np.abs(traj.states[-1, :, 0] - ref)) / np.max(np.abs(ref)) <= 1e-5


def test_nonnegative_and_bounded(small_problem):
    model, part, u = small_problem
    assert check_time_step(model)
    traj = simulate(model, u, part)
    assert traj.states.min() >= -1e-10
    assert not traj.metadata["negative"]
    # empirical stability: sup norm stays of the order of the data
    assert traj.states.max() <= 2 * model.initial.sum(axis=0).max()


def test_safe_time_step_warning(caplog):
    caplog.set_level("WARNING", logger="seirdiff")
    model, _ = make_1d(steps=1, T=50.0)
    assert safe_time_step(model) < model.timegrid.dt
    assert not check_time_step(model)
    assert "positivity guard" in caplog.text


def test_nonlinear_mode_conserves_mass():
    model, _ = make_1d(steps=15)
    law = MobilityLaw("rational", 0.05, 0.3, n_ref=0.8)
    nl = NonlinearDiffusion((law, law, MobilityLaw("constant", 0.02), law))
    lagged = simulate(model, nl)
    picard = simulate(model, nl, picard_iterations=20)
    assert lagged.mode == "nonlinear"
    assert relative_drift(lagged) <= 1e-10 and relative_drift(picard) <= 1e-10
    assert picard.metadata["picard_iterations"] > 0
    # lagged and converged-implicit coefficients differ by O(dt)
    assert 0 < np.max(np.abs(lagged.states - picard.states)) < 1e-2


def test_controls_need_partition(small_problem):
    model, _, u = small_problem
    with pytest.raises(UsageError):
        simulate(model, u)


def test_h1_distance_zero_for_same_trajectory(small_problem):
    model, part, u = small_problem
    traj = simulate(model, u, part)
    assert h1_distance(traj, traj) == 0.0


def test_pcg_reports_nonconvergence():
    dom = Domain((1.0,), (50,))
    A = assemble_diffusion(dom, np.ones(50)).stiffness + 1e-6 * np.eye(50)
    import scipy.sparse as sp
    with pytest.raises(SolverError) as info:
        pcg(sp.csr_matrix(A), np.random.default_rng(0).normal(size=50), rtol=1e-14, maxiter=3)
    assert info.value.diagnostics["iterations"] == 3
