import numpy as np
import pytest

from seirdiff.forward import SEIRModel
from seirdiff.grid import Box, Domain, TimeGrid, build_grid
from seirdiff.model import ControlVector, GammaTable, Parameters, TransmissionRate

PARAMS = Parameters(sigma=0.5, phi_e=0.3, phi_r=0.4, gamma=GammaTable((0.02, 0.06), (0.5,)))


def bump_initial(domain, center, width=0.15, scale=0.2):
    x = domain.centers
    g = np.exp(-np.sum((x - np.asarray(center)) ** 2, axis=1) / width**2)
    return np.stack([1.0 - 2 * scale * g, scale * g, scale * g, 0.0 * g])


def make_1d(cells=8, steps=10, T=1.0, form="logistic", regions=2, target=(0.5, 1.0), rate=None, **kw):
    domain = Domain((1.0,), (cells,))
    edges = np.linspace(0.0, 1.0, regions + 1)
    boxes = [Box((a,), (b,)) for a, b in zip(edges[:-1], edges[1:])]
    _, part = build_grid(domain, boxes, [Box((target[0],), (target[1],))] if target else [])
    if rate is None:
        rate = TransmissionRate(form, 1.5, 0.8, n_sat=1.0, n_crit=1.2, width=0.3)
    init = kw.pop("initial", None)
    if init is None:
        init = bump_initial(domain, [0.2])
    model = SEIRModel(domain, kw.pop("params", PARAMS), rate, init, TimeGrid(T, steps), **kw)
    return model, part


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_problem():
    model, part = make_1d()
    u = ControlVector([[0.1, 0.2], [0.3, 0.15], [0.25, 0.4], [0.12, 0.08]], 0.05, 0.5)
    return model, part, u
