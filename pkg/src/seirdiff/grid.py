"""Cell-centred finite-volume grids on intervals and rectangles.

All fields are flat arrays indexed by cell, using C ordering of the
``(nx,)`` or ``(nx, ny)`` index space. The diffusion operator is stored as
the symmetric positive semi-definite stiffness matrix

    (K v)_c = sum over faces f of c of  T_f (v_c - v_nb),

so that the discrete ``div(kappa grad v)`` is ``-K v / cell_volume`` and the
discrete ``int kappa grad a . grad b`` is ``a^T K b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DomainError


@dataclass(frozen=True)
class Domain:
    extents: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        extents = tuple(float(x) for x in self.extents)
        cells = tuple(int(n) for n in self.cells)
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "cells", cells)
        if len(extents) not in (1, 2) or len(cells) != len(extents):
            raise ConfigurationError("domain must be 1D or 2D with one cell count per axis")
        if any(L <= 0.0 or not np.isfinite(L) for L in extents):
            raise ConfigurationError("domain extents must be positive")
        if any(n < 2 for n in cells):
            raise ConfigurationError("need at least 2 cells per axis")

    @property
    def dimension(self) -> int:
        return len(self.cells)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.extents, self.cells))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def measure(self) -> float:
        return float(np.prod(self.extents))

    @cached_property
    def centers(self) -> np.ndarray:
        """Cell centres, shape ``(n_cells, dimension)``."""
        axes = [(np.arange(n) + 0.5) * h for n, h in zip(self.cells, self.spacing)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def faces(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Interior faces as ``(cell_a, cell_b, area / spacing)``.

        Boundary faces carry zero flux (homogeneous Neumann) and are omitted.
        """
        idx = np.arange(self.n_cells).reshape(self.cells)
        h = self.spacing
        left, right, geom = [], [], []
        for axis in range(self.dimension):
            lo = [slice(None)] * self.dimension
            hi = [slice(None)] * self.dimension
            lo[axis] = slice(0, -1)
            hi[axis] = slice(1, None)
            a = idx[tuple(lo)].ravel()
            b = idx[tuple(hi)].ravel()
            area = self.cell_volume / h[axis]
            left.append(a)
            right.append(b)
            geom.append(np.full(a.size, area / h[axis]))
        return np.concatenate(left), np.concatenate(right), np.concatenate(geom)


@dataclass(frozen=True)
class TimeGrid:
    T: float
    steps: int

    def __post_init__(self):
        if not (self.T > 0.0 and np.isfinite(self.T)):
            raise ConfigurationError("final time T must be positive")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ConfigurationError("number of time steps must be a positive integer")

    @property
    def dt(self) -> float:
        return self.T / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.steps + 1)

    @property
    def trapezoid_weights(self) -> np.ndarray:
        """Per-level weights w_k with sum_k w_k dt = T."""
        w = np.ones(self.steps + 1)
        w[0] = w[-1] = 0.5
        return w


@dataclass(frozen=True)
class Box:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def contains(self, points: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        return np.all((points >= lo) & (points <= hi), axis=1)


@dataclass(frozen=True, eq=False)
class SubdomainPartition:
    """Region labels ``0..m-1`` per cell plus the target mask."""

    labels: np.ndarray
    n_regions: int
    measures: np.ndarray
    target: np.ndarray = field(repr=False)
    target_measure: float = 0.0

    def indicator(self, j: int) -> np.ndarray:
        return (self.labels == j).astype(float)


def build_grid(domain: Domain, regions: Sequence[Box] | None = None,
               target: Sequence[Box] | None = None) -> tuple[Domain, SubdomainPartition]:
    """Label cells by the region box containing their centre.

    ``regions=None`` means one region covering the whole domain. Every cell
    centre must lie in exactly one region box. The target mask is the union
    of the ``target`` boxes (empty if none are given).
    """
    x = domain.centers
    if regions is None:
        regions = [Box(tuple(0.0 for _ in domain.extents), domain.extents)]
    if not regions:
        raise ConfigurationError("at least one region is required")
    hits = np.stack([box.contains(x) for box in regions])
    count = hits.sum(axis=0)
    if np.any(count > 1):
        c = int(np.argmax(count > 1))
        raise ConfigurationError(f"overlapping regions at cell {c} (centre {x[c].tolist()})")
    if np.any(count == 0):
        c = int(np.argmin(count))
        raise ConfigurationError(f"cell {c} (centre {x[c].tolist()}) is not covered by any region")
    labels = np.argmax(hits, axis=0)
    m = len(regions)
    measures = np.bincount(labels, minlength=m) * domain.cell_volume
    if np.any(measures <= 0.0):
        j = int(np.argmin(measures))
        raise ConfigurationError(f"region {j + 1} contains no cell centre")
    mask = np.zeros(domain.n_cells, dtype=bool)
    for box in target or ():
        mask |= box.contains(x)
    partition = SubdomainPartition(
        labels=labels, n_regions=m, measures=measures, target=mask,
        target_measure=float(mask.sum() * domain.cell_volume),
    )
    return domain, partition


def face_transmissibility(domain: Domain, kappa: np.ndarray) -> np.ndarray:
    """Harmonic-mean face coefficient divided by the cell spacing, times face area."""
    a, b, geom = domain.faces
    ka, kb = kappa[a], kappa[b]
    return geom * 2.0 * ka * kb / (ka + kb)


def transmissibility_sensitivity(domain: Domain, kappa: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of each face transmissibility w.r.t. its two cell values."""
    a, b, geom = domain.faces
    ka, kb = kappa[a], kappa[b]
    denom = (ka + kb) ** 2
    return geom * 2.0 * kb**2 / denom, geom * 2.0 * ka**2 / denom


def stiffness(domain: Domain, trans: np.ndarray) -> sp.csr_matrix:
    a, b, _ = domain.faces
    n = domain.n_cells
    rows = np.concatenate([a, b, a, b])
    cols = np.concatenate([a, b, b, a])
    vals = np.concatenate([trans, trans, -trans, -trans])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


@dataclass(frozen=True, eq=False)
class DiffusionOperator:
    domain: Domain
    kappa: np.ndarray
    transmissibility: np.ndarray
    stiffness: sp.csr_matrix

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Discrete ``div(kappa grad v)`` per cell.

        Evaluated face by face, so a constant field gives exactly zero.
        """
        a, b, _ = self.domain.faces
        flux = self.transmissibility * (v[a] - v[b])
        out = np.zeros(self.domain.n_cells)
        np.add.at(out, a, -flux)
        np.add.at(out, b, flux)
        return out / self.domain.cell_volume

    @property
    def matrix(self) -> sp.csr_matrix:
        return (-self.stiffness / self.domain.cell_volume).tocsr()

    def energy(self, a: np.ndarray, b: np.ndarray) -> float:
        """Discrete ``int kappa grad a . grad b``."""
        return float(a @ (self.stiffness @ b))


def assemble_diffusion(domain: Domain, kappa: np.ndarray) -> DiffusionOperator:
    kappa = np.asarray(kappa, dtype=float)
    if kappa.shape != (domain.n_cells,):
        raise DomainError(f"kappa field has shape {kappa.shape}, expected ({domain.n_cells},)")
    if not np.all(kappa > 0.0) or not np.all(np.isfinite(kappa)):
        raise DomainError("diffusion coefficient must be positive and finite in every cell")
    trans = face_transmissibility(domain, kappa)
    return DiffusionOperator(domain, kappa, trans, stiffness(domain, trans))


def face_differences(domain: Domain, v: np.ndarray) -> np.ndarray:
    a, b, _ = domain.faces
    return v[..., a] - v[..., b]


def integrate(domain: Domain, field: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Midpoint quadrature over all cells, or over the cells where ``mask`` is true."""
    field = np.asarray(field, dtype=float)
    if field.shape[-1] != domain.n_cells:
        raise DomainError("field length does not match the grid")
    if mask is not None:
        field = field[..., np.asarray(mask, dtype=bool)]
    return float(field.sum() * domain.cell_volume)
