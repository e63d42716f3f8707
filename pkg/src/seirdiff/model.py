"""Model data: rate constants, transmission and mobility laws, initial data, controls."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .grid import SubdomainPartition

SPECIES = ("s", "e", "i", "r")
S, E, I, R = range(4)


@dataclass(frozen=True)
class GammaTable:
    """Piecewise-constant, left-continuous loss-of-immunity rate.

    ``values[j]`` holds on ``(breakpoints[j-1], breakpoints[j]]``; the first
    value extends to ``-inf`` and the last to ``+inf``.
    """

    values: tuple[float, ...]
    breakpoints: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "breakpoints", tuple(float(t) for t in self.breakpoints))
        if len(self.values) != len(self.breakpoints) + 1:
            raise ConfigurationError("gamma table needs exactly one more value than breakpoints")
        if any(b >= c for b, c in zip(self.breakpoints, self.breakpoints[1:])):
            raise ConfigurationError("gamma breakpoints must be strictly increasing")
        if any(v < 0.0 or not np.isfinite(v) for v in self.values):
            raise ConfigurationError("gamma must be nonnegative")

    @classmethod
    def constant(cls, value: float) -> "GammaTable":
        return cls((value,))

    def __call__(self, t: float) -> float:
        return self.values[bisect.bisect_left(self.breakpoints, t)]

    @property
    def bound(self) -> float:
        return max(self.values)


@dataclass(frozen=True)
class Parameters:
    sigma: float
    phi_e: float
    phi_r: float
    gamma: GammaTable = field(default_factory=lambda: GammaTable.constant(0.0))

    def __post_init__(self):
        for name in ("sigma", "phi_e", "phi_r"):
            v = getattr(self, name)
            if not (v > 0.0 and np.isfinite(v)):
                raise ConfigurationError(f"{name} must be a positive constant")
        if not isinstance(self.gamma, GammaTable):
            object.__setattr__(self, "gamma", GammaTable.constant(self.gamma))


BETA_FORMS = ("constant", "saturating", "logistic")


@dataclass(frozen=True, eq=False)
class TransmissionRate:
    """Density-dependent incidence coefficients ``beta_i(x, t, n)``, ``beta_e(x, t, n)``.

    Forms, with ``b0`` the base rate and ``m(x)`` the spatial multiplier:

    - ``constant``:   ``b0 m``
    - ``saturating``: ``b0 m / (1 + |n| / n_sat)``
    - ``logistic``:   ``b0 m / (1 + exp((n - n_crit) / width))``

    All forms are bounded by ``b0 max(m)`` and globally Lipschitz in ``n``.
    """

    form: str
    beta_i0: float
    beta_e0: float
    n_sat: float = 1.0
    n_crit: float = 1.0
    width: float = 0.1
    multiplier: np.ndarray | None = None

    def __post_init__(self):
        if self.form not in BETA_FORMS:
            raise ConfigurationError(f"unknown transmission form {self.form!r}; expected one of {BETA_FORMS}")
        if self.beta_i0 < 0.0 or self.beta_e0 < 0.0:
            raise ConfigurationError("base transmission rates must be nonnegative")
        if self.form == "saturating" and not self.n_sat > 0.0:
            raise ConfigurationError("n_sat must be positive")
        if self.form == "logistic" and not self.width > 0.0:
            raise ConfigurationError("logistic width must be positive")
        if self.multiplier is not None:
            m = np.asarray(self.multiplier, dtype=float)
            if np.any(m < 0.0) or np.any(m > 1.0):
                raise ConfigurationError("transmission multiplier must lie in [0, 1]")
            object.__setattr__(self, "multiplier", m)

    def _shape(self, n: np.ndarray) -> np.ndarray:
        if self.form == "constant":
            return np.ones_like(n)
        if self.form == "saturating":
            return 1.0 / (1.0 + np.abs(n) / self.n_sat)
        z = (n - self.n_crit) / self.width
        # 1/(1+e^z) written to avoid overflow for large |z|
        return 0.5 * (1.0 - np.tanh(0.5 * z))

    def _shape_prime(self, n: np.ndarray) -> np.ndarray:
        if self.form == "constant":
            return np.zeros_like(n)
        if self.form == "saturating":
            sign = np.where(n >= 0.0, 1.0, -1.0)
            return -sign / (self.n_sat * (1.0 + np.abs(n) / self.n_sat) ** 2)
        f = self._shape(n)
        return -f * (1.0 - f) / self.width

    def _scale(self) -> np.ndarray | float:
        return 1.0 if self.multiplier is None else self.multiplier

    def evaluate(self, t: float, n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = np.asarray(n, dtype=float)
        f = self._shape(n) * self._scale()
        return self.beta_i0 * f, self.beta_e0 * f

    def derivative(self, t: float, n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = np.asarray(n, dtype=float)
        df = self._shape_prime(n) * self._scale()
        return self.beta_i0 * df, self.beta_e0 * df

    @property
    def bound(self) -> float:
        m = 1.0 if self.multiplier is None else float(np.max(self.multiplier, initial=0.0))
        return max(self.beta_i0, self.beta_e0) * m

    @property
    def lipschitz(self) -> float:
        if self.form == "constant":
            return 0.0
        if self.form == "saturating":
            return self.bound / self.n_sat
        return self.bound / (4.0 * self.width)


def eval_beta(rate: TransmissionRate, t: float, n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return rate.evaluate(t, n)


def eval_beta_prime(rate: TransmissionRate, t: float, n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return rate.derivative(t, n)


KAPPA_FORMS = ("constant", "rational")


@dataclass(frozen=True)
class MobilityLaw:
    """Population-dependent diffusion coefficient for one compartment.

    ``constant`` returns ``kappa_min``; ``rational`` blends from ``kappa_min``
    at ``n = 0`` towards ``kappa_max`` as ``n^2 / (n^2 + n_ref^2)``.
    """

    form: str
    kappa_min: float
    kappa_max: float | None = None
    n_ref: float = 1.0

    def __post_init__(self):
        if self.form not in KAPPA_FORMS:
            raise ConfigurationError(f"unknown diffusion law {self.form!r}")
        if self.kappa_max is None:
            object.__setattr__(self, "kappa_max", self.kappa_min)
        if not (0.0 < self.kappa_min <= self.kappa_max):
            raise ConfigurationError("diffusion law needs 0 < kappa_min <= kappa_max")
        if self.form == "rational" and not self.n_ref > 0.0:
            raise ConfigurationError("n_ref must be positive")

    def __call__(self, n: np.ndarray) -> np.ndarray:
        n = np.asarray(n, dtype=float)
        if self.form == "constant":
            return np.full_like(n, self.kappa_min)
        w = n**2 / (n**2 + self.n_ref**2)
        return self.kappa_min + (self.kappa_max - self.kappa_min) * w


@dataclass(frozen=True)
class NonlinearDiffusion:
    laws: tuple[MobilityLaw, MobilityLaw, MobilityLaw, MobilityLaw]

    def __post_init__(self):
        if len(self.laws) != 4:
            raise ConfigurationError("need one diffusion law per compartment")

    @property
    def kappa_lower(self) -> float:
        return min(law.kappa_min for law in self.laws)

    @property
    def kappa_upper(self) -> float:
        return max(law.kappa_max for law in self.laws)

    def evaluate(self, n: np.ndarray) -> np.ndarray:
        return np.stack([law(n) for law in self.laws])


def validate_initial(fields: np.ndarray) -> np.ndarray:
    """Check an initial state of shape ``(4, n_cells)``."""
    fields = np.array(fields, dtype=float)
    if fields.ndim != 2 or fields.shape[0] != 4:
        raise ConfigurationError("initial data must have shape (4, n_cells)")
    if not np.all(np.isfinite(fields)):
        raise ConfigurationError("initial data must be finite")
    if np.any(fields < 0.0):
        k = int(np.argmin(fields.min(axis=1)))
        raise ConfigurationError(f"initial {SPECIES[k]} must be nonnegative")
    return fields


@dataclass(frozen=True)
class StateFields:
    data: np.ndarray

    s = property(lambda self: self.data[S])
    e = property(lambda self: self.data[E])
    i = property(lambda self: self.data[I])
    r = property(lambda self: self.data[R])

    @property
    def n(self) -> np.ndarray:
        return self.data.sum(axis=0)


@dataclass(eq=False)
class ControlVector:
    """Region-wise diffusion coefficients, shape ``(4, m)`` in order s, e, i, r.

    ``lower``/``upper`` are the admissible intervals. Values are not clamped
    on construction; use :meth:`is_admissible` or ``control.project``.
    """

    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float)
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), self.values.shape).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), self.values.shape).copy()
        if self.values.ndim != 2 or self.values.shape[0] != 4:
            raise ConfigurationError("control values must have shape (4, m)")
        bad = np.argwhere(self.lower > self.upper)
        if bad.size:
            k, j = bad[0]
            raise ConfigurationError(f"empty control interval for u^{{{SPECIES[k]},{j + 1}}}")

    @property
    def n_regions(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray) -> "ControlVector":
        return ControlVector(np.reshape(values, self.values.shape), self.lower, self.upper)

    def is_admissible(self) -> bool:
        return bool(np.all(self.values >= self.lower) and np.all(self.values <= self.upper))

    def check_kappa_bounds(self, kappa_lower: float, kappa_upper: float) -> None:
        for k, j in np.argwhere(self.lower < kappa_lower):
            raise ConfigurationError(f"u_min^{{{SPECIES[k]},{j + 1}}} is below kappa_lower bound")
        for k, j in np.argwhere(self.upper > kappa_upper):
            raise ConfigurationError(f"u_max^{{{SPECIES[k]},{j + 1}}} exceeds kappa_star bound")

    def midpoint(self) -> "ControlVector":
        return self.with_values(0.5 * (self.lower + self.upper))

    def random(self, rng: np.random.Generator) -> "ControlVector":
        return self.with_values(rng.uniform(self.lower, self.upper))


def expand_controls(values: np.ndarray | ControlVector, partition: SubdomainPartition) -> np.ndarray:
    """Per-cell diffusion fields, shape ``(4, n_cells)``, from region values."""
    if isinstance(values, ControlVector):
        values = values.values
    values = np.asarray(values, dtype=float)
    if values.shape != (4, partition.n_regions):
        raise ConfigurationError(
            f"control has {values.shape[-1]} regions but the partition has {partition.n_regions}"
        )
    return values[:, partition.labels]
