"""Scalar and vector potential profiles.

Every scalar profile returns the potential energy ``q*phi(x)`` and its
x-derivative; the vector profiles return ``A_y(x)`` and ``dA_y/dx``.  The
profiles are switched on suddenly at ``t = 0``; there is no other time
dependence outside the back-reaction loop.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .core import Grid, PhysicalConstants


def _sech2(u):
    e = np.exp(-2.0 * np.abs(u))
    return 4.0 * e / (1.0 + e) ** 2


@dataclass(frozen=True)
class ZeroPotential:
    def value(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def derivative(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class SmoothBox:
    """``V0/2 * (tanh((x + l/2)/w) - tanh((x - l/2)/w))``."""

    V0: float
    l: float
    w: float

    def __post_init__(self):
        if not (self.l > 0 and self.w > 0):
            raise ValueError("SmoothBox needs l > 0 and w > 0")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.V0 * (np.tanh((x + self.l / 2) / self.w) - np.tanh((x - self.l / 2) / self.w))

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.V0 / self.w * (_sech2((x + self.l / 2) / self.w) - _sech2((x - self.l / 2) / self.w))


@dataclass(frozen=True)
class SmoothStep:
    """``V0/2 * (tanh(x/w_E) + 1)``."""

    V0: float
    w_E: float

    def __post_init__(self):
        if not self.w_E > 0:
            raise ValueError("SmoothStep needs w_E > 0")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.V0 * (np.tanh(x / self.w_E) + 1.0)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.V0 / self.w_E * _sech2(x / self.w_E)


@dataclass(frozen=True, eq=False)
class TabulatedPotential:
    """Potential energy sampled on the points ``x`` of a periodic grid.

    Off-grid values use periodic linear interpolation; the derivative is
    the second-order central difference on the table, interpolated the
    same way.
    """

    x: np.ndarray
    values: np.ndarray
    L: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if x.shape != v.shape or x.ndim != 1 or x.size < 2:
            raise ValueError("tabulated potential needs matching 1D x and value arrays")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "values", v)

    @property
    def V0(self):
        return float(np.max(np.abs(self.values)))

    def _interp(self, table, x):
        return np.interp(np.asarray(x, dtype=float), self.x, table, period=self.L)

    def value(self, x):
        return self._interp(self.values, x)

    def derivative(self, x):
        h = self.L / self.x.size
        d = (np.roll(self.values, -1) - np.roll(self.values, 1)) / (2 * h)
        return self._interp(d, x)

    @classmethod
    def from_grid(cls, grid: Grid, values) -> "TabulatedPotential":
        return cls(np.array(grid.x), np.asarray(values, dtype=float), grid.L)


ScalarPotentialSpec = Union[ZeroPotential, SmoothBox, SmoothStep, TabulatedPotential]


@dataclass(frozen=True)
class ZeroVector:
    def value(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def derivative(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class SmoothStepY:
    """``A_y(x) = A0/2 * (tanh(x/w_B) + 1)``; the other components vanish."""

    A0: float
    w_B: float

    def __post_init__(self):
        if not self.w_B > 0:
            raise ValueError("SmoothStepY needs w_B > 0")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.A0 * (np.tanh(x / self.w_B) + 1.0)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.A0 / self.w_B * _sech2(x / self.w_B)


VectorPotentialSpec = Union[ZeroVector, SmoothStepY]


@dataclass(frozen=True)
class TransverseMomenta:
    """Conserved canonical momenta along y and z."""

    p_y: float = 0.0
    p_z: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.p_y) and np.isfinite(self.p_z)):
            raise ValueError("transverse momenta must be finite")


@dataclass(frozen=True)
class FieldConfig:
    scalar: ScalarPotentialSpec = field(default_factory=ZeroPotential)
    vector: VectorPotentialSpec = field(default_factory=ZeroVector)
    momenta: TransverseMomenta = field(default_factory=TransverseMomenta)

    def with_V0(self, V0: float) -> "FieldConfig":
        """Same shape, scalar strength replaced by ``V0``."""
        if isinstance(self.scalar, (ZeroPotential, TabulatedPotential)):
            raise ValueError(f"{type(self.scalar).__name__} has no adjustable strength V0")
        return dataclasses.replace(self, scalar=dataclasses.replace(self.scalar, V0=V0))

    @property
    def V0(self) -> float:
        return float(getattr(self.scalar, "V0", 0.0))


def eval_scalar(spec: ScalarPotentialSpec, x):
    """Potential energy ``q*phi(x)``."""
    return spec.value(x)


def eval_vector_y(spec: VectorPotentialSpec, x):
    return spec.value(x)


def eval_electric_field(spec: ScalarPotentialSpec, x, consts: PhysicalConstants):
    """Electric field ``E = -d(phi)/dx = -(1/q) d(q phi)/dx``."""
    return -spec.derivative(x) / consts.q


def eval_magnetic_field(spec: VectorPotentialSpec, x):
    """``B_z = dA_y/dx``."""
    return spec.derivative(x)


def _on_grid(profile, grid: Grid):
    # The seam x_0 = -L/2 is also +L/2 on the periodic box; a profile that
    # differs there is sampled at the mean of both one-sided values.
    values = np.array(profile.value(grid.x), dtype=float)
    if isinstance(profile, TabulatedPotential):
        return values
    right = float(profile.value(grid.L / 2))
    values[0] = 0.5 * (values[0] + right)
    return values


def sample_scalar(spec: ScalarPotentialSpec, grid: Grid) -> np.ndarray:
    """``q*phi`` on the grid points, with the periodic seam rule."""
    return _on_grid(spec, grid)


def sample_vector_y(spec: VectorPotentialSpec, grid: Grid) -> np.ndarray:
    return _on_grid(spec, grid)


def asymptotic_values(cfg: FieldConfig) -> tuple[tuple[float, float], tuple[float, float]]:
    """``((V_left, A_left), (V_right, A_right))`` far from the interaction region."""
    s, a = cfg.scalar, cfg.vector
    if isinstance(s, TabulatedPotential):
        vl, vr = float(s.values[0]), float(s.values[-1])
    else:
        vl, vr = float(s.value(-np.inf)), float(s.value(np.inf))
    return (vl, float(a.value(-np.inf))), (vr, float(a.value(np.inf)))


def interaction_halfwidth(cfg: FieldConfig) -> float:
    """Half-width of the window used by the localization measure."""
    scales = []
    s, a = cfg.scalar, cfg.vector
    if isinstance(s, SmoothBox):
        scales.append(s.l)
    if isinstance(s, SmoothStep):
        scales.append(5 * s.w_E)
    if isinstance(a, SmoothStepY):
        scales.append(a.w_B)
    if isinstance(s, TabulatedPotential):
        inside = np.abs(s.values) > 1e-3 * max(np.max(np.abs(s.values)), 1e-300)
        scales.append(float(np.max(np.abs(s.x[inside]))) if inside.any() else s.L / 8)
    if not scales:
        return np.inf
    return 4 * max(scales)


def write_tabulated(path, x, values) -> None:
    """Two whitespace-separated columns, full double precision."""
    np.savetxt(path, np.column_stack([x, values]), fmt="%.17e", header="x value")


def read_tabulated(path, grid: Grid) -> TabulatedPotential:
    data = np.loadtxt(Path(path), ndmin=2)
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns (x, value), found {data.shape[1]}")
    x, v = data[:, 0], data[:, 1]
    if x.size != grid.N or not np.allclose(x, grid.x, rtol=0, atol=1e-9 * grid.L):
        raise ValueError(f"{path}: x column does not match the configured grid")
    return TabulatedPotential(np.array(grid.x), v, grid.L)
