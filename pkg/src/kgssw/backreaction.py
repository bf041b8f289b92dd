"""Energy-balance back reaction of the created particles on the external field.

Gaussian atomic units throughout: field energy density ``(E^2 + B^2)/8 pi``
per unit transverse area.  The vector potential enters the Hamiltonian as
``p - qA``, so its Gaussian magnetic field is ``c dA_y/dx``.

Each step advances the negative modes with the current strength ``V0``,
computes ``N`` and the particle density, sets

    E_in = 2 m c^2 N + (1/8 pi) int E_ind^2 dx,
    E_ex = max(E_0 - E_in, 0),
    V0   = V0(0) sqrt(E_ex / E_0),

and uses the new ``V0`` for the following step.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .core import Grid, PhysicalConstants
from .dynamics import (EvolutionRecord, FreeModeBasis, ImplicitMidpointStepper, build_free_basis,
                       particle_density, particle_number)
from .fields import FieldConfig, SmoothBox, TabulatedPotential, ZeroPotential, ZeroVector
from .hamiltonian import assemble

log = logging.getLogger(__name__)


class BackReactionInstability(RuntimeError):
    """Energy bookkeeping oscillates step to step; ``dt`` is too large."""


def _line_integral(f, scale: float) -> float:
    # integrand decays on ``scale`` around the origin; split there for quad
    pieces = [(-np.inf, -scale), (-scale, scale), (scale, np.inf)]
    return float(sum(quad(f, a, b, limit=200, epsabs=0, epsrel=1e-12)[0] for a, b in pieces))


def initial_field_energy(fields: FieldConfig, consts: PhysicalConstants | None = None,
                         grid: Grid | None = None) -> float:
    """``E_0 = (1/8 pi) int (E^2 + c^2 B^2) dx`` of the external fields.

    Analytic profiles are integrated over the real line; a tabulated profile
    needs ``grid`` and is summed on it.
    """
    consts = consts or PhysicalConstants()
    s, a = fields.scalar, fields.vector
    total = 0.0
    if isinstance(s, TabulatedPotential):
        if grid is None:
            raise ValueError("a tabulated potential needs the grid for its field energy")
        total += float(np.sum((s.derivative(grid.x) / consts.q) ** 2) * grid.dx)
    elif not isinstance(s, ZeroPotential):
        scale = getattr(s, "l", 0.0) + getattr(s, "w", 0.0) + getattr(s, "w_E", 0.0)
        total += _line_integral(lambda x: (s.derivative(x) / consts.q) ** 2, scale)
    if not isinstance(a, ZeroVector):
        total += consts.c**2 * _line_integral(lambda x: a.derivative(x) ** 2, a.w_B)
    return total / (8 * np.pi)


def induced_field(rho, grid: Grid, consts: PhysicalConstants | None = None,
                  warn: bool = True) -> np.ndarray:
    """Solve ``dE/dx = 4 pi q rho`` with ``E(-L/2) = -E(L/2)``.

    Negative density values (the sigma_3 weighting allows small dips) are
    clipped to zero.
    """
    consts = consts or PhysicalConstants()
    rho = np.asarray(rho, dtype=float)
    peak = float(np.max(np.abs(rho))) if rho.size else 0.0
    if warn and peak > 0 and rho.min() < -1e-6 * peak:
        log.warning("particle density dips to %.3g (peak %.3g); clipped at zero", rho.min(), peak)
    rho = np.clip(rho, 0.0, None)
    enclosed = (np.cumsum(rho) - 0.5 * rho) * grid.dx
    total = rho.sum() * grid.dx
    return 4 * np.pi * consts.q * (enclosed - 0.5 * total)


def induced_energy(number: float, rho, grid: Grid, consts: PhysicalConstants | None = None,
                   warn: bool = True) -> float:
    """Rest energy of the created particles plus the energy of their field."""
    consts = consts or PhysicalConstants()
    E = induced_field(rho, grid, consts, warn)
    return 2 * consts.rest_energy * number + float(np.sum(E**2) * grid.dx) / (8 * np.pi)


@dataclass(frozen=True)
class BackReactionSettings:
    dt: float
    t_max: float
    feedback: bool = True
    record_every: int = 1
    nyquist_window: int = 24
    nyquist_amplitude: float = 1e-3


class _HamiltonianCache:
    """Assembled Hamiltonians keyed by the exact strength value."""

    def __init__(self, grid, fields, consts, scheme, size: int = 4):
        self.grid, self.fields, self.consts, self.scheme = grid, fields, consts, scheme
        self.size = size
        self._store: dict[float, object] = {}

    def __call__(self, V0: float):
        H = self._store.get(V0)
        if H is None:
            if len(self._store) >= self.size:
                self._store.pop(next(iter(self._store)))
            H = assemble(self.grid, self.fields.with_V0(V0), self.consts, self.scheme)
            self._store[V0] = H
        return H


def _alternating(values, amplitude: float) -> bool:
    d = np.diff(values)
    if d.size < 3 or np.max(np.abs(d)) < amplitude:
        return False
    return bool(np.all(d[1:] * d[:-1] < 0))


def run_backreaction(grid: Grid, fields: FieldConfig, settings: BackReactionSettings,
                     consts: PhysicalConstants | None = None, scheme: str = "spectral",
                     basis: FreeModeBasis | None = None) -> EvolutionRecord:
    """Pair creation with the strength ``V0`` fed back from the energy balance.

    With ``settings.feedback`` false the strength stays at ``V0(0)`` and the
    bookkeeping columns are still recorded.  The returned record carries
    ``V0``, ``E_in``, ``E_ex`` and ``clamped`` arrays in ``extra``.
    """
    consts = consts or PhysicalConstants()
    if not isinstance(fields.scalar, SmoothBox):
        raise ValueError("back reaction is defined for the smooth box potential")
    if settings.dt <= 0 or settings.t_max <= 0:
        raise ValueError("dt and t_max must be positive")
    basis = basis or build_free_basis(grid, consts)
    V00 = fields.V0
    E0 = initial_field_energy(fields, consts, grid)
    if E0 <= 0:
        raise ValueError("initial field energy vanishes")
    cache = _HamiltonianCache(grid, fields, consts, scheme)
    state = {"V0": V00}
    stepper = ImplicitMidpointStepper(lambda t: cache(state["V0"]), settings.dt, consts.hbar)

    nsteps = int(round(settings.t_max / settings.dt))
    cols = {k: [] for k in ("t", "logN", "V0", "E_in", "E_ex", "clamped")}
    recent: list[float] = []
    warned = False
    modes = basis.minus.copy()
    for k in range(nsteps + 1):
        t = k * settings.dt
        rho = particle_density(basis, modes)
        n = particle_number(basis, modes)
        dip = rho.min() < -1e-6 * max(rho.max(), 0.0)
        E_in = induced_energy(n, rho, grid, consts, warn=not warned)
        warned = warned or bool(dip)
        clamped = E_in > E0
        E_ex = 0.0 if clamped else E0 - E_in
        if k % settings.record_every == 0 or k == nsteps:
            cols["t"].append(t)
            cols["logN"].append(np.log(n) if n > 0 else -np.inf)
            cols["V0"].append(state["V0"])
            cols["E_in"].append(E_in)
            cols["E_ex"].append(E_ex)
            cols["clamped"].append(clamped)
        if settings.feedback:
            recent.append(E_in)
            recent = recent[-settings.nyquist_window:]
            if len(recent) == settings.nyquist_window and _alternating(
                    np.array(recent) / E0, settings.nyquist_amplitude):
                raise BackReactionInstability(
                    f"E_in alternates step to step near t = {t:.4g}; reduce dt (now {settings.dt:.4g})")
            if n > 0:
                state["V0"] = V00 * np.sqrt(E_ex / E0)
        if k == nsteps:
            break
        modes = stepper.step(modes, t)

    extra = {k: np.array(cols[k]) for k in ("V0", "E_in", "E_ex", "clamped")}
    extra["E_0"] = E0
    return EvolutionRecord(np.array(cols["t"]), np.array(cols["logN"]), extra=extra)


def mean_crossings(times, values) -> int:
    """How often ``values`` crosses its own time average."""
    v = np.asarray(values, dtype=float)
    s = np.sign(v - v.mean())
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))
