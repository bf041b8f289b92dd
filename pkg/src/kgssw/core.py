"""Physical constants, the periodic grid and shared numerical tolerances.

All quantities are in Hartree atomic units unless a docstring says
otherwise.  With the defaults ``hbar = m = 1`` and ``c = 137.036`` the rest
energy is ``m c**2 ~ 1.878e4`` and the Compton length is ``1/c``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class PhysicalConstants:
    """Constants of the scalar particle (charge ``q``, mass ``m``)."""

    hbar: float = 1.0
    m: float = 1.0
    c: float = 137.036
    q: float = -1.0

    def __post_init__(self):
        for name in ("hbar", "m", "c"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        if not np.isfinite(self.q) or self.q == 0:
            raise ValueError(f"q must be finite and nonzero, got {self.q!r}")

    @property
    def lambda_C(self) -> float:
        """Reduced Compton length hbar/(m c)."""
        return self.hbar / (self.m * self.c)

    @property
    def rest_energy(self) -> float:
        return self.m * self.c**2

    @property
    def time_unit(self) -> float:
        """hbar/(m c^2), the natural time scale of the problem."""
        return self.hbar / self.rest_energy

    def free_energy(self, p):
        """Relativistic dispersion sqrt(p^2 c^2 + m^2 c^4)."""
        p = np.asarray(p, dtype=float)
        return np.sqrt((p * self.c) ** 2 + self.rest_energy**2)


@dataclass(frozen=True)
class Grid:
    """Uniform periodic lattice ``x_i = -L/2 + i L/N``.

    The momentum lattice ``p_n = 2 pi hbar n / L`` with ``n`` in
    ``[-N/2, N/2)`` is the exact discrete Fourier conjugate of ``x``.
    ``momenta`` is sorted ascending; ``fft_momenta`` follows numpy's FFT
    ordering and is what the transforms below use.
    """

    N: int
    L: float
    hbar: float = 1.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 8 or self.N % 2:
            raise ValueError(f"grid size must be an even integer >= 8, got {self.N!r}")
        if not np.isfinite(self.L) or self.L <= 0:
            raise ValueError(f"box length must be positive, got {self.L!r}")

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def dp(self) -> float:
        return 2 * np.pi * self.hbar / self.L

    @cached_property
    def x(self) -> np.ndarray:
        x = -self.L / 2 + np.arange(self.N) * self.dx
        x.flags.writeable = False
        return x

    @cached_property
    def momenta(self) -> np.ndarray:
        p = self.dp * np.arange(-self.N // 2, self.N // 2)
        p.flags.writeable = False
        return p

    @cached_property
    def fft_momenta(self) -> np.ndarray:
        p = 2 * np.pi * self.hbar * np.fft.fftfreq(self.N, d=self.dx)
        p.flags.writeable = False
        return p

    def to_momentum(self, f, axis=0):
        """Unitary DFT, coefficients ordered like ``momenta`` (ascending)."""
        g = np.fft.fft(f, axis=axis, norm="ortho")
        return np.fft.fftshift(g, axes=axis)

    def to_position(self, g, axis=0):
        """Inverse of :meth:`to_momentum`."""
        return np.fft.ifft(np.fft.ifftshift(g, axes=axis), axis=axis, norm="ortho")

    def same_as(self, other: "Grid") -> bool:
        return self.N == other.N and self.L == other.L and self.hbar == other.hbar


def make_grid(N: int, L: float, consts: PhysicalConstants | None = None) -> Grid:
    """Build the periodic grid of ``N`` points on a box of length ``L``."""
    hbar = consts.hbar if consts is not None else 1.0
    return Grid(N=N, L=L, hbar=hbar)


@dataclass(frozen=True)
class Tolerances:
    """Numerical thresholds.

    ``im_eps`` and ``pair_eps`` are given in units of the rest energy
    m c^2; ``biorth_eps`` is absolute.  ``loc_threshold`` applies to the
    normalized localization score of :func:`kgssw.spectral.localization`
    (0 for a uniformly spread state, 1 for a state entirely inside the
    interaction window).
    """

    im_eps: float = 1e-8
    pair_eps: float = 1e-8
    biorth_eps: float = 1e-10
    loc_threshold: float = 0.4

    def __post_init__(self):
        for name in ("im_eps", "pair_eps", "biorth_eps", "loc_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"tolerance {name} must be strictly positive")
