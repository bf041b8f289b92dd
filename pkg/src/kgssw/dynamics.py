"""Free mode basis, propagation and the created-particle number.

The vacuum is defined by the free FV modes on the periodic grid.  All
negative-energy modes are evolved under the full Hamiltonian and projected
on the positive-energy modes with the sigma_3 pseudo scalar product; the
squared Frobenius norm of that overlap matrix is N(t).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .core import Grid, PhysicalConstants
from .hamiltonian import FVHamiltonian, metric_diagonal
from .spectral import BiorthogonalSpectrum, SpectrumError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FreeModeBasis:
    """Plane-wave FV modes with pseudo-norm +1 (``plus``) and -1 (``minus``).

    Columns follow ``grid.momenta`` (ascending).  ``spinor_plus[:, n]`` is the
    two-component amplitude of the positive mode at momentum ``p_n``.
    """

    grid: Grid
    consts: PhysicalConstants
    energies: np.ndarray
    spinor_plus: np.ndarray
    spinor_minus: np.ndarray
    plus: np.ndarray = field(repr=False)
    minus: np.ndarray = field(repr=False)

    @property
    def momenta(self):
        return self.grid.momenta

    def project_plus(self, states) -> np.ndarray:
        """``<phi_p^+ | states>_eta`` for every lattice momentum (rows)."""
        eta = metric_diagonal(self.grid.N)
        return (self.plus.conj().T * eta) @ states * self.grid.dx


def build_free_basis(grid: Grid, consts: PhysicalConstants | None = None) -> FreeModeBasis:
    consts = consts or PhysicalConstants()
    p = grid.momenta
    mc2 = consts.rest_energy
    E = consts.free_energy(p)
    norm = 2.0 * np.sqrt(mc2 * E)
    # eigenvectors of [[p^2/2m + mc^2, p^2/2m], [-p^2/2m, -p^2/2m - mc^2]]
    up = np.stack([mc2 + E, mc2 - E]) / norm
    um = np.stack([mc2 - E, mc2 + E]) / norm
    waves = np.exp(1j * np.outer(grid.x, p) / consts.hbar) / np.sqrt(grid.L)
    plus = np.empty((2 * grid.N, grid.N), dtype=complex)
    minus = np.empty_like(plus)
    plus[0::2], plus[1::2] = waves * up[0], waves * up[1]
    minus[0::2], minus[1::2] = waves * um[0], waves * um[1]
    return FreeModeBasis(grid, consts, E, up, um, plus, minus)


def overlap_matrix(basis: FreeModeBasis, evolved) -> np.ndarray:
    """``c_{p p'}(t) = <phi_p^+ | phi_{p'}^-(t)>_eta``."""
    evolved = np.asarray(evolved)
    if evolved.shape[0] != 2 * basis.grid.N:
        raise ValueError("evolved modes do not live on the basis grid")
    return basis.project_plus(evolved)


def particle_number(basis: FreeModeBasis, evolved_minus) -> float:
    """Total created-particle number from the evolved negative modes."""
    C = overlap_matrix(basis, evolved_minus)
    return float(np.vdot(C, C).real)


def particle_density(basis: FreeModeBasis, evolved_minus) -> np.ndarray:
    """Created-particle density; its grid quadrature equals ``particle_number``.

    Each positive-mode projection ``v = sum_p c_{pp'} phi_p^+`` contributes
    ``v^dagger sigma_3 v``.
    """
    C = overlap_matrix(basis, evolved_minus)
    Y = basis.plus @ C
    return (np.abs(Y[0::2]) ** 2 - np.abs(Y[1::2]) ** 2).sum(axis=1)


# --- propagation --------------------------------------------------------------


def propagate_static(spec: BiorthogonalSpectrum, states, t: float, hbar: float = 1.0) -> np.ndarray:
    """``R exp(-i Lambda t / hbar) L`` applied to ``states``."""
    if spec.biorthogonality_defect() > spec.tolerances.biorth_eps:
        raise SpectrumError("spectrum is incomplete (left @ right != I)")
    phase = np.exp(-1j * spec.energies * t / hbar)
    states = np.asarray(states)
    coeff = spec.left @ states
    coeff = phase * coeff if coeff.ndim == 1 else phase[:, None] * coeff
    return spec.right @ coeff


def _as_matrix(H):
    return H.matrix if isinstance(H, FVHamiltonian) else np.asarray(H)


def spectral_radius_bound(H) -> float:
    """Cheap upper estimate of ``max |E|``: free band top plus largest potential."""
    if isinstance(H, FVHamiltonian):
        p_max = np.max(np.abs(H.grid.momenta))
        return float(H.consts.free_energy(p_max) + np.max(np.abs(H.potential)))
    return float(np.max(np.abs(np.linalg.eigvals(_as_matrix(H)))))


class ImplicitMidpointStepper:
    """Crank-Nicolson steps ``(1 + i H dt/2hbar) psi' = (1 - i H dt/2hbar) psi``.

    ``hamiltonian_at(t)`` is evaluated at the step midpoint.  The LU factors
    are reused while the provider keeps returning the same object.
    """

    def __init__(self, hamiltonian_at, dt: float, hbar: float = 1.0):
        self.hamiltonian_at = hamiltonian_at
        self.dt = float(dt)
        self.hbar = hbar
        self._H = None
        self._lu = None
        self._warned = False

    def _factor(self, H):
        M = _as_matrix(H)
        if not self._warned:
            ratio = self.dt * spectral_radius_bound(H) / self.hbar
            if ratio > 0.5:
                log.warning("dt*|E|max/hbar = %.3g > 0.5: high-energy modes are poorly resolved", ratio)
            self._warned = True
        A = np.eye(M.shape[0], dtype=complex) + (0.5j * self.dt / self.hbar) * M
        try:
            self._lu = sla.lu_factor(A, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise RuntimeError(f"implicit midpoint linear solve failed: {exc}") from exc
        self._H = H
        self._M = M

    def step(self, state, t: float) -> np.ndarray:
        H = self.hamiltonian_at(t + 0.5 * self.dt)
        if H is not self._H:
            self._factor(H)
        rhs = state - (0.5j * self.dt / self.hbar) * (self._M @ state)
        return sla.lu_solve(self._lu, rhs)


def step_time_dependent(hamiltonian_at, state, t: float, dt: float, hbar: float = 1.0) -> np.ndarray:
    """One implicit-midpoint step from ``t`` to ``t + dt``."""
    return ImplicitMidpointStepper(hamiltonian_at, dt, hbar).step(state, t)


# --- particle number records -----------------------------------------------------


@dataclass(eq=False)
class EvolutionRecord:
    times: np.ndarray
    log_number: np.ndarray
    density_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    densities: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    growth_rate: float | None = None
    frequency: float | None = None
    extra: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def number(self) -> np.ndarray:
        return np.exp(self.log_number)


class StaticPairCreation:
    """N(t) for a time-independent Hamiltonian through its eigenbasis.

    With ``A = <phi^+|psi_i>`` and ``B = L P^-`` one has
    ``N(t) = d^dagger W d``, ``W = (A^dagger A) o conj(B B^dagger)``,
    ``d_i = exp(-i E_i t/hbar)``, so each time sample costs one matrix-vector
    product.  The largest growth factor is pulled out to keep the evaluation
    finite in logarithmic form.
    """

    def __init__(self, spec: BiorthogonalSpectrum, basis: FreeModeBasis):
        if not spec.hamiltonian.grid.same_as(basis.grid):
            raise ValueError("spectrum and basis use different grids")
        self.spec = spec
        self.basis = basis
        self.hbar = basis.consts.hbar
        self.A = basis.project_plus(spec.right)
        self.B = spec.left @ basis.minus
        self.W = (self.A.conj().T @ self.A) * (self.B @ self.B.conj().T).conj()
        self.gamma = max(float(np.max(spec.energies.imag)), 0.0) / self.hbar

    def _reduced_phases(self, times):
        t = np.atleast_1d(np.asarray(times, dtype=float))
        E = self.spec.energies
        return np.exp(-1j * np.outer(E, t) / self.hbar - self.gamma * t[None, :]), t

    def log_number(self, times) -> np.ndarray:
        D, t = self._reduced_phases(times)
        val = np.einsum("it,it->t", D.conj(), self.W @ D).real
        with np.errstate(divide="ignore"):
            return np.log(np.maximum(val, 0.0)) + 2 * self.gamma * t

    def number(self, times) -> np.ndarray:
        return np.exp(self.log_number(times))

    def evolved_minus(self, t: float) -> np.ndarray:
        phase = np.exp(-1j * self.spec.energies * t / self.hbar)
        return self.spec.right @ (phase[:, None] * self.B)

    def number_direct(self, t: float) -> float:
        phase = np.exp(-1j * self.spec.energies * t / self.hbar)
        C = (self.A * phase[None, :]) @ self.B
        return float(np.vdot(C, C).real)

    def density(self, t: float) -> np.ndarray:
        return particle_density(self.basis, self.evolved_minus(t))


def default_t_max(spec: BiorthogonalSpectrum, consts: PhysicalConstants) -> float:
    """``min(12 / (2 |Im E|max / hbar), 2000 hbar/mc^2)``."""
    cap = 2000 * consts.time_unit
    im = float(np.max(np.abs(spec.energies.imag)))
    if im <= 0:
        return cap
    return min(12.0 / (2 * im / consts.hbar), cap)


def run_static(spec: BiorthogonalSpectrum, basis: FreeModeBasis, times,
               density_times=()) -> EvolutionRecord:
    engine = StaticPairCreation(spec, basis)
    times = np.asarray(times, dtype=float)
    logn = engine.log_number(times)
    dt_ = np.asarray(density_times, dtype=float)
    dens = np.array([engine.density(t) for t in dt_]) if dt_.size else np.empty((0, basis.grid.N))
    return EvolutionRecord(times, logn, dt_, dens)


def run_stepping(hamiltonian_at, basis: FreeModeBasis, dt: float, t_max: float,
                 sample_every: int = 1, observer=None, density_every: int = 0) -> EvolutionRecord:
    """Evolve every negative free mode with implicit-midpoint steps.

    ``observer(k, t, modes, number)`` is called after each sample; it is
    the hook the back-reaction loop uses.
    """
    consts = basis.consts
    nsteps = int(round(t_max / dt))
    stepper = ImplicitMidpointStepper(hamiltonian_at, dt, consts.hbar)
    modes = basis.minus.copy()
    times, logn, dtimes, dens = [], [], [], []
    for k in range(nsteps + 1):
        t = k * dt
        if k % sample_every == 0 or k == nsteps:
            n = particle_number(basis, modes)
            times.append(t)
            logn.append(np.log(n) if n > 0 else -np.inf)
            if density_every and k % density_every == 0:
                dtimes.append(t)
                dens.append(particle_density(basis, modes))
            if observer is not None:
                observer(k, t, modes, n)
        if k == nsteps:
            break
        modes = stepper.step(modes, t)
    dens_arr = np.array(dens) if dens else np.empty((0, basis.grid.N))
    return EvolutionRecord(np.array(times), np.array(logn), np.array(dtimes), dens_arr)


# --- analysis of N(t) ---------------------------------------------------------------


def _series(record_or_times, values=None):
    if isinstance(record_or_times, EvolutionRecord):
        return record_or_times.times, record_or_times.log_number
    t = np.asarray(record_or_times, dtype=float)
    with np.errstate(divide="ignore"):
        return t, np.log(np.asarray(values, dtype=float))


def default_window(times, log_number) -> tuple[float, float]:
    """Last half of the run, starting no earlier than where N first exceeds
    ten times its first local maximum (when it ever does)."""
    t, y = times, log_number
    start = t[0] + 0.5 * (t[-1] - t[0])
    peaks = np.flatnonzero((y[1:-1] >= y[:-2]) & (y[1:-1] > y[2:])) + 1
    if peaks.size:
        above = np.flatnonzero(y > y[peaks[0]] + np.log(10.0))
        above = above[above > peaks[0]]
        if above.size:
            start = max(start, t[above[0]])
    return start, t[-1]


def fit_growth_rate(record_or_times, values=None, window=None, full: bool = False):
    """Least-squares slope of ``ln N`` over ``window`` (see :func:`default_window`).

    Returns the rate, or ``(rate, standard error)`` with ``full=True``.
    """
    t, y = _series(record_or_times, values)
    if window is None:
        window = default_window(t, y)
    sel = (t >= window[0]) & (t <= window[1]) & np.isfinite(y)
    if sel.sum() < 10:
        raise ValueError(f"fit window {window} holds {sel.sum()} usable samples; need at least 10")
    (slope, icpt), cov = np.polyfit(t[sel], y[sel], 1, cov=True)
    return (float(slope), float(np.sqrt(cov[0, 0]))) if full else float(slope)


def oscillation_frequency(record_or_times, values=None, growth_rate: float | None = None,
                          pad: int = 16, significance: float = 8.0):
    """Angular frequency of the dominant oscillation of N(t), or ``None``.

    A positive ``growth_rate`` is divided out before the transform.  The peak
    must exceed ``significance`` times the median spectral amplitude.
    """
    t, y = _series(record_or_times, values)
    ok = np.isfinite(y)
    t, y = t[ok], y[ok]
    if t.size < 16:
        raise ValueError("record too short for a frequency estimate")
    if growth_rate and growth_rate > 0:
        y = y - growth_rate * t
    y = np.exp(y - np.max(y))
    if np.std(y) <= 1e-9 * abs(y.mean()):
        return None
    y = (y - y.mean()) * np.hanning(y.size)
    n = pad * y.size
    spec = np.abs(np.fft.rfft(y, n=n))
    freqs = 2 * np.pi * np.fft.rfftfreq(n, d=t[1] - t[0])
    # skip the DC lobe of the window
    lo = 2 * pad
    if spec.size <= lo + 2:
        return None
    k = lo + int(np.argmax(spec[lo:]))
    if spec[k] < significance * np.median(spec[lo:]):
        return None
    if 0 < k < spec.size - 1:
        a, b, c = np.log(spec[k - 1:k + 2] + 1e-300)
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom != 0 else 0.0
    else:
        shift = 0.0
    return float(freqs[k] + shift * (freqs[1] - freqs[0]))
