"""Biorthogonal eigenanalysis of the FV Hamiltonian.

Left eigenvectors are obtained by inverting the matrix of (unit-norm) right
eigenvectors, so ``left @ right = I`` holds up to round-off whenever the
matrix is diagonalizable.  Particle and antiparticle character of a real
level is read off the sign of its pseudo-norm ``psi^dagger eta psi``.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linear_sum_assignment

from .core import Grid, PhysicalConstants, Tolerances
from .fields import FieldConfig, SmoothBox, SmoothStep, asymptotic_values, interaction_halfwidth
from .hamiltonian import FVHamiltonian, assemble, metric_diagonal

log = logging.getLogger(__name__)

FAMILIES = ("box", "step_b")
# largest accepted eigenvalue condition number |L_i| |R_i|
MAX_EIGEN_CONDITION = 1e8
CRITICAL_KINDS = ("emergence", "coalescence", "anticoalescence", "overlap")


class SpectrumError(RuntimeError):
    pass


class NonDiagonalizableError(SpectrumError):
    pass


@dataclass(frozen=True, eq=False)
class BiorthogonalSpectrum:
    """Eigenvalues sorted by (Re E, Im E) with paired right/left eigenvectors.

    ``right[:, i]`` has unit 2-norm and ``left[i] @ right[:, j] = delta_ij``.
    ``partner[i]`` is the index of the eigenvalue equal to ``conj(E_i)`` for
    complex ``E_i`` and ``-1`` for real ones.
    """

    energies: np.ndarray
    right: np.ndarray
    left: np.ndarray
    partner: np.ndarray
    eta: np.ndarray
    energy_scale: float
    tolerances: Tolerances
    biorth_defect: float
    hamiltonian: FVHamiltonian | None = field(default=None, repr=False)
    matrix: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return self.energies.size

    @property
    def is_complex(self) -> np.ndarray:
        return self.partner >= 0

    @property
    def grid(self) -> Grid:
        return self.hamiltonian.grid

    @property
    def consts(self) -> PhysicalConstants:
        return self.hamiltonian.consts

    def pairs(self) -> list[tuple[int, int]]:
        """Conjugate pairs ``(i, j)`` with ``Im E_i > 0``."""
        return [(i, int(j)) for i, j in enumerate(self.partner) if j >= 0 and self.energies[i].imag > 0]

    def pseudo_norms(self) -> np.ndarray:
        """``psi_i^dagger eta psi_i`` for the unit-norm right eigenvectors."""
        return np.einsum("ij,i,ij->j", self.right.conj(), self.eta, self.right).real

    def biorthogonality_defect(self) -> float:
        return float(np.max(np.abs(self.left @ self.right - np.eye(len(self)))))

    def conjugate_eigvec_residual(self) -> np.ndarray:
        """``||H v_i - conj(E_i) v_i|| / (||H|| ||v_i||)`` with ``v_i = eta phi_i^dagger``."""
        H = self.matrix
        V = self.eta[:, None] * self.left.conj().T
        res = H @ V - V * self.energies.conj()[None, :]
        return np.linalg.norm(res, axis=0) / (np.linalg.norm(H, 2) * np.linalg.norm(V, axis=0))


def _refine_real_clusters(M, eta, E, R, im_eps, rtol, min_pseudo_norm=1e-3):
    # A general eigensolver returns arbitrary, non eta-orthogonal mixtures of
    # nearly degenerate levels, which then dephase at round-off rate.  Real
    # levels of one Krein sign span a subspace on which the Rayleigh-Ritz
    # pencil (V^+ eta M V, V^+ eta V) is Hermitian and definite; solving it
    # with eigh restores eta-orthogonality.  Levels with tiny pseudo-norm
    # (close to an exceptional point) are left alone.
    if rtol <= 0:
        return E, R
    E, R = E.copy(), R.copy()
    Rn = R / np.linalg.norm(R, axis=0)
    pn = np.einsum("ij,i,ij->j", Rn.conj(), eta, Rn).real
    real = np.abs(E.imag) <= im_eps
    for sign in (1.0, -1.0):
        idx = np.flatnonzero(real & (sign * pn > min_pseudo_norm))
        if idx.size < 2:
            continue
        idx = idx[np.argsort(E[idx].real)]
        ev = E[idx].real
        gap = np.diff(ev) > rtol * np.maximum(np.abs(ev[1:]), 1.0)
        for block in np.split(idx, np.flatnonzero(gap) + 1):
            if block.size < 2:
                continue
            V = Rn[:, block]
            G = V.conj().T @ (eta[:, None] * V)
            Hs = V.conj().T @ (eta[:, None] * (M @ V))
            G, Hs = sign * 0.5 * (G + G.conj().T), sign * 0.5 * (Hs + Hs.conj().T)
            try:
                w, X = sla.eigh(Hs, G)
            except np.linalg.LinAlgError:
                continue
            E[block] = w
            R[:, block] = V @ X
    return E, R


def biorthogonal_eig(matrix, eta, energy_scale: float = 1.0, tol: Tolerances | None = None,
                     hamiltonian: FVHamiltonian | None = None,
                     cluster_rtol: float = 1e-2) -> BiorthogonalSpectrum:
    """Biorthogonal eigensystem of a pseudo-Hermitian matrix with metric ``eta``.

    Chains of real levels of one Krein sign spaced closer than
    ``cluster_rtol`` (relative) are re-diagonalized together in the ``eta``
    metric.
    """
    tol = tol or Tolerances()
    M = np.asarray(matrix, dtype=complex)
    # the FV matrix is real for real potentials; the real solver is faster
    # and returns exact conjugate pairs
    A = M.real if not np.any(M.imag) else M
    try:
        E, R = sla.eig(A)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SpectrumError(f"eigensolver failed: {exc}") from exc
    E, R = E.astype(complex), R.astype(complex)
    if not (np.all(np.isfinite(E)) and np.all(np.isfinite(R))):
        raise SpectrumError("eigensolver returned non-finite values")
    E, R = _refine_real_clusters(M, np.asarray(eta, dtype=float), E, R, tol.im_eps * energy_scale,
                                 cluster_rtol)
    order = np.lexsort((E.imag, E.real))
    E, R = E[order], R[:, order]
    R = R / np.linalg.norm(R, axis=0)
    try:
        L = sla.inv(R)
    except np.linalg.LinAlgError as exc:
        raise NonDiagonalizableError("non-diagonalizable near exceptional point") from exc
    defect = float(np.max(np.abs(L @ R - np.eye(E.size))))
    kappa = float(np.max(np.linalg.norm(L, axis=1)))
    if not np.isfinite(defect) or defect > tol.biorth_eps or kappa > MAX_EIGEN_CONDITION:
        raise NonDiagonalizableError(
            f"non-diagonalizable near exceptional point (|LR - I|_max = {defect:.3g}, "
            f"eigenvector condition {kappa:.3g})")

    im_eps = tol.im_eps * energy_scale
    pair_eps = tol.pair_eps * energy_scale
    partner = np.full(E.size, -1, dtype=int)
    cplx = np.flatnonzero(np.abs(E.imag) > im_eps)
    for i in cplx:
        d = np.abs(E[cplx] - np.conj(E[i]))
        k = int(np.argmin(d))
        if d[k] >= pair_eps:
            raise SpectrumError(
                f"eigenvalue {E[i]:.10g} has no conjugate partner within {pair_eps:.3g}")
        partner[i] = cplx[k]
    if np.any(partner[partner[cplx]] != cplx):
        raise SpectrumError("conjugate pairing is not one-to-one")
    return BiorthogonalSpectrum(E, R, L, partner, np.asarray(eta, dtype=float), energy_scale,
                                tol, defect, hamiltonian, M)


def eigensolve(H: FVHamiltonian, tol: Tolerances | None = None) -> BiorthogonalSpectrum:
    return biorthogonal_eig(H.matrix, H.eta, H.consts.rest_energy, tol, hamiltonian=H)


def continuum_edges(fields: FieldConfig, consts: PhysicalConstants) -> tuple[float, float]:
    """Analytic ``(top of lower continuum, bottom of upper continuum)``.

    Each asymptotic side contributes the band ``V +- sqrt(c^2 ((p_y - q A)^2 + p_z^2) + m^2 c^4)``.
    """
    upper, lower = np.inf, -np.inf
    py, pz = fields.momenta.p_y, fields.momenta.p_z
    for V, A in asymptotic_values(fields):
        gap = np.sqrt(consts.c**2 * ((py - consts.q * A) ** 2 + pz**2) + consts.rest_energy**2)
        upper = min(upper, V + gap)
        lower = max(lower, V - gap)
    return lower, upper


def overlap_threshold(fields: FieldConfig, consts: PhysicalConstants) -> float:
    """Scalar strength at which the two continua start to intersect."""
    (_, Al), (_, Ar) = asymptotic_values(fields)
    py, pz = fields.momenta.p_y, fields.momenta.p_z
    band = lambda A: np.sqrt(consts.c**2 * ((py - consts.q * A) ** 2 + pz**2) + consts.rest_energy**2)
    return float(band(Al) + band(Ar))


def localization(right: np.ndarray, grid: Grid, fields: FieldConfig) -> np.ndarray:
    """Normalized localization score of each column of ``right``.

    With ``f`` the fraction of ``|psi|^2`` (both components) inside
    ``|x| <= interaction_halfwidth`` and ``f_u`` the same fraction for a
    uniform density, the score is ``(f - f_u) / (1 - f_u)``.
    """
    w = (np.abs(right) ** 2).reshape(grid.N, 2, -1).sum(axis=1)
    inside = np.abs(grid.x) <= interaction_halfwidth(fields)
    f_u = inside.mean()
    frac = w[inside].sum(axis=0) / w.sum(axis=0)
    if f_u >= 1.0:
        log.warning("localization window covers the whole box; every state counts as localized")
        return np.ones(w.shape[1])
    return (frac - f_u) / (1.0 - f_u)


@dataclass(frozen=True, eq=False)
class LabeledSpectrum:
    spectrum: BiorthogonalSpectrum
    fields: FieldConfig
    bound: np.ndarray
    category: np.ndarray      # "bound" | "continuum" | "continuum-resonance"
    character: np.ndarray     # "particle" | "antiparticle" | "unassignable"
    localization: np.ndarray
    pseudo_norm: np.ndarray
    edges: tuple[float, float]

    @property
    def energies(self):
        return self.spectrum.energies

    def bound_indices(self) -> np.ndarray:
        return np.flatnonzero(self.bound)

    def bound_pairs(self) -> list[tuple[int, int]]:
        return [(i, j) for i, j in self.spectrum.pairs() if self.bound[i] and self.bound[j]]

    def bound_real(self) -> np.ndarray:
        return np.flatnonzero(self.bound & ~self.spectrum.is_complex)


def classify_states(spec: BiorthogonalSpectrum, fields: FieldConfig | None = None,
                    tol: Tolerances | None = None) -> LabeledSpectrum:
    """Label every eigenstate as bound / continuum and particle / antiparticle.

    A real level is bound when it lies strictly inside the analytic gap and
    its localization score reaches ``loc_threshold``.  Complex levels are
    bound when the pair is localized, whatever their real part; delocalized
    complex levels are continuum resonances.
    """
    H = spec.hamiltonian
    fields = fields or H.fields
    tol = tol or spec.tolerances
    lower, upper = continuum_edges(fields, H.consts)
    loc = localization(spec.right, H.grid, fields)
    E = spec.energies
    cplx = spec.is_complex
    pair_loc = np.where(cplx, 0.5 * (loc + loc[np.where(cplx, spec.partner, 0)]), loc)
    localized = pair_loc >= tol.loc_threshold
    in_gap = (E.real > lower) & (E.real < upper)
    bound = np.where(cplx, localized, localized & in_gap)
    category = np.where(bound, "bound", np.where(cplx, "continuum-resonance", "continuum"))
    pn = spec.pseudo_norms()
    character = np.where(cplx | (np.abs(pn) < 1e-8), "unassignable",
                         np.where(pn > 0, "particle", "antiparticle"))
    return LabeledSpectrum(spec, fields, bound, category.astype(object), character.astype(object),
                           loc, pn, (lower, upper))


def family_of(fields: FieldConfig) -> str:
    if isinstance(fields.scalar, SmoothStep):
        return "step_b"
    return "box"


def regime_classify(labeled: LabeledSpectrum, family: str | None = None) -> str:
    """Regime tag ``"I"`` ... ``"V"``, ``"free"``, ``"boundary"`` or ``"unclassified"``."""
    family = family or family_of(labeled.fields)
    if family not in FAMILIES:
        raise ValueError(f"unknown field family {family!r}; expected one of {FAMILIES}")
    spec = labeled.spectrum
    E = spec.energies
    scale = spec.energy_scale
    lower, upper = labeled.edges
    pairs = labeled.bound_pairs()
    real_bound = labeled.bound_real()

    if not pairs and _touching_levels(labeled, real_bound):
        return "boundary"
    if family == "box":
        if len(pairs) == 1:
            return "III" if E[pairs[0][0]].real > lower else "IV"
        if pairs:
            return "unclassified"
        if real_bound.size == 0:
            return "free"
        return "II" if np.any(labeled.character[real_bound] == "antiparticle") else "I"

    if lower >= upper:
        return "V"
    if len(pairs) == 1:
        return "II"
    if len(pairs) == 2:
        return "IV"
    if pairs:
        return "unclassified"
    if real_bound.size == 0:
        return "free"
    return "III" if real_bound.size >= 4 else "I"


def _touching_levels(labeled: LabeledSpectrum, idx) -> bool:
    # Opposite-signature real levels that coincide: sitting on an exceptional point.
    E = labeled.energies[idx].real
    pn = labeled.pseudo_norm[idx]
    eps = 1e3 * labeled.spectrum.tolerances.pair_eps * labeled.spectrum.energy_scale
    for a in range(len(idx)):
        for b in range(a + 1, len(idx)):
            if abs(E[a] - E[b]) < eps and pn[a] * pn[b] < 0:
                return True
    return False


def numerical_overlap(labeled: LabeledSpectrum) -> bool:
    """Whether the discretized continua overlap, judged from delocalized states only."""
    spec = labeled.spectrum
    free = ~labeled.bound
    if np.any(free & spec.is_complex):
        return True
    real_free = free & ~spec.is_complex
    pos = real_free & (labeled.pseudo_norm > 0)
    neg = real_free & (labeled.pseudo_norm < 0)
    if not (pos.any() and neg.any()):
        return False
    return spec.energies[neg].real.max() >= spec.energies[pos].real.min()


def biorthogonal_density(spec: BiorthogonalSpectrum | LabeledSpectrum, i: int) -> np.ndarray:
    """``rho(x) = phi_i(x) psi_i(x)`` normalized to unit grid quadrature.

    Only bound states are accepted.
    """
    labeled = spec if isinstance(spec, LabeledSpectrum) else classify_states(spec)
    if not labeled.bound[i]:
        raise ValueError(f"state {i} is labeled {labeled.category[i]!r}, not bound")
    s = labeled.spectrum
    grid = s.grid
    rho = (s.left[i] * s.right[:, i]).reshape(grid.N, 2).sum(axis=1)
    return rho / (rho.sum() * grid.dx)


# --- sweeps -----------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    V0: float
    state_index: int
    energy: complex
    bound: bool
    regime: str


@dataclass(frozen=True, eq=False)
class SweepResult:
    V0: np.ndarray
    regimes: list[str]
    rows: list[SweepRow]
    spectra: list[LabeledSpectrum] = field(repr=False, default_factory=list)

    def curves(self) -> dict[int, list[SweepRow]]:
        out: dict[int, list[SweepRow]] = {}
        for row in self.rows:
            out.setdefault(row.state_index, []).append(row)
        return out


def analyze(grid: Grid, fields: FieldConfig, consts: PhysicalConstants | None = None,
            scheme: str = "spectral", tol: Tolerances | None = None) -> LabeledSpectrum:
    consts = consts or PhysicalConstants()
    return classify_states(eigensolve(assemble(grid, fields, consts, scheme), tol), fields, tol)


def sweep(base: FieldConfig, V0_values, grid: Grid, consts: PhysicalConstants | None = None,
          family: str | None = None, scheme: str = "spectral", tol: Tolerances | None = None,
          threads: int = 1, keep_spectra: bool = False) -> SweepResult:
    """Spectra for a monotone list of strengths with continuity-tracked bound levels.

    Tracking uses nearest neighbours in the complex plane around a linear
    extrapolation of each curve; near-ties are broken by eigenvector overlap.
    """
    consts = consts or PhysicalConstants()
    V0 = np.asarray(list(V0_values), dtype=float)
    if V0.size > 1 and not (np.all(np.diff(V0) > 0) or np.all(np.diff(V0) < 0)):
        raise ValueError("sweep strengths must be strictly monotone")
    family = family or family_of(base)

    def job(v):
        return analyze(grid, base.with_V0(float(v)), consts, scheme, tol)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            spectra = list(pool.map(job, V0))
    else:
        spectra = [job(v) for v in V0]

    regimes = [regime_classify(s, family) for s in spectra]
    rows: list[SweepRow] = []
    tracks: list[dict] = []
    next_id = 0
    scale = consts.rest_energy
    for k, (v, lab) in enumerate(zip(V0, spectra)):
        idx = lab.bound_indices()
        E = lab.energies[idx]
        vecs = lab.spectrum.right[:, idx]
        alive = [t for t in tracks if t["k"] == k - 1]
        ids = [-1] * idx.size
        if alive and idx.size:
            pred = np.array([_extrapolate(t, v) for t in alive])
            dist = np.abs(E[None, :] - pred[:, None]) / scale
            ovl = np.abs(np.stack([t["vec"] for t in alive]).conj() @ vecs)
            cost = dist + 1e-9 * (1.0 - ovl)
            r, c = linear_sum_assignment(cost)
            for a, b in zip(r, c):
                if dist[a, b] < _gate(alive[a], v, scale):
                    ids[b] = alive[a]["id"]
                    alive[a].update(prev=(alive[a]["V0"], alive[a]["E"]), V0=v, E=E[b], k=k,
                                    vec=vecs[:, b].conj())
        for b in range(idx.size):
            if ids[b] < 0:
                ids[b] = next_id
                tracks.append(dict(id=next_id, V0=v, E=E[b], prev=None, k=k, vec=vecs[:, b].conj()))
                next_id += 1
            rows.append(SweepRow(float(v), ids[b], complex(E[b]), True, regimes[k]))
    return SweepResult(V0, regimes, rows, spectra if keep_spectra else [])


def _extrapolate(track, v):
    if track["prev"] is None:
        return track["E"]
    v0, e0 = track["prev"]
    if track["V0"] == v0:
        return track["E"]
    return track["E"] + (track["E"] - e0) * (v - track["V0"]) / (track["V0"] - v0)


def _gate(track, v, scale):
    step = abs(v - track["V0"]) / scale
    if track["prev"] is None:
        return max(0.5, 20 * step)
    v0, e0 = track["prev"]
    slope = abs(track["E"] - e0) / max(abs(track["V0"] - v0), 1e-300)
    return max(0.05, 10 * slope * abs(v - track["V0"]) / scale, 2 * step)


# --- critical points ----------------------------------------------------------


def bisect_transition(predicate, a: float, b: float, xtol: float) -> float:
    """Locate where a boolean ``predicate`` flips inside ``[a, b]``."""
    pa, pb = bool(predicate(a)), bool(predicate(b))
    if pa == pb:
        raise ValueError(f"bracket [{a}, {b}] does not straddle the transition "
                         f"(predicate is {pa} at both ends)")
    while abs(b - a) >= xtol:
        mid = 0.5 * (a + b)
        if bool(predicate(mid)) == pa:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


def critical_predicate(which: str):
    if which == "emergence":
        return lambda lab: bool(np.any(lab.character[lab.bound_real()] == "antiparticle"))
    if which in ("coalescence", "anticoalescence"):
        return lambda lab: bool(lab.bound_pairs())
    if which == "overlap":
        return numerical_overlap
    raise ValueError(f"unknown critical point kind {which!r}; expected one of {CRITICAL_KINDS}")


def find_critical(base: FieldConfig, bracket, which: str, grid: Grid,
                  consts: PhysicalConstants | None = None, scheme: str = "spectral",
                  tol: Tolerances | None = None, xtol: float = 1e-4) -> float:
    """Bisect ``V0`` inside ``bracket`` to where the ``which`` transition happens.

    ``bracket`` and ``xtol`` are absolute energies; the default ``xtol`` is
    in units of m c^2.  Returns the absolute strength ``V0*``.
    """
    consts = consts or PhysicalConstants()
    pred = critical_predicate(which)
    a, b = (float(v) for v in bracket)
    return bisect_transition(
        lambda v: pred(analyze(grid, base.with_V0(v), consts, scheme, tol)),
        a, b, xtol * consts.rest_energy)
