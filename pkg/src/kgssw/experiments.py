"""Run kinds behind the command line: each returns CSV texts plus a summary.

Nothing here touches the file system; :mod:`kgssw.cli` writes the results.
Outputs use the config units (``m c^2``, ``lambda_C``, ``hbar/m c^2``).
"""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .backreaction import BackReactionSettings, mean_crossings, run_backreaction
from .config import ExperimentConfig
from .dynamics import (StaticPairCreation, build_free_basis, default_t_max, fit_growth_rate,
                       oscillation_frequency, run_static, run_stepping)
from .hamiltonian import assemble
from .spectral import (analyze, biorthogonal_density, classify_states, eigensolve, find_critical,
                       numerical_overlap, overlap_threshold, regime_classify, sweep)

log = logging.getLogger(__name__)


@dataclass
class RunOutput:
    files: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


def _csv(header, columns) -> str:
    buf = io.StringIO()
    cols = [np.asarray(c) for c in columns]
    buf.write(",".join(header) + "\n")
    for row in zip(*cols):
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (str, np.str_)):
        return str(v)
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _f(x):
    return None if x is None else float(x)


def running_growth_rate(times, log_number, min_samples: int = 10) -> np.ndarray:
    """Slope of ``ln N`` over the second half of ``[0, t]`` for every sample ``t``."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(log_number, dtype=float)
    ok = np.isfinite(y)
    tt, yy = np.where(ok, t, 0.0), np.where(ok, y, 0.0)
    cum = [np.concatenate([[0.0], np.cumsum(a)]) for a in (ok * 1.0, tt, yy, tt * tt, tt * yy)]
    out = np.full(t.size, np.nan)
    for i in range(t.size):
        j = np.searchsorted(t, 0.5 * t[i])
        n, st, sy, stt, sty = (c[i + 1] - c[j] for c in cum)
        den = n * stt - st * st
        if n >= min_samples and den > 0:
            out[i] = (n * sty - st * sy) / den
    return out


def grid_metadata(cfg: ExperimentConfig, consts, grid) -> dict:
    mc2 = consts.rest_energy
    return {
        "N": grid.N,
        "L": grid.L / consts.lambda_C,
        "dx": grid.dx / consts.lambda_C,
        "scheme": cfg.scheme(),
        "p_max": float(np.max(np.abs(grid.momenta))) / (consts.m * consts.c),
        # energy of one momentum quantum at the light cone
        "momentum_energy_spacing": consts.c * grid.dp / mc2,
    }


def manifest(cfg: ExperimentConfig, out: RunOutput, consts, grid) -> dict:
    return {
        "config": cfg.source,
        "config_sha256": cfg.sha256,
        "code_version": __version__,
        "kind": cfg.kind,
        "figure": cfg.figure,
        "grid": grid_metadata(cfg, consts, grid),
        "files": sorted(out.files),
        "summary": out.summary,
    }


def _spectrum_csv(lab, mc2) -> str:
    E = lab.energies / mc2
    return _csv(["state_index", "Re_E", "Im_E", "bound_flag", "category", "character", "localization"],
                [np.arange(E.size), E.real, E.imag, lab.bound, lab.category, lab.character,
                 lab.localization])


def two_level_gap(lab) -> float | None:
    """Lowest particle bound level minus highest antiparticle bound level."""
    idx = lab.bound_real()
    part = idx[lab.character[idx] == "particle"]
    anti = idx[lab.character[idx] == "antiparticle"]
    if not (part.size and anti.size):
        return None
    return float(lab.energies[part].real.min() - lab.energies[anti].real.max())


def _evolution(cfg: ExperimentConfig, refine: int = 1):
    consts = cfg.constants()
    grid = cfg.grid(consts, refine)
    fields = cfg.fields(consts)
    tol = cfg.tolerances()
    H = assemble(grid, fields, consts, cfg.scheme())
    spec = eigensolve(H, tol)
    lab = classify_states(spec, fields, tol)
    basis = build_free_basis(grid, consts)
    tu = consts.time_unit
    t_max = cfg.get("t_max")
    t_max = default_t_max(spec, consts) if t_max == "auto" else float(t_max) * tu
    if cfg.get("method", "static") == "stepping":
        dt = float(cfg.get("dt")) * tu
        nsteps = int(round(t_max / dt))
        every = max(1, nsteps // (int(cfg.get("samples", 2001)) - 1))
        rec = run_stepping(lambda t: H, basis, dt, t_max, sample_every=every)
    else:
        rec = run_static(spec, basis, np.linspace(0.0, t_max, int(cfg.get("samples", 2001))))
    return consts, grid, spec, lab, rec


def _rates(consts, spec, lab, rec) -> dict:
    mc2 = consts.rest_energy
    try:
        gamma, err = fit_growth_rate(rec, full=True)
    except ValueError as exc:
        log.warning("growth-rate fit skipped: %s", exc)
        gamma, err = None, None
    pairs = lab.bound_pairs()
    im = max((abs(lab.energies[i].imag) for i, _ in pairs), default=0.0)
    ref = 2 * im / consts.hbar
    freq = oscillation_frequency(rec, growth_rate=gamma if ref > 0 else None)
    gap = two_level_gap(lab)
    out = {
        "regime": regime_classify(lab),
        "bound_pairs": len(pairs),
        "gamma_fit": _f(None if gamma is None else gamma / mc2 * consts.hbar),
        "gamma_fit_stderr": _f(None if err is None else err / mc2 * consts.hbar),
        "gamma_spectral": ref / mc2 * consts.hbar,
        "omega": _f(None if freq is None else freq * consts.hbar / mc2),
        "two_level_gap": _f(None if gap is None else gap / mc2),
        "t_max": float(rec.times[-1] / consts.time_unit),
    }
    if gamma is not None and ref > 0:
        out["gamma_relative_error"] = abs(gamma - ref) / ref
    return out


def run_evolve(cfg: ExperimentConfig) -> RunOutput:
    consts, grid, spec, lab, rec = _evolution(cfg)
    mc2 = consts.rest_energy
    summary = _rates(consts, spec, lab, rec)
    tu = consts.time_unit
    running = running_growth_rate(rec.times, rec.log_number) * tu
    out = RunOutput(summary=summary)
    out.files["evolution.csv"] = _csv(["t", "N", "Gamma_fit_running"], [rec.times / tu, rec.number, running])
    out.files["spectrum.csv"] = _spectrum_csv(lab, mc2)
    if cfg.get("check_convergence"):
        c2, _, spec2, lab2, rec2 = _evolution(cfg, refine=2)
        fine = _rates(c2, spec2, lab2, rec2)
        shift = None
        if summary["gamma_fit"] and fine["gamma_fit"]:
            shift = abs(fine["gamma_fit"] - summary["gamma_fit"]) / abs(summary["gamma_fit"])
        summary["convergence"] = {"N": 2 * grid.N, "regime": fine["regime"],
                                  "gamma_fit": fine["gamma_fit"], "gamma_shift": shift}
    return out


def run_sweep(cfg: ExperimentConfig, threads: int = 1) -> RunOutput:
    consts = cfg.constants()
    grid = cfg.grid(consts)
    mc2 = consts.rest_energy
    V0 = cfg.V0_list()
    base = cfg.fields(consts, V0=V0[0])
    res = sweep(base, V0 * mc2, grid, consts, cfg.family, cfg.scheme(), cfg.tolerances(),
                threads=threads, keep_spectra=True)
    rows = res.rows
    out = RunOutput()
    out.files["sweep.csv"] = _csv(
        ["V0", "state_index", "Re_E", "Im_E", "bound_flag", "regime"],
        [[r.V0 / mc2 for r in rows], [r.state_index for r in rows], [r.energy.real / mc2 for r in rows],
         [r.energy.imag / mc2 for r in rows], [r.bound for r in rows], [r.regime for r in rows]])
    overlaps = [numerical_overlap(s) for s in res.spectra]
    out.files["regimes.csv"] = _csv(
        ["V0", "regime", "bound_pairs", "bound_states", "continuum_overlap"],
        [V0, res.regimes, [len(s.bound_pairs()) for s in res.spectra],
         [int(s.bound.sum()) for s in res.spectra], overlaps])
    seq = [r for i, r in enumerate(res.regimes) if i == 0 or r != res.regimes[i - 1]]
    out.summary = {"regime_sequence": seq, "points": int(V0.size)}
    return out


def run_critical(cfg: ExperimentConfig) -> RunOutput:
    consts = cfg.constants()
    grid = cfg.grid(consts)
    mc2 = consts.rest_energy
    which = cfg.get("which")
    lo, hi = (float(v) for v in cfg.get("bracket"))
    xtol = float(cfg.get("xtol", 1e-4))
    base = cfg.fields(consts)
    V = find_critical(base, (lo * mc2, hi * mc2), which, grid, consts, cfg.scheme(),
                      cfg.tolerances(), xtol=xtol) / mc2
    summary = {"which": which, "V0_critical": V, "bracket": [lo, hi], "xtol": xtol}
    if which == "overlap":
        summary["V0_analytic"] = overlap_threshold(base, consts) / mc2
    out = RunOutput(summary=summary)
    out.files["critical.csv"] = _csv(["which", "V0_critical", "bracket_low", "bracket_high", "xtol"],
                                     [[which], [V], [lo], [hi], [xtol]])
    return out


def run_backreact_kind(cfg: ExperimentConfig) -> RunOutput:
    consts = cfg.constants()
    grid = cfg.grid(consts)
    mc2, tu = consts.rest_energy, consts.time_unit
    fields = cfg.fields(consts)
    settings = BackReactionSettings(float(cfg.get("dt")) * tu, float(cfg.get("t_max")) * tu,
                                    feedback=bool(cfg.get("feedback", True)),
                                    record_every=int(cfg.get("record_every", 1)))
    rec = run_backreaction(grid, fields, settings, consts, cfg.scheme())
    lab = analyze(grid, fields, consts, cfg.scheme(), cfg.tolerances())
    pairs = lab.bound_pairs()
    ref = 2 * max((abs(lab.energies[i].imag) for i, _ in pairs), default=0.0) / mc2
    x = rec.extra
    try:
        gamma = fit_growth_rate(rec) * tu
    except ValueError:
        gamma = None
    out = RunOutput(summary={
        "feedback": settings.feedback,
        "gamma_fit": _f(gamma),
        "gamma_without_feedback": ref,
        "V0_mean_crossings": mean_crossings(rec.times, x["V0"]),
        "V0_min": float(np.min(x["V0"]) / mc2),
        "V0_max": float(np.max(x["V0"]) / mc2),
        "clamped_steps": int(np.sum(x["clamped"])),
        "E_0": float(x["E_0"] / mc2),
    })
    out.files["backreact.csv"] = _csv(["t", "N", "V0", "E_in", "E_ex"],
                                      [rec.times / tu, rec.number, x["V0"] / mc2, x["E_in"] / mc2,
                                       x["E_ex"] / mc2])
    return out


def run_density(cfg: ExperimentConfig) -> RunOutput:
    consts = cfg.constants()
    grid = cfg.grid(consts)
    lc, tu = consts.lambda_C, consts.time_unit
    fields = cfg.fields(consts)
    spec = eigensolve(assemble(grid, fields, consts, cfg.scheme()), cfg.tolerances())
    lab = classify_states(spec, fields, cfg.tolerances())
    engine = StaticPairCreation(spec, build_free_basis(grid, consts))
    x = grid.x / lc
    out = RunOutput(summary={"regime": regime_classify(lab), "snapshots": []})
    for t in cfg.get("density_times"):
        rho = engine.density(float(t) * tu) * lc
        name = f"density_t{float(t):g}.csv"
        out.files[name] = _csv(["x", "Re_rho"], [x, rho])
        out.summary["snapshots"].append({"t": float(t), "file": name, "N": float(rho.sum() * grid.dx / lc)})
    if cfg.get("bound_states", True):
        for i in lab.bound_indices():
            rho = biorthogonal_density(lab, int(i)) * lc
            out.files[f"bound_state_{int(i)}.csv"] = _csv(["x", "Re_rho"], [x, rho.real])
    return out


def execute(cfg: ExperimentConfig, threads: int = 1) -> RunOutput:
    kind = cfg.kind
    if kind == "sweep":
        return run_sweep(cfg, threads)
    if kind == "evolve":
        return run_evolve(cfg)
    if kind == "critical":
        return run_critical(cfg)
    if kind == "backreact":
        return run_backreact_kind(cfg)
    if kind == "density":
        return run_density(cfg)
    raise ValueError(f"unknown run kind {kind!r}")
