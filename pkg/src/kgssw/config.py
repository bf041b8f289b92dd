"""Experiment configuration files.

Configs are YAML mappings.  Energies are given in units of ``m c^2``,
lengths in Compton wavelengths ``lambda_C = hbar/(m c)``, times in
``hbar/(m c^2)``, momenta in ``m c`` and the vector-potential amplitude
``A0`` in ``m c / q``.  Example::

    figure: fig2_regime3     # which figure this reproduces
    kind: evolve             # sweep | evolve | critical | backreact | density
    family: box              # box | step_b
    grid: {N: 512, L: 30.0, scheme: spectral}
    potential: {V0: -2.22, l: 2.2, w: 0.2}
    t_max: auto              # or a number
    samples: 2001

See :data:`SCHEMA` for every key.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .core import Grid, PhysicalConstants, Tolerances, make_grid
from .fields import FieldConfig, SmoothBox, SmoothStep, SmoothStepY, TransverseMomenta, ZeroVector

KINDS = ("sweep", "evolve", "critical", "backreact", "density")
FAMILY_NAMES = ("box", "step_b")
METHODS = ("static", "stepping")

# key -> (allowed types, description)
SCHEMA = {
    "figure": (str, "label of the reproduced figure"),
    "kind": (str, f"run kind, one of {KINDS}"),
    "family": (str, f"field family, one of {FAMILY_NAMES}"),
    "grid": (dict, "N (even), L [lambda_C], scheme (spectral | fd3)"),
    "constants": (dict, "optional c, m, hbar, q in atomic units"),
    "tolerances": (dict, "optional im_eps, pair_eps, biorth_eps, loc_threshold"),
    "potential": (dict, "box: V0, l, w; step_b: V0, w_E, A0, w_B"),
    "momenta": (dict, "p_y, p_z [m c]; step_b defaults p_y = A0/2, p_z = 0"),
    "V0_values": (list, "sweep strengths [m c^2]"),
    "V0_range": (dict, "start, stop, num: evenly spaced sweep strengths"),
    "t_max": ((int, float, str), "evolution length [hbar/m c^2] or 'auto'"),
    "dt": ((int, float), "time step [hbar/m c^2] (stepping and backreact)"),
    "samples": (int, "number of N(t) samples for static evolution"),
    "method": (str, f"evolution method, one of {METHODS}"),
    "which": (str, "critical point: emergence | coalescence | anticoalescence | overlap"),
    "bracket": (list, "two strengths [m c^2] enclosing the critical point"),
    "xtol": ((int, float), "bisection tolerance [m c^2]"),
    "feedback": (bool, "back reaction switched on"),
    "record_every": (int, "backreact: keep every n-th step"),
    "density_times": (list, "times [hbar/m c^2] of particle-density snapshots"),
    "bound_states": (bool, "density: also write biorthogonal densities of bound states"),
    "check_convergence": (bool, "repeat with 2N and report the shift in the manifest"),
    "threads": (int, "worker threads for sweeps"),
}
REQUIRED = {
    "sweep": ("family", "grid", "potential"),
    "evolve": ("family", "grid", "potential", "t_max"),
    "critical": ("family", "grid", "potential", "which", "bracket"),
    "backreact": ("family", "grid", "potential", "dt", "t_max"),
    "density": ("family", "grid", "potential", "density_times"),
}
POTENTIAL_KEYS = {"box": ("V0", "l", "w"), "step_b": ("V0", "w_E", "A0", "w_B")}


class ConfigError(ValueError):
    """Schema violation; ``diagnostics`` lists ``path:line: message`` strings."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(self.diagnostics))


def _line_map(node, prefix="", out=None):
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = f"{prefix}{k.value}"
            out[key] = k.start_mark.line + 1
            _line_map(v, key + ".", out)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict
    source: str = "<string>"
    text: str = ""
    lines: dict = field(default_factory=dict, repr=False)

    @property
    def kind(self) -> str:
        return self.raw["kind"]

    @property
    def family(self) -> str:
        return self.raw["family"]

    @property
    def figure(self) -> str | None:
        return self.raw.get("figure")

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def get(self, key, default=None):
        return self.raw.get(key, default)

    def with_kind(self, kind: str) -> "ExperimentConfig":
        raw = dict(self.raw, kind=kind)
        return ExperimentConfig(raw, self.source, self.text, self.lines)

    # --- conversion to physical objects ---

    def constants(self) -> PhysicalConstants:
        return PhysicalConstants(**self.raw.get("constants", {}))

    def tolerances(self) -> Tolerances:
        return Tolerances(**self.raw.get("tolerances", {}))

    def scheme(self) -> str:
        return self.raw["grid"].get("scheme", "spectral")

    def grid(self, consts: PhysicalConstants | None = None, refine: int = 1) -> Grid:
        consts = consts or self.constants()
        g = self.raw["grid"]
        return make_grid(int(g["N"]) * refine, float(g["L"]) * consts.lambda_C, consts)

    def fields(self, consts: PhysicalConstants | None = None, V0: float | None = None) -> FieldConfig:
        """Field configuration; ``V0`` (in m c^2) overrides the file value."""
        consts = consts or self.constants()
        lc, mc2, mc = consts.lambda_C, consts.rest_energy, consts.m * consts.c
        p = self.raw["potential"]
        v = float(p.get("V0", 0.0) if V0 is None else V0) * mc2
        mom = self.raw.get("momenta", {})
        if self.family == "box":
            return FieldConfig(SmoothBox(v, float(p["l"]) * lc, float(p["w"]) * lc), ZeroVector(),
                               TransverseMomenta(float(mom.get("p_y", 0.0)) * mc,
                                                 float(mom.get("p_z", 0.0)) * mc))
        A0 = float(p["A0"]) * mc / consts.q
        # default p_y = q A0 / 2
        p_y = float(mom.get("p_y", 0.5 * float(p["A0"]))) * mc
        return FieldConfig(SmoothStep(v, float(p["w_E"]) * lc), SmoothStepY(A0, float(p["w_B"]) * lc),
                           TransverseMomenta(p_y, float(mom.get("p_z", 0.0)) * mc))

    def V0_list(self) -> np.ndarray:
        if "V0_values" in self.raw:
            return np.asarray(self.raw["V0_values"], dtype=float)
        if "V0_range" in self.raw:
            r = self.raw["V0_range"]
            return np.linspace(float(r["start"]), float(r["stop"]), int(r["num"]))
        return np.array([float(self.raw["potential"]["V0"])])


def validate_mapping(raw, lines=None, source="<string>", kind: str | None = None) -> list[str]:
    """Schema diagnostics for an already parsed mapping (empty when valid)."""
    lines = lines or {}

    def where(key):
        return f"{source}:{lines[key]}" if key in lines else source

    if not isinstance(raw, dict):
        return [f"{source}: top level must be a mapping"]
    errs = []
    for key, val in raw.items():
        if key not in SCHEMA:
            errs.append(f"{where(key)}: unknown key {key!r}")
            continue
        types = SCHEMA[key][0]
        types = types if isinstance(types, tuple) else (types,)
        if isinstance(val, bool) and bool not in types:
            errs.append(f"{where(key)}: {key} must not be a boolean")
        elif not isinstance(val, types):
            errs.append(f"{where(key)}: {key} has the wrong type ({type(val).__name__})")
    kind = kind or raw.get("kind")
    if kind not in KINDS:
        errs.append(f"{where('kind')}: kind must be one of {', '.join(KINDS)} (got {kind!r})")
        return errs
    for key in REQUIRED[kind]:
        if key not in raw:
            errs.append(f"{source}: missing required field {key!r} for kind {kind!r}")
    fam = raw.get("family")
    if "family" in raw and fam not in FAMILY_NAMES:
        errs.append(f"{where('family')}: unknown field family {fam!r}; allowed: {', '.join(FAMILY_NAMES)}")
        fam = None
    grid = raw.get("grid")
    if isinstance(grid, dict):
        for k in grid:
            if k not in ("N", "L", "scheme"):
                errs.append(f"{where('grid.' + k)}: unknown grid key {k!r}")
        N, L = grid.get("N"), grid.get("L")
        if not (isinstance(N, int) and not isinstance(N, bool) and N >= 8 and N % 2 == 0):
            errs.append(f"{where('grid.N')}: grid.N must be an even integer >= 8")
        if not (isinstance(L, (int, float)) and not isinstance(L, bool) and L > 0):
            errs.append(f"{where('grid.L')}: grid.L must be a positive number")
        if grid.get("scheme", "spectral") not in ("spectral", "fd3"):
            errs.append(f"{where('grid.scheme')}: scheme must be spectral or fd3")
    pot = raw.get("potential")
    if isinstance(pot, dict) and fam:
        allowed = POTENTIAL_KEYS[fam]
        for k in pot:
            if k not in allowed:
                errs.append(f"{where('potential.' + k)}: unknown {fam} parameter {k!r}; allowed: {', '.join(allowed)}")
        for k in allowed:
            if k == "V0" and kind == "sweep":
                continue
            if k not in pot:
                errs.append(f"{where('potential')}: missing {fam} parameter {k!r}")
            elif not isinstance(pot[k], (int, float)) or isinstance(pot[k], bool):
                errs.append(f"{where('potential.' + k)}: {k} must be a number")
            elif k != "V0" and k != "A0" and pot[k] <= 0:
                errs.append(f"{where('potential.' + k)}: {k} must be positive")
    if kind == "sweep" and not ({"V0_values", "V0_range"} & set(raw)):
        errs.append(f"{source}: sweep needs V0_values or V0_range")
    if "V0_range" in raw and isinstance(raw["V0_range"], dict):
        r = raw["V0_range"]
        if set(r) != {"start", "stop", "num"}:
            errs.append(f"{where('V0_range')}: V0_range needs exactly start, stop, num")
        elif not (isinstance(r["num"], int) and r["num"] >= 1):
            errs.append(f"{where('V0_range.num')}: num must be a positive integer")
    tm = raw.get("t_max")
    if isinstance(tm, str) and tm != "auto":
        errs.append(f"{where('t_max')}: t_max must be a positive number or 'auto'")
    elif isinstance(tm, (int, float)) and not isinstance(tm, bool) and tm <= 0:
        errs.append(f"{where('t_max')}: t_max must be positive")
    if kind == "backreact" and isinstance(tm, str):
        errs.append(f"{where('t_max')}: backreact needs a numeric t_max")
    dt = raw.get("dt")
    if isinstance(dt, (int, float)) and dt <= 0:
        errs.append(f"{where('dt')}: dt must be positive")
    method = raw.get("method", "static")
    if method not in METHODS:
        errs.append(f"{where('method')}: method must be one of {', '.join(METHODS)}")
    elif kind == "evolve" and method == "stepping" and "dt" not in raw:
        errs.append(f"{source}: missing required field 'dt' for stepping evolution")
    if kind == "backreact" and fam == "step_b":
        errs.append(f"{where('family')}: backreact is defined for the box family only")
    if kind == "critical":
        which = raw.get("which")
        if which not in ("emergence", "coalescence", "anticoalescence", "overlap"):
            errs.append(f"{where('which')}: which must be emergence, coalescence, anticoalescence or overlap")
        b = raw.get("bracket")
        if isinstance(b, list) and (len(b) != 2 or not all(isinstance(v, (int, float)) for v in b)):
            errs.append(f"{where('bracket')}: bracket must be two numbers")
    for sub in ("constants", "tolerances"):
        block = raw.get(sub)
        if isinstance(block, dict):
            try:
                (PhysicalConstants if sub == "constants" else Tolerances)(**block)
            except (TypeError, ValueError) as exc:
                errs.append(f"{where(sub)}: {exc}")
    return errs


def loads(text: str, source: str = "<string>", kind: str | None = None) -> ExperimentConfig:
    """Parse and validate config text; raises :class:`ConfigError`."""
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigError([f"{source}{line}: {getattr(exc, 'problem', None) or exc}"]) from None
    lines = _line_map(node) if node is not None else {}
    if raw is None:
        raise ConfigError([f"{source}: empty config"])
    errs = validate_mapping(raw, lines, source, kind)
    if errs:
        raise ConfigError(errs)
    cfg = ExperimentConfig(raw, source, text, lines)
    return cfg.with_kind(kind) if kind else cfg


def load(path, kind: str | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read config ({exc.strerror})"]) from None
    return loads(text, str(path), kind)


def bundled_dir() -> Path:
    return Path(__file__).parent / "configs"


def bundled(name: str) -> Path:
    """Path of a config shipped with the package, e.g. ``bundled("fig2_regime3")``."""
    p = bundled_dir() / f"{name}.yaml"
    if not p.exists():
        names = sorted(q.stem for q in bundled_dir().glob("*.yaml"))
        raise FileNotFoundError(f"no bundled config {name!r}; available: {', '.join(names)}")
    return p


def bundled_names() -> list[str]:
    return sorted(q.stem for q in bundled_dir().glob("*.yaml"))
