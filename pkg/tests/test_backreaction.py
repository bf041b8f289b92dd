import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import CONSTS, LC, MC2, box_fields, step_fields
from kgssw import backreaction as br
from kgssw.backreaction import (BackReactionInstability, BackReactionSettings, induced_energy, induced_field,
                                initial_field_energy, mean_crossings, run_backreaction)
from kgssw.core import make_grid
from kgssw.dynamics import build_free_basis, run_stepping
from kgssw.fields import FieldConfig, SmoothStep, SmoothStepY
from kgssw.hamiltonian import assemble

TU = CONSTS.time_unit
GRID = make_grid(64, 20 * LC, CONSTS)


def test_zero_field_energy():
    assert initial_field_energy(FieldConfig(), CONSTS) == 0.0


def test_step_field_energy_closed_form():
    V0, w = 3.0 * MC2, 0.3 * LC
    E0 = initial_field_energy(FieldConfig(SmoothStep(V0, w)), CONSTS)
    assert E0 == pytest.approx(V0**2 / (24 * np.pi * w * CONSTS.q**2), rel=1e-10)


def test_magnetic_term():
    A0, w = 2.0, 0.5
    E0 = initial_field_energy(FieldConfig(vector=SmoothStepY(A0, w)), CONSTS)
    assert E0 == pytest.approx(CONSTS.c**2 * A0**2 / (24 * np.pi * w), rel=1e-10)


def test_energy_scales_quadratically():
    e1 = initial_field_energy(box_fields(-1.0), CONSTS)
    e2 = initial_field_energy(box_fields(-2.0), CONSTS)
    assert e2 == pytest.approx(4 * e1, rel=1e-12)


def test_wide_box_is_two_steps():
    wide = initial_field_energy(box_fields(-2.0, l=40.0, w=0.2), CONSTS)
    edge = initial_field_energy(FieldConfig(SmoothStep(-2.0 * MC2, 0.2 * LC)), CONSTS)
    assert wide == pytest.approx(2 * edge, rel=1e-10)


def test_tabulated_needs_grid():
    from kgssw.fields import TabulatedPotential
    tab = TabulatedPotential.from_grid(GRID, np.zeros(GRID.N))
    with pytest.raises(ValueError, match="grid"):
        initial_field_energy(FieldConfig(tab), CONSTS)
    assert initial_field_energy(FieldConfig(tab), CONSTS, GRID) == 0.0


def test_induced_field_of_nothing():
    assert np.all(induced_field(np.zeros(GRID.N), GRID, CONSTS) == 0)


def test_sheet_charge_field():
    rho = np.zeros(GRID.N)
    rho[GRID.N // 2] = 1.0 / GRID.dx
    E = induced_field(rho, GRID, CONSTS)
    q = CONSTS.q
    assert E[0] == pytest.approx(-2 * np.pi * q)
    assert E[-1] == pytest.approx(2 * np.pi * q)
    assert E[GRID.N // 2] == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=64, max_size=64))
def test_gauss_law(values):
    rho = np.array(values)
    E = induced_field(rho, GRID, CONSTS)
    N = rho.sum() * GRID.dx
    # first and last cells carry half their charge each
    inner = N - 0.5 * (rho[0] + rho[-1]) * GRID.dx
    assert E[-1] - E[0] == pytest.approx(4 * np.pi * CONSTS.q * inner, abs=1e-9 * (1 + N))
    # symmetric constant: the end fields cancel up to the two half cells
    ends = 2 * np.pi * CONSTS.q * (rho[0] - rho[-1]) * GRID.dx
    assert E[0] + E[-1] == pytest.approx(ends, abs=1e-9 * (1 + N))


def test_negative_density_clipped_with_warning(caplog):
    rho = np.ones(GRID.N)
    rho[3] = -0.5
    with caplog.at_level(logging.WARNING):
        E = induced_field(rho, GRID, CONSTS)
    assert "clipped" in caplog.text
    rho[3] = 0.0
    assert np.allclose(E, induced_field(rho, GRID, CONSTS))


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1e3), st.floats(0, 1e3))
def test_monotone_response(n1, n2):
    shape = np.exp(-(GRID.x / (2 * LC)) ** 2)
    shape /= shape.sum() * GRID.dx
    lo, hi = sorted((n1, n2))
    assert induced_energy(lo, lo * shape, GRID, CONSTS) <= induced_energy(hi, hi * shape, GRID, CONSTS)


def test_mean_crossings():
    t = np.linspace(0, 10, 1001)
    assert mean_crossings(t, np.sin(2 * np.pi * t / 2.5 + 0.1)) == 8
    assert mean_crossings(t, t) == 1


def _settings(**kw):
    base = dict(dt=0.1 * TU, t_max=20 * TU)
    base.update(kw)
    return BackReactionSettings(**base)


def test_disabled_feedback_reproduces_plain_run():
    f = box_fields(-2.25)
    rec = run_backreaction(GRID, f, _settings(feedback=False), CONSTS)
    H = assemble(GRID, f, CONSTS)
    plain = run_stepping(lambda t: H, build_free_basis(GRID, CONSTS), 0.1 * TU, 20 * TU)
    assert np.array_equal(rec.times, plain.times)
    assert np.array_equal(rec.log_number, plain.log_number)
    assert np.all(rec.extra["V0"] == f.V0)


def test_bookkeeping_and_response():
    f = box_fields(-2.25)
    rec = run_backreaction(GRID, f, _settings(t_max=60 * TU), CONSTS)
    x = rec.extra
    ok = ~x["clamped"]
    assert np.allclose(x["E_in"][ok] + x["E_ex"][ok], x["E_0"], rtol=1e-15, atol=0)
    assert np.all(x["E_ex"] >= 0)
    # V0 lags the bookkeeping by one step
    expected = f.V0 * np.sqrt(x["E_ex"][:-1] / x["E_0"])
    assert np.allclose(x["V0"][1:], expected, rtol=1e-14)
    assert x["V0"][0] == f.V0
    assert np.all(np.abs(x["V0"]) <= abs(f.V0))


def test_no_particles_keep_strength(monkeypatch):
    monkeypatch.setattr(br, "particle_density", lambda basis, modes: np.zeros(basis.grid.N))
    monkeypatch.setattr(br, "particle_number", lambda basis, modes: 0.0)
    f = box_fields(-2.25)
    rec = run_backreaction(GRID, f, _settings(t_max=5 * TU), CONSTS)
    assert np.all(rec.extra["V0"] == f.V0)
    assert np.all(rec.extra["E_in"] == 0)


def test_subcritical_box_barely_responds():
    f = box_fields(-0.5)
    rec = run_backreaction(GRID, f, _settings(t_max=5 * TU), CONSTS)
    assert np.allclose(rec.extra["V0"], f.V0, rtol=1e-6)


def test_record_every():
    rec = run_backreaction(GRID, box_fields(-2.25), _settings(t_max=2 * TU, record_every=5), CONSTS)
    assert np.allclose(rec.times / TU, [0, 0.5, 1.0, 1.5, 2.0])


def test_rejects_other_families_and_bad_steps():
    with pytest.raises(ValueError, match="box"):
        run_backreaction(GRID, step_fields(3.0), _settings(), CONSTS)
    with pytest.raises(ValueError):
        run_backreaction(GRID, box_fields(-2.25), _settings(dt=-1.0), CONSTS)


def test_alternation_detector():
    assert br._alternating(np.array([0, 1, 0, 1, 0.0]), 0.5)
    assert not br._alternating(np.array([0, 1, 2, 3.0]), 0.5)
    assert not br._alternating(np.array([0, 1e-9, 0, 1e-9]), 1e-3)


def test_nyquist_instability_aborts(monkeypatch):
    calls = {"k": 0}
    real = br.induced_energy

    def flip(n, rho, grid, consts, warn=True):
        calls["k"] += 1
        return real(n, rho, grid, consts, warn) + (0.3 if calls["k"] % 2 else 0.0) * E0

    E0 = initial_field_energy(box_fields(-2.25), CONSTS)
    monkeypatch.setattr(br, "induced_energy", flip)
    with pytest.raises(BackReactionInstability, match="reduce dt"):
        run_backreaction(GRID, box_fields(-2.25), _settings(nyquist_window=8), CONSTS)
