import sys

import numpy as np
import pytest

from kgssw.core import PhysicalConstants, make_grid
from kgssw.fields import FieldConfig, SmoothBox, SmoothStep, SmoothStepY, TransverseMomenta

CONSTS = PhysicalConstants()
LC = CONSTS.lambda_C
MC2 = CONSTS.rest_energy


def box_fields(V0, l=2.2, w=0.2):
    """Smooth box with ``V0`` in m c^2 and lengths in lambda_C."""
    return FieldConfig(SmoothBox(V0 * MC2, l * LC, w * LC))


def step_fields(V0, w_E=0.3, w_B=2.2, A0=2.64):
    """Step plus magnetic step; ``A0`` in m c / q, ``p_y = q A0 / 2``."""
    mc = CONSTS.m * CONSTS.c
    return FieldConfig(SmoothStep(V0 * MC2, w_E * LC), SmoothStepY(A0 * mc / CONSTS.q, w_B * LC),
                       TransverseMomenta(0.5 * A0 * mc))


@pytest.fixture
def consts():
    return CONSTS


@pytest.fixture
def grid64():
    return make_grid(64, 20 * LC, CONSTS)


@pytest.fixture
def grid128():
    return make_grid(128, 20 * LC, CONSTS)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        terminalreporter.write_line(results[k])
