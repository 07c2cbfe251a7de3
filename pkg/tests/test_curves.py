"""Piecewise-constant curve lookups and exact integrals."""

import numpy as np
import pytest

from pdv4.curves import PiecewiseConstantCurve, ZERO_CURVE, flat_curve
from pdv4.errors import InputError


def test_flat_curve_value_and_integral():
    c = flat_curve(0.03)
    assert c.value(0.0) == 0.03
    assert c.value(7.5) == 0.03
    assert c.integral(0.0, 2.0) == pytest.approx(0.06, rel=1e-15)


def test_zero_curve_is_zero():
    assert ZERO_CURVE.integral(0.0, 100.0) == 0.0


def test_piecewise_hand_case():
    c = PiecewiseConstantCurve(times=np.array([0.0, 0.5, 1.0]),
                               rates=np.array([0.02, 0.03, 0.04]))
    # A(0.75) = 0.02*0.5 + 0.03*0.25 = 0.0175; A(0.25) = 0.005
    assert c.integral(0.25, 0.75) == pytest.approx(0.0125, abs=1e-15)
    # right-continuity at a breakpoint
    assert c.value(0.5) == 0.03
    # last rate extends beyond the final breakpoint
    assert c.value(3.0) == 0.04
    assert c.integral(1.0, 2.0) == pytest.approx(0.04, abs=1e-15)


def test_step_integrals_match_pointwise():
    c = PiecewiseConstantCurve(times=np.array([0.0, 0.3, 0.9]),
                               rates=np.array([0.01, 0.05, 0.02]))
    grid = np.linspace(0.0, 2.0, 41)
    steps = c.step_integrals(grid)
    expect = [c.integral(a, b) for a, b in zip(grid[:-1], grid[1:])]
    np.testing.assert_allclose(steps, expect, atol=1e-15)
    assert steps.sum() == pytest.approx(c.integral(0.0, 2.0), abs=1e-14)


def test_curve_validation():
    with pytest.raises(InputError):
        PiecewiseConstantCurve(times=np.array([0.1, 0.5]), rates=np.array([0.01, 0.02]))
    with pytest.raises(InputError):
        PiecewiseConstantCurve(times=np.array([0.0, 0.5, 0.5]),
                               rates=np.array([0.01, 0.02, 0.03]))
    with pytest.raises(InputError):
        PiecewiseConstantCurve(times=np.array([0.0]), rates=np.array([np.inf]))
    with pytest.raises(InputError):
        flat_curve(0.02).value(-1.0)
    with pytest.raises(InputError):
        flat_curve(0.02).integral(1.0, 0.5)
