import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from cbdc_nk.config import TaylorCoefficients
from cbdc_nk.model import utility_flow
from cbdc_nk.steady_state import SteadyState, solve_steady_state
from cbdc_nk.welfare import (BOUNDS, WelfareError, WelfareEvaluator, compensating_fraction,
                             conditional_welfare, optimize_rule)

from conftest import MONO, MONO_FIXED, calibrated


def test_zero_shocks_gives_deterministic_value(cal):
    res = conditional_welfare(cal, MONO)
    ss = solve_steady_state(cal, MONO)
    expect = utility_flow(ss["c"], ss["z"], ss["l"], cal) / (1 - cal.beta)
    assert res.value == pytest.approx(expect, rel=1e-14)
    assert res.risk_term == 0.0
    assert res.preset == "none"


def test_shocks_lower_welfare():
    cal = calibrated(preset="welfare")
    res = conditional_welfare(cal, MONO)
    assert res.determinate
    assert res.value < res.steady_value
    assert res.preset == "welfare"


def test_welfare_is_reproducible():
    cal = calibrated(preset="welfare")
    assert conditional_welfare(cal, MONO).value == conditional_welfare(cal, MONO).value


def test_indeterminate_rule_is_penalized():
    cal = calibrated(preset="welfare")
    ev = WelfareEvaluator(cal, MONO_FIXED)
    res = ev(TaylorCoefficients(rho=0.0, theta_pi=0.0, theta_y=0.0), cal.cbdc_rule)
    assert res.value == -math.inf
    assert not res.determinate


def test_compensating_fraction_identity(steady):
    assert compensating_fraction(-100.0, -100.0, steady) == 0.0


def test_compensating_fraction_one_percent(steady):
    gap = math.log(1.01) / (1 - steady.calibration.beta)
    assert compensating_fraction(-100.0, -100.0 + gap, steady) == pytest.approx(1.0, rel=1e-10)


def test_compensating_fraction_general_sigma(steady):
    sigma = 2.0
    cal = replace(steady.calibration, sigma=sigma)
    ss = SteadyState(steady.values, cal, steady.variant, steady.system)
    c, z = ss["c"], ss["z"]
    bundle = (1 - cal.v) * c ** (1 - cal.psi) + cal.v * z ** (1 - cal.psi)
    scale = bundle ** ((1 - sigma) / (1 - cal.psi))
    for dW in (-5.0, 0.3, 4.0):
        expect = (1 + (1 - sigma) * (1 - cal.beta) * dW / scale) ** (1 / (1 - sigma)) - 1
        assert compensating_fraction(-50.0, -50.0 + dW, ss) == pytest.approx(100 * expect, rel=1e-9)


def test_compensating_fraction_rejects_infinite(steady):
    with pytest.raises(WelfareError):
        compensating_fraction(-math.inf, -100.0, steady)


def test_compensating_fraction_saturates(steady):
    assert compensating_fraction(-100.0, 1e7, steady) == math.inf


# -- optimizer on synthetic objectives --------------------------------------

class FakeEvaluator:
    def __init__(self, f):
        self.f = f

    def __call__(self, bond, cbdc):
        return SimpleNamespace(value=self.f(cbdc.theta_pi, cbdc.theta_y, cbdc.rho))


def _optimize(f, **kw):
    cal = calibrated()
    return optimize_rule(cal, MONO, "cbdc", evaluator=FakeEvaluator(f), **kw)


def test_boundary_maximum_is_hit_exactly():
    res = _optimize(lambda tp, ty, r: -(tp - 5) ** 2 - (ty + 1) ** 2 - (r + 0.2) ** 2)
    assert res.rule.as_tuple() == (4.0, 0.0, 0.0)
    assert res.boundary == (True, True, True)


def test_interior_maximum():
    res = _optimize(lambda tp, ty, r: -(tp - 2.3) ** 2 - 2 * (ty - 1.1) ** 2 - (r - 0.4) ** 2)
    assert np.allclose(res.rule.as_tuple(), (2.3, 1.1, 0.4), atol=1e-3)
    assert res.boundary == (False, False, False)


def test_indeterminate_region_never_returned():
    def f(tp, ty, r):
        if ty > 2.0:
            return -math.inf
        return ty - 0.1 * (tp - 1) ** 2 - r
    res = _optimize(f)
    assert math.isfinite(res.welfare)
    assert res.rule.theta_y <= 2.0
    assert res.indeterminate > 0
    assert res.welfare >= max(v for _, v in res.history if math.isfinite(v))


def test_ties_break_lexicographically():
    res = _optimize(lambda tp, ty, r: 1.0)
    assert res.rule.as_tuple() == (0.0, 0.0, 0.0)


def test_all_indeterminate():
    with pytest.raises(WelfareError):
        _optimize(lambda tp, ty, r: -math.inf)


def test_result_respects_bounds():
    res = _optimize(lambda tp, ty, r: tp * ty + r)
    lo, hi = np.array(BOUNDS).T
    x = np.array(res.rule.as_tuple())
    assert np.all(x >= lo) and np.all(x <= hi)
    assert all(np.all(np.array(k) >= lo) and np.all(np.array(k) <= hi) for k, _ in res.history)


def test_bad_rule_name():
    with pytest.raises(ValueError):
        optimize_rule(calibrated(), MONO, "fiscal", evaluator=FakeEvaluator(lambda *a: 0.0))
