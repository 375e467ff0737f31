import math
import time
from dataclasses import replace

import numpy as np
import pytest

from cbdc_nk.config import Calibration, CalibrationTargets
from cbdc_nk.model import NAMES
from cbdc_nk.steady_state import (SteadyStateError, analytic_steady_state, calibrate_internal_parameters,
                                  closed_form_calibration, deposit_spread, solve_steady_state,
                                  target_errors)

from conftest import COMP, MONO, calibrated

# independent oracles, frozen
PHI = 8.434019e-4
CHI_N_MONO = 0.0078954546


def test_targets(steady):
    ss = steady
    assert abs(ss["l"] - 1 / 3) < 1e-8
    assert abs(ss["z"] / ss["y"] - 1.04) < 1e-8
    assert abs(ss["zeta"] - 0.1945) < 1e-8
    assert abs(ss["k_b"] / ss["k"] - 0.3) < 1e-8
    assert abs(ss["chi_r"] - 0.00497) < 1e-8
    assert abs(ss["R_bond"] - 1 / 0.99) < 1e-12
    rule = (ss["omega_cost"] + ss["zeta"] * ss.calibration.mu_r) * ss.calibration.lambda_bar
    assert abs(ss.calibration.mu_m - rule) < 1e-6


def test_target_errors_all_small(cal):
    errs = target_errors(cal, CalibrationTargets(), MONO)
    assert max(abs(v) for v in errs.values()) < 1e-10


def test_closed_form_matches_outer_solve(cal):
    direct = closed_form_calibration(Calibration(), CalibrationTargets(), MONO)
    for name in ("v", "xi", "phi", "e_bank", "mu_m", "b_bar", "R_r_bar"):
        assert getattr(direct, name) == pytest.approx(getattr(cal, name), rel=1e-9), name


def test_reserve_parameter_oracle(cal):
    # phi = chi_r * zeta^varphi / (varphi - 1)
    assert cal.phi == pytest.approx(0.00497 * 0.1945 ** 1.503 / 0.503, rel=1e-12)
    assert cal.phi == pytest.approx(PHI, rel=1e-6)
    assert cal.R_r_bar == pytest.approx((1 - 0.00497) / 0.99, rel=1e-14)


def test_deposit_spread_oracle(cal, steady):
    """Solve chi_n (1 - 1/elasticity) = mc by bisection, written from the household block."""
    lam, eps, psi = cal.lambda_bar, cal.eps_bar, cal.psi
    chi_m = 1 - 1 / cal.R_bar
    mc = cal.varphi * cal.phi * 0.1945 ** (1 - cal.varphi)

    def gap(x):
        a = (1 - eps) / eps
        chi_z = chi_m * x / (lam ** (1 / eps) * x ** a + chi_m ** a) ** (1 / a)
        s = lam ** (1 / eps) * (chi_z / chi_m) ** a
        elas = (1 - s) / psi + s / eps
        return x * (1 - 1 / elas) - mc

    lo, hi = mc, 1.0
    assert gap(lo) < 0 < gap(hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if gap(mid) < 0 else (lo, mid)
    x = 0.5 * (lo + hi)
    assert x == pytest.approx(CHI_N_MONO, rel=1e-8)
    assert steady["chi_n"] == pytest.approx(x, rel=1e-10)
    assert deposit_spread(chi_m, mc, lam, eps, psi, True)[0] == pytest.approx(x, rel=1e-10)


def test_competitive_spread_equals_cost():
    ss = solve_steady_state(calibrated(), COMP)
    cal = ss.calibration
    assert ss["chi_n"] == pytest.approx(cal.varphi * cal.phi * ss["zeta"] ** (1 - cal.varphi), rel=1e-12)
    assert ss["chi_n"] < CHI_N_MONO


@pytest.mark.parametrize("scale", [0.8, 1.2])
def test_calibration_guess_independence(cal, scale):
    start = replace(Calibration(), v=0.08 * scale, xi=9.46 * scale, phi=0.0008 * scale,
                    e_bank=1.38 * scale, mu_m=0.002 * scale, b_bar=0.25 * scale)
    other = calibrate_internal_parameters(start, CalibrationTargets(), MONO)
    a = solve_steady_state(cal, MONO).vector
    b = solve_steady_state(other, MONO).vector
    assert np.max(np.abs(a - b)) < 1e-8


@pytest.mark.parametrize("scale", [0.97, 1.03])
def test_newton_recovers_from_perturbed_guess(steady, scale):
    keep = {"lambda_pref", "eps_pref", "a_prod", "g_spend", "eta_goods", "I_net", "pi", "pi_reset",
            "R_bond", "R_cbdc", "R_reserve", "R_deposit", "q", "v_p"}
    guess = {k: v if k in keep else v * scale for k, v in steady.values.items()}
    other = solve_steady_state(steady.calibration, MONO, guess=guess)
    a, b = steady.vector, other.vector
    assert np.max(np.abs(a - b) / np.maximum(1, np.abs(a))) < 1e-9


def test_higher_lambda_lowers_markup():
    """More useful CBDC makes deposit demand more elastic, so the spread over cost falls."""
    spreads = []
    for lam in (1.0, 1.1):
        cal = replace(calibrated(), lambda_bar=lam)
        ss = analytic_steady_state(cal, MONO)
        mc = cal.varphi * cal.phi * ss["zeta"] ** (1 - cal.varphi)
        spreads.append(ss["chi_n"] - mc)
    assert spreads[1] < spreads[0]


def test_zero_lambda_has_no_cbdc():
    cal = replace(calibrated(), lambda_bar=0.0, mu_m=0.0)
    ss = solve_steady_state(cal, COMP)
    assert ss["m"] == 0.0
    assert ss["n"] > 0
    assert ss["chi_z"] == pytest.approx(ss["chi_n"], rel=1e-14)


def test_calibration_failure_names_worst_error():
    bad = CalibrationTargets(reserve_spread_target=0.5)
    with pytest.raises(SteadyStateError, match="worst target error"):
        calibrate_internal_parameters(Calibration(), bad, MONO)


def test_warm_runtime(cal):
    solve_steady_state(cal, MONO)
    t0 = time.perf_counter()
    calibrate_internal_parameters(Calibration(), CalibrationTargets(), MONO)
    ss = solve_steady_state(cal, MONO)
    assert time.perf_counter() - t0 < 1.0
    assert set(ss.values) == set(NAMES)
    assert math.isfinite(ss["W_welfare"])
