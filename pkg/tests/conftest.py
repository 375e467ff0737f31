import functools
from dataclasses import replace

import numpy as np
import pytest

from cbdc_nk.config import Calibration, CalibrationTargets, ModelVariant
from cbdc_nk.pipeline import solve_model
from cbdc_nk.steady_state import calibrate_internal_parameters, solve_steady_state

MONO = ModelVariant("monopolist", "taylor_rule")
MONO_FIXED = ModelVariant("monopolist", "fixed_gross_rate_one")
COMP = ModelVariant("competitive", "taylor_rule")
COMP_FIXED = ModelVariant("competitive", "fixed_gross_rate_one")


@functools.lru_cache(maxsize=None)
def calibrated(banking="monopolist", lambda_bar=1.0, preset="none"):
    base = replace(Calibration(), lambda_bar=lambda_bar).with_shocks(preset)
    return calibrate_internal_parameters(base, CalibrationTargets(), ModelVariant(banking, "taylor_rule"))


@functools.lru_cache(maxsize=None)
def _solution(banking, regime, preset, order):
    cal = calibrated(banking, 1.0, preset)
    return solve_model(cal, ModelVariant(banking, regime), order=order)


def solution(banking="monopolist", regime="taylor_rule", preset="welfare", order=2):
    return _solution(banking, regime, preset, order)


@pytest.fixture(scope="session")
def cal():
    return calibrated()


@pytest.fixture(scope="session")
def steady(cal):
    return solve_steady_state(cal, MONO)


@pytest.fixture(scope="session")
def mono():
    return solution()


@pytest.fixture(scope="session")
def comp():
    return solution("competitive")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: (int(s.split()[1].rstrip(":")), s)):
            terminalreporter.write_line(line)
