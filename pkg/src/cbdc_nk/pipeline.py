"""Steady state -> derivatives -> perturbation solution in one call."""

from __future__ import annotations

from dataclasses import dataclass

from .config import SHOCKS, Calibration, ModelVariant
from .perturbation import (Derivatives, FirstOrderSolution, SecondOrderSolution, differentiate,
                           shock_covariance, solve_first_order, solve_second_order)
from .steady_state import SteadyState, solve_steady_state


@dataclass(frozen=True)
class ModelSolution:
    steady: SteadyState
    derivatives: Derivatives
    first: FirstOrderSolution
    second: SecondOrderSolution | None

    @property
    def best(self):
        return self.second if self.second is not None else self.first


def solve_model(cal: Calibration, variant: ModelVariant, order: int = 2,
                steady: SteadyState | None = None) -> ModelSolution:
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    ss = steady or solve_steady_state(cal, variant)
    d = differentiate(ss.system, ss)
    fo = solve_first_order(d)
    so = solve_second_order(d, fo, shock_covariance(cal.sigma_shocks, SHOCKS)) if order == 2 else None
    return ModelSolution(ss, d, fo, so)
