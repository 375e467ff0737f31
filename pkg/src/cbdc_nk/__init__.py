"""New Keynesian model with CBDC and deposit-issuing banks: steady state,
perturbation solutions, impulse responses and welfare-optimal Taylor rules."""

from .config import (Calibration, CalibrationTargets, ConfigError, ModelVariant, TaylorCoefficients,
                     baseline_calibration, load_config)
from .model import EquationSystem, build_equation_system, utility_flow
from .perturbation import (BlanchardKahnError, differentiate, solve_first_order, solve_second_order,
                           step_pruned)
from .pipeline import solve_model
from .simulation import compute_irf, overlay_irfs, simulate
from .steady_state import calibrate_internal_parameters, solve_steady_state
from .welfare import (compensating_fraction, conditional_welfare, optimize_rule,
                      run_two_step_experiment)

__version__ = "0.1.0"

__all__ = [
    "BlanchardKahnError", "Calibration", "CalibrationTargets", "ConfigError", "EquationSystem",
    "ModelVariant", "TaylorCoefficients", "baseline_calibration", "build_equation_system",
    "calibrate_internal_parameters", "compensating_fraction", "compute_irf", "conditional_welfare",
    "differentiate", "load_config", "optimize_rule", "overlay_irfs", "run_two_step_experiment",
    "simulate", "solve_first_order", "solve_model", "solve_second_order", "solve_steady_state",
    "step_pruned", "utility_flow",
]
