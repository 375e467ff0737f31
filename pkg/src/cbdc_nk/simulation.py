"""Impulse responses and stochastic simulation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SHOCKS
from .model import IDX, LOG_VARIABLES, NAMES, RATE_VARIABLES
from .perturbation import FirstOrderSolution, SecondOrderSolution, simulate_pruned

DEFAULT_HORIZON = 40
DERIVED = ("m_n_ratio",)


def deviation_units(name: str) -> str:
    if name in RATE_VARIABLES:
        return "bp"
    return "pct"


def to_deviation(levels: np.ndarray, steady: np.ndarray, I_ss: float | None = None) -> dict[str, np.ndarray]:
    """Percent deviations (basis points for rates and spreads) for every variable."""
    out = {}
    levels = np.atleast_2d(levels)
    for name in NAMES:
        i = IDX[name]
        x, s = levels[:, i], steady[i]
        if name in RATE_VARIABLES:
            out[name] = 1e4 * (x - s)
        elif name in LOG_VARIABLES:
            out[name] = 100 * np.expm1(x - s)
        elif name == "I_net":
            # zero in steady state: report relative to steady-state gross investment
            out[name] = 100 * (x - s) / (I_ss if I_ss else steady[IDX["I_gross"]])
        else:
            out[name] = 100 * (x / s - 1) if s != 0 else np.zeros_like(x)
    ratio = levels[:, IDX["m"]] / levels[:, IDX["n"]]
    ratio_ss = steady[IDX["m"]] / steady[IDX["n"]]
    out["m_n_ratio"] = 100 * (ratio / ratio_ss - 1) if ratio_ss else np.zeros(len(ratio))
    return out


@dataclass(frozen=True)
class IrfResult:
    shock: str
    size: float
    horizon: int
    paths: dict[str, np.ndarray]
    label: str = ""
    order: int = 1

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(self.paths)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.paths[name]

    def impact(self, name: str) -> float:
        return float(self.paths[name][0])


def _first(sol):
    return sol.first if isinstance(sol, SecondOrderSolution) else sol


def compute_irf(sol: FirstOrderSolution | SecondOrderSolution, shock: str, size: float,
                horizon: int = DEFAULT_HORIZON, label: str = "", second_order: bool = False) -> IrfResult:
    """Response to a one-time innovation of ``size`` (in logs) at t = 0.

    Row t of every path is period t after the innovation, so each path has
    ``horizon + 1`` entries.  Second-order responses are the pruned path with
    the shock minus the pruned path without it, both started at the
    deterministic steady state.
    """
    if shock not in SHOCKS:
        raise ValueError(f"unknown shock {shock!r}; expected one of {SHOCKS}")
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if not math.isfinite(size):
        raise ValueError("shock size must be finite")
    fo = _first(sol)
    u = np.zeros((horizon + 1, len(SHOCKS)))
    u[0, SHOCKS.index(shock)] = size
    if second_order and isinstance(sol, SecondOrderSolution):
        levels = fo.steady + simulate_pruned(sol, u) - simulate_pruned(sol, np.zeros_like(u))
        order = 2
    else:
        levels = simulate_pruned(fo, u)
        order = 1
    return IrfResult(shock, float(size), horizon, to_deviation(levels, fo.steady), label, order)


@dataclass(frozen=True)
class IrfOverlay:
    shock: str
    horizon: int
    labels: tuple[str, ...]
    runs: tuple[IrfResult, ...]

    def table(self, variables=None) -> tuple[list[str], np.ndarray]:
        """Columns ``<variable>[<label>]`` for t = 0..horizon."""
        variables = variables or self.runs[0].variables
        cols, data = [], []
        for v in variables:
            for lab, run in zip(self.labels, self.runs):
                cols.append(f"{v}[{lab}]")
                data.append(run.paths[v])
        return cols, np.column_stack(data) if data else np.zeros((self.horizon + 1, 0))

    def difference(self, a: int = 0, b: int = 1) -> dict[str, np.ndarray]:
        ra, rb = self.runs[a], self.runs[b]
        return {v: ra.paths[v] - rb.paths[v] for v in ra.variables}


def overlay_irfs(runs: list[IrfResult]) -> IrfOverlay:
    if not runs:
        raise ValueError("nothing to overlay")
    first = runs[0]
    for r in runs[1:]:
        if r.shock != first.shock or r.horizon != first.horizon:
            raise ValueError(f"cannot overlay {r.shock}/{r.horizon} with {first.shock}/{first.horizon}")
    labels = []
    for i, r in enumerate(runs):
        lab = r.label or f"run{i}"
        while lab in labels:
            lab += "'"
        labels.append(lab)
    return IrfOverlay(first.shock, first.horizon, tuple(labels), tuple(runs))


@dataclass(frozen=True)
class SimulationResult:
    levels: np.ndarray
    innovations: np.ndarray
    seed: int

    def series(self, name: str) -> np.ndarray:
        return self.levels[:, IDX[name]]


def simulate(sol: SecondOrderSolution | FirstOrderSolution, T: int, seed: int,
             shock_sd=None) -> SimulationResult:
    """Pruned simulation from the deterministic steady state with N(0, sd^2) innovations."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if shock_sd is None:
        if not isinstance(sol, SecondOrderSolution):
            raise ValueError("shock_sd is required for a first-order solution")
        shock_sd = np.sqrt(np.diag(sol.shock_cov))
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((T, len(SHOCKS))) * np.asarray(shock_sd, float)
    return SimulationResult(simulate_pruned(sol, u), u, seed)
