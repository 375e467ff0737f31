"""Deterministic steady state and internal calibration.

The steady state is built semi-analytically (two scalar root-finds: the
deposit spread and hours) and then polished with Newton's method on the full
equation system so that ``F(ss, ss, ss, 0)`` vanishes to machine precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .config import AR1_SHOCKS, Calibration, CalibrationTargets, ModelVariant
from .model import EQUATIONS, EXOGENOUS, NAMES, EquationSystem, build_equation_system, utility_flow

# Parameters re-derived from the calibration targets.
CALIBRATED = ("v", "xi", "phi", "e_bank", "mu_m", "b_bar", "R_r_bar")


class SteadyStateError(RuntimeError):
    """Steady state does not exist, is outside the admissible region, or was not found."""


@dataclass(frozen=True)
class SteadyState:
    values: dict[str, float]
    calibration: Calibration
    variant: ModelVariant
    system: EquationSystem

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.values[n] for n in NAMES])

    def max_residual(self) -> float:
        return float(np.max(np.abs(self.system.steady_residual(self.vector))))


def liquidity_ratio(chi_r: float, phi: float, varphi: float) -> float:
    return (chi_r / (phi * (varphi - 1))) ** (-1 / varphi)


def average_cost_of_liquidity(chi_m, chi_n, lam, eps):
    if lam == 0:
        return chi_n
    a = (1 - eps) / eps
    return chi_m * chi_n / (lam ** (1 / eps) * chi_n ** a + chi_m ** a) ** (eps / (1 - eps))


def cbdc_weight(chi_z, chi_m, lam, eps):
    return lam ** (1 / eps) * (chi_z / chi_m) ** ((1 - eps) / eps)


def deposit_spread(chi_m: float, marginal_cost: float, lam: float, eps: float, psi: float,
                   monopolist: bool = True) -> tuple[float, float, float]:
    """Steady-state deposit spread, average cost of liquidity and CBDC weight.

    Under monopolist banks this is the scalar root of the deposit pricing
    condition; competitive banks price at marginal cost.
    """
    def parts(chi_n):
        chi_z = average_cost_of_liquidity(chi_m, chi_n, lam, eps)
        return chi_z, cbdc_weight(chi_z, chi_m, lam, eps)

    if not monopolist:
        chi_n = marginal_cost
        return (chi_n, *parts(chi_n))

    def pricing(chi_n):
        _, s = parts(chi_n)
        elasticity = (1 - s) / psi + s / eps
        return chi_n - chi_n / elasticity - marginal_cost

    lo, hi = marginal_cost, 2 * max(marginal_cost, chi_m)
    while pricing(hi) <= 0:
        hi *= 2
        if hi > 1e3:
            raise SteadyStateError("deposit pricing condition has no root: demand too inelastic")
    chi_n = optimize.brentq(pricing, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps)
    return (chi_n, *parts(chi_n))


def _omega_index(chi_z, cal: Calibration) -> float:
    v, psi, sigma = cal.v, cal.psi, cal.sigma
    return (1 - v) ** ((1 - sigma) / (1 - psi)) * (
        1 + (v / (1 - v)) ** (1 / psi) * chi_z ** (1 - 1 / psi)) ** ((psi - sigma) / (1 - psi))


def _prices_and_spreads(cal: Calibration, variant: ModelVariant) -> dict:
    R = cal.R_bar
    out = {"R_bond": R, "R_reserve": cal.R_r_bar, "R_cbdc": cal.R_m_bar}
    out["chi_r"] = 1 - cal.R_r_bar / R
    out["chi_m"] = 1 - cal.R_m_bar / R
    if out["chi_r"] <= 0 or out["chi_m"] <= 0:
        raise SteadyStateError(f"non-positive spread: chi_r={out['chi_r']}, chi_m={out['chi_m']}")
    out["zeta"] = liquidity_ratio(out["chi_r"], cal.phi, cal.varphi)
    out["omega_cost"] = cal.phi * out["zeta"] ** (1 - cal.varphi)
    chi_n, chi_z, s = deposit_spread(out["chi_m"], cal.varphi * out["omega_cost"], cal.lambda_bar,
                                     cal.eps_bar, cal.psi, variant.banking == "monopolist")
    out.update(chi_n=chi_n, chi_z=chi_z, s_weight=s, R_deposit=R * (1 - chi_n))
    # Calvo block at trend inflation pi_bar
    pi, theta, eta, beta = cal.pi_bar, cal.theta_calvo, cal.eta_bar, cal.beta
    e = 1 - 1 / eta
    pi_reset = ((pi ** e - theta) / (1 - theta)) ** (1 / e)
    v_p = (1 - theta) * (pi / pi_reset) ** (1 / eta) / (1 - theta * pi ** (1 / eta))
    if not (v_p > 0 and 1 - theta * beta * pi ** (1 / eta) > 0):
        raise SteadyStateError(f"trend inflation {pi} too high for Calvo block")
    gamma = ((1 - eta) * pi_reset / pi * (1 - theta * beta * pi ** (1 / eta))
             / (1 - theta * beta * pi ** (1 / eta - 1)))
    R_k = 1 / beta - 1 + cal.delta
    k_l = (cal.a_bar * cal.alpha * gamma / R_k) ** (1 / (1 - cal.alpha))
    out.update(pi=pi, pi_reset=pi_reset, v_p=v_p, gamma=gamma, R_k=R_k, q=1.0, I_net=0.0,
               k_l=k_l, w=cal.a_bar * (1 - cal.alpha) * gamma * k_l ** cal.alpha)
    # liquidity composition per unit of z
    lam, eps = cal.lambda_bar, cal.eps_bar
    out["m_z"] = (lam * chi_z / out["chi_m"]) ** (1 / eps) if lam > 0 else 0.0
    out["n_z"] = (chi_z / chi_n) ** (1 / eps)
    out["cost_z"] = out["m_z"] * cal.mu_m + out["n_z"] * (out["omega_cost"] + out["zeta"] * cal.mu_r)
    return out


def _complete(cal: Calibration, p: dict, l: float, c: float) -> dict[str, float]:
    """Fill every variable given prices, hours and consumption."""
    x = {k: p[k] for k in ("R_bond", "R_reserve", "R_cbdc", "R_deposit", "chi_r", "chi_m",
                           "chi_n", "chi_z", "s_weight", "zeta", "omega_cost", "pi", "pi_reset",
                           "v_p", "gamma", "R_k", "q", "I_net", "w")}
    k = p["k_l"] * l
    x.update(c=c, l=l, k=k)
    x["y_m"] = cal.a_bar * k ** cal.alpha * l ** (1 - cal.alpha)
    x["y"] = x["y_m"] / p["v_p"]
    x["z"] = c * (cal.v / (1 - cal.v) / p["chi_z"]) ** (1 / cal.psi)
    x["m"] = p["m_z"] * x["z"]
    x["n"] = p["n_z"] * x["z"]
    x["r_reserves"] = p["zeta"] * x["n"]
    x["k_b"] = x["n"] + cal.e_bank - x["r_reserves"]
    x["k_h"] = k - x["k_b"]
    x["I_gross"] = cal.delta * k
    x["b"] = cal.b_bar
    x["Omega"] = _omega_index(p["chi_z"], cal)
    uc = c ** (-cal.sigma) * x["Omega"]
    pi, theta, beta, eta = p["pi"], cal.theta_calvo, cal.beta, cal.eta_bar
    x["x2"] = uc * x["y"] / (1 - theta * beta * pi ** (1 / eta - 1))
    x["x1"] = uc * x["y"] * p["gamma"] / (1 - theta * beta * pi ** (1 / eta))
    g = cal.g_bar
    x["tau"] = (g + (x["b"] * x["R_bond"] + x["r_reserves"] * x["R_reserve"]
                     + x["m"] * x["R_cbdc"]) / pi
                + x["r_reserves"] * cal.mu_r + x["m"] * cal.mu_m - x["b"] - x["r_reserves"] - x["m"])
    d_bank = (x["k_b"] * x["R_k"] + x["r_reserves"] * x["R_reserve"] / pi + (1 - cal.delta) * x["k_b"]
              - x["n"] * x["R_deposit"] / pi - cal.e_bank - x["n"] * x["omega_cost"])
    d_retail = x["y"] - p["gamma"] * x["y_m"]
    d_intermediate = p["gamma"] * x["y_m"] - k * x["R_k"] - x["w"] * l
    x["d_profit"] = d_bank + d_retail + d_intermediate
    x["W_welfare"] = utility_flow(c, x["z"], l, cal) / (1 - beta)
    for shock, var in EXOGENOUS.items():
        bar = {"lambda": cal.lambda_bar, "eps": cal.eps_bar, "a": cal.a_bar,
               "g": cal.g_bar, "eta": cal.eta_bar}[shock]
        x[var] = math.log(bar) if bar > 0 else -math.inf
    return x


def analytic_steady_state(cal: Calibration, variant: ModelVariant) -> dict[str, float]:
    """Steady-state levels for given parameters (no re-calibration)."""
    p = _prices_and_spreads(cal, variant)
    a, alpha, delta, g = cal.a_bar, cal.alpha, cal.delta, cal.g_bar
    kappa = (cal.v / (1 - cal.v) / p["chi_z"]) ** (1 / cal.psi)
    net_per_l = a * p["k_l"] ** alpha / p["v_p"] - delta * p["k_l"]
    if net_per_l <= 0:
        raise SteadyStateError("output net of depreciation is non-positive")
    omega = _omega_index(p["chi_z"], cal)

    def consumption(l):
        return (l * net_per_l - g) / (1 + kappa * p["cost_z"])

    def labor_gap(l):
        return cal.xi * l ** cal.iota - p["w"] * consumption(l) ** (-cal.sigma) * omega

    l_lo = g / net_per_l * (1 + 1e-12) + 1e-300
    l_hi = max(2.0 * l_lo, 1.0)
    while labor_gap(l_hi) < 0:
        l_hi *= 2
        if l_hi > 1e8:
            raise SteadyStateError("no hours level clears the labor market")
    l = optimize.brentq(labor_gap, l_lo, l_hi, xtol=1e-16, rtol=4 * np.finfo(float).eps)
    return _complete(cal, p, l, consumption(l))


def closed_form_calibration(cal: Calibration, targets: CalibrationTargets,
                            variant: ModelVariant = ModelVariant()) -> Calibration:
    """Invert the targets directly: each calibrated parameter has an explicit formula."""
    chi_r = targets.reserve_spread_target
    zeta = targets.liquidity_ratio_target
    phi = chi_r * zeta ** cal.varphi / (cal.varphi - 1)
    omega = phi * zeta ** (1 - cal.varphi)
    kw = dict(phi=phi, R_r_bar=cal.R_bar * (1 - chi_r))
    if targets.cbdc_cost_rule:
        kw["mu_m"] = (omega + zeta * cal.mu_r) * cal.lambda_bar
    cal = replace(cal, **kw)
    p = _prices_and_spreads(cal, variant)
    l = targets.labor_target
    k = p["k_l"] * l
    y = cal.a_bar * k ** cal.alpha * l ** (1 - cal.alpha) / p["v_p"]
    z = targets.liquidity_output_ratio * y
    m, n = p["m_z"] * z, p["n_z"] * z
    c = y - cal.g_bar - cal.delta * k - z * p["cost_z"]
    if c <= 0:
        raise SteadyStateError(f"targets imply non-positive consumption {c}")
    odds = p["chi_z"] * (z / c) ** cal.psi
    v = odds / (1 + odds)
    cal = replace(cal, v=v)
    omega_idx = _omega_index(p["chi_z"], cal)
    xi = p["w"] * c ** (-cal.sigma) * omega_idx / l ** cal.iota
    e_bank = targets.bank_capital_share_target * k + zeta * n - n
    return replace(cal, xi=xi, e_bank=e_bank, b_bar=targets.bond_output_ratio * y)


def target_errors(cal: Calibration, targets: CalibrationTargets,
                  variant: ModelVariant = ModelVariant(), ss: dict | None = None) -> dict[str, float]:
    x = analytic_steady_state(cal, variant) if ss is None else ss
    out = {
        "labor": x["l"] - targets.labor_target,
        "liquidity_output": x["z"] / x["y"] - targets.liquidity_output_ratio,
        "liquidity_ratio": x["zeta"] - targets.liquidity_ratio_target,
        "bank_capital_share": x["k_b"] / x["k"] - targets.bank_capital_share_target,
        "reserve_spread": x["chi_r"] - targets.reserve_spread_target,
        "bond_output": x["b"] / x["y"] - targets.bond_output_ratio,
    }
    if targets.cbdc_cost_rule:
        out["cbdc_cost"] = cal.mu_m - (x["omega_cost"] + x["zeta"] * cal.mu_r) * cal.lambda_bar
    else:
        out["cbdc_cost"] = 0.0
    return out


# Unknowns are transformed so the outer solver cannot leave the admissible region.
_TRANSFORMS = {
    "v": (lambda x: math.log(x / (1 - x)), lambda t: 1 / (1 + math.exp(-t))),
    "xi": (math.log, math.exp),
    "phi": (math.log, math.exp),
    "e_bank": (lambda x: x, lambda t: t),
    "mu_m": (lambda x: x, lambda t: t),
    "b_bar": (lambda x: x, lambda t: t),
    "R_r_bar": (lambda x: x, lambda t: t),
}


def calibrate_internal_parameters(cal: Calibration, targets: CalibrationTargets,
                                  variant: ModelVariant = ModelVariant(),
                                  tol: float = 1e-13) -> Calibration:
    """Solve for (v, xi, phi, e_bank, mu_m, b_bar, R_r_bar) so that every target holds.

    Outer hybrid-Newton iteration on the calibrated parameters; each function
    evaluation solves the steady state for the current parameters.  The values
    in ``cal`` are the starting point.
    """
    names = CALIBRATED
    fwd = [_TRANSFORMS[n][0] for n in names]
    inv = [_TRANSFORMS[n][1] for n in names]
    t0 = np.array([f(getattr(cal, n)) for f, n in zip(fwd, names)])
    scale = np.array([1.0, 1.0, 1.0, 1.0, 1e-3, 1.0, 1e-2])

    def candidate(t):
        return replace(cal, **{n: f(ti) for n, f, ti in zip(names, inv, t)})

    def errors(t):
        try:
            trial = candidate(t)
            e = target_errors(trial, targets, variant)
        except (SteadyStateError, ValueError, OverflowError, ZeroDivisionError):
            return np.full(len(names), 1e3)
        return np.array([e["labor"], e["liquidity_output"], e["liquidity_ratio"],
                         e["bank_capital_share"], e["reserve_spread"] * 100,
                         e["bond_output"], e["cbdc_cost"] * 100])

    sol = optimize.root(lambda s: errors(t0 + s * scale), np.zeros(len(names)), method="hybr",
                        options={"xtol": 1e-14, "maxfev": 2000})
    t = t0 + sol.x * scale
    worst = float(np.max(np.abs(errors(t))))
    if worst > tol * 100:
        raise SteadyStateError(
            f"calibration did not converge: worst target error {worst:.3e}, "
            f"last iterate {dict(zip(names, (f(ti) for f, ti in zip(inv, t))))}")
    return candidate(t)


def _newton(fun, jac, x0, tol_step=1e-12, tol_res=1e-10, max_iter=60):
    x = np.array(x0, dtype=float)
    if np.max(np.abs(fun(x))) < 1e-2 * tol_res:
        return x
    for _ in range(max_iter):
        r = fun(x)
        step = np.linalg.solve(jac(x), -r)
        # backtrack on the residual norm
        t, base = 1.0, np.linalg.norm(r)
        while t > 1e-6:
            trial = x + t * step
            rt = fun(trial)
            if np.all(np.isfinite(rt)) and np.linalg.norm(rt) < max(base, 1e-300) * (1 - 1e-4 * t) + 1e-15:
                break
            t *= 0.5
        x = x + t * step
        if np.linalg.norm(t * step) <= tol_step * (1 + np.linalg.norm(x)) and np.max(np.abs(fun(x))) < tol_res:
            return x
    r = fun(x)
    raise SteadyStateError(f"Newton did not converge: max residual {np.max(np.abs(r)):.3e}")


POSITIVE = ("c", "l", "z", "n", "k", "y", "y_m", "zeta", "q", "x1", "x2", "w", "R_bond",
            "R_deposit", "R_reserve", "R_cbdc", "v_p", "Omega")


def solve_steady_state(cal: Calibration, variant: ModelVariant,
                       guess: dict[str, float] | np.ndarray | None = None) -> SteadyState:
    """Deterministic steady state with ``max |F(ss, ss, ss, 0)| < 1e-10``."""
    levels = analytic_steady_state(cal, variant)
    system = build_equation_system(cal, variant, y_ss=levels["y"], I_ss=levels["I_gross"])
    if cal.lambda_bar == 0:
        # no CBDC demand; log lambda is -inf so its own law of motion is left out of the check
        x = system.vector(levels)
        r = np.array(system.steady_residual(x))
        r[EQUATIONS.index("lambda_process")] = 0.0
        if not np.max(np.abs(r)) < 1e-10:
            raise SteadyStateError(f"lambda_bar = 0 steady state residual {np.nanmax(np.abs(r)):.3e}")
        return SteadyState(levels, cal, variant, system)
    if guess is None:
        x0 = system.vector(levels)
    elif isinstance(guess, dict):
        x0 = system.vector(guess)
    else:
        x0 = np.asarray(guess, dtype=float)

    def fun(x):
        return system.steady_residual(x)

    def jac(x):
        J = system.jacobian(system.stacked_point(x, x, x))
        n = len(x)
        return J[:, :n] + J[:, n:2 * n] + J[:, 2 * n:3 * n]

    x = _newton(fun, jac, x0)
    values = dict(zip(NAMES, map(float, x)))
    bad = [name for name in POSITIVE if not values[name] > 0]
    if bad or values["m"] < 0:
        raise SteadyStateError(f"steady state outside admissible region: {bad or ['m']}")
    return SteadyState(values, cal, variant, system)


def resolve_calibration(cal: Calibration, variant: ModelVariant,
                        targets: CalibrationTargets | None = None) -> Calibration:
    """Calibration with internally calibrated parameters hitting ``targets``."""
    return calibrate_internal_parameters(cal, targets or CalibrationTargets(), variant)


def specification(banking: str = "monopolist", lambda_bar: float = 1.0,
                  cbdc_rate_regime: str = "taylor_rule",
                  base: Calibration | None = None,
                  targets: CalibrationTargets | None = None) -> tuple[Calibration, ModelVariant]:
    """One of the model specifications compared in the welfare experiments."""
    base = base or Calibration()
    variant = ModelVariant(banking=banking, cbdc_rate_regime=cbdc_rate_regime)
    cal = replace(base, lambda_bar=lambda_bar)
    return resolve_calibration(cal, variant, targets), variant


__all__ = [
    "AR1_SHOCKS", "CALIBRATED", "SteadyState", "SteadyStateError", "analytic_steady_state",
    "calibrate_internal_parameters", "closed_form_calibration", "deposit_spread",
    "resolve_calibration", "solve_steady_state", "specification", "target_errors",
]
