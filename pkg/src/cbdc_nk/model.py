"""Equilibrium conditions of the New Keynesian model with CBDC and deposit-issuing banks.

Timing convention: every variable is dated by the period in which it is
decided.  Stocks carried into the next period (capital, CBDC, deposits,
bonds, reserves) and rates set today for tomorrow (bond, CBDC, deposit and
reserve rates, and the associated spreads) are therefore time-``t``
variables here, and production at ``t`` uses the capital stock ``k`` of
``t-1``.  The five exogenous processes are stored in logs.

The system is written as ``F(x_prev, x_curr, x_next, innovations) = 0`` and
evaluated with JAX so that first and second derivatives are exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial

import jax
import jax.numpy as jnp
import numpy as np

from .config import AR1_SHOCKS, SHOCKS, Calibration, ModelVariant

jax.config.update("jax_enable_x64", True)

# (name, is_state, description).  A state is any variable whose lag enters F.
VARIABLES = (
    ("c", False, "consumption"),
    ("l", False, "hours worked"),
    ("z", False, "liquidity services"),
    ("m", True, "real CBDC holdings"),
    ("n", True, "real deposits"),
    ("b", True, "real government bonds"),
    ("k", True, "capital stock carried into next period"),
    ("k_h", False, "household capital"),
    ("k_b", True, "bank capital"),
    ("r_reserves", True, "bank reserves"),
    ("zeta", False, "bank liquidity ratio r/n"),
    ("q", True, "price of capital"),
    ("I_gross", False, "gross investment"),
    ("I_net", True, "net investment"),
    ("y", False, "final output"),
    ("y_m", False, "intermediate output"),
    ("pi", False, "gross inflation"),
    ("pi_reset", False, "reset-price inflation"),
    ("v_p", True, "price dispersion"),
    ("x1", False, "reset-price numerator recursion"),
    ("x2", False, "reset-price denominator recursion"),
    ("gamma", False, "real marginal cost of retailers"),
    ("w", False, "real wage"),
    ("d_profit", False, "total profits paid to households"),
    ("tau", False, "lump-sum tax"),
    ("R_bond", True, "gross bond rate"),
    ("R_cbdc", True, "gross CBDC rate"),
    ("R_reserve", True, "gross reserve rate"),
    ("R_deposit", True, "gross deposit rate"),
    ("R_k", False, "return on capital"),
    ("chi_m", False, "CBDC spread"),
    ("chi_n", False, "deposit spread"),
    ("chi_r", False, "reserve spread"),
    ("chi_z", False, "average cost of liquidity"),
    ("Omega", False, "liquidity term in marginal utility"),
    ("s_weight", False, "CBDC weight in the deposit demand elasticity"),
    ("omega_cost", False, "unit cost of issuing deposits"),
    ("W_welfare", False, "lifetime utility"),
    ("lambda_pref", True, "log CBDC benefit"),
    ("eps_pref", True, "log inverse elasticity between CBDC and deposits"),
    ("a_prod", True, "log productivity"),
    ("g_spend", True, "log government spending"),
    ("eta_goods", True, "log inverse elasticity across goods"),
)

NAMES = tuple(v[0] for v in VARIABLES)
IDX = {name: i for i, name in enumerate(NAMES)}
N_VARS = len(NAMES)
N_SHOCKS = len(SHOCKS)
SHOCK_IDX = {name: i for i, name in enumerate(SHOCKS)}
EXOGENOUS = dict(zip(AR1_SHOCKS, ("lambda_pref", "eps_pref", "a_prod", "g_spend", "eta_goods")))

# Rates and spreads are reported in basis points, everything else in percent.
RATE_VARIABLES = frozenset(
    ("pi", "pi_reset", "R_bond", "R_cbdc", "R_reserve", "R_deposit", "R_k",
     "chi_m", "chi_n", "chi_r", "chi_z"))
LOG_VARIABLES = frozenset(EXOGENOUS.values())

PARAM_NAMES = (
    "beta", "sigma", "psi", "iota", "v", "xi", "lambda_bar", "eps_bar",
    "phi", "varphi", "e_bank", "alpha", "delta", "theta_calvo", "eta_bar",
    "theta_c", "a_bar", "mu_r", "mu_m", "g_bar", "pi_bar", "R_r_bar", "R_m_bar",
    "b_bar",
    "bond_rho", "bond_theta_pi", "bond_theta_y",
    "cbdc_rho", "cbdc_theta_pi", "cbdc_theta_y",
    "rho_lambda", "rho_eps", "rho_a", "rho_g", "rho_eta",
    "markup_on", "cbdc_rule_on",
    "y_ss", "I_ss",
)
PIDX = {name: i for i, name in enumerate(PARAM_NAMES)}


@dataclass(frozen=True)
class VariableSet:
    names: tuple[str, ...]
    is_state: tuple[bool, ...]
    descriptions: tuple[str, ...]

    @property
    def states(self) -> tuple[str, ...]:
        return tuple(n for n, s in zip(self.names, self.is_state) if s)

    @property
    def state_index(self) -> np.ndarray:
        return np.flatnonzero(self.is_state)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def __len__(self) -> int:
        return len(self.names)


VARIABLE_SET = VariableSet(NAMES, tuple(v[1] for v in VARIABLES), tuple(v[2] for v in VARIABLES))


class _View:
    """Name-based access into a variable vector inside traced code."""

    __slots__ = ("_x",)

    def __init__(self, x):
        self._x = x

    def __getattr__(self, name):
        return self._x[IDX[name]]


def _utility(c, z, l, th, log_utility: bool):
    psi, v, sigma = th[PIDX["psi"]], th[PIDX["v"]], th[PIDX["sigma"]]
    xi, iota = th[PIDX["xi"]], th[PIDX["iota"]]
    bundle = (1 - v) * c ** (1 - psi) + v * z ** (1 - psi)
    if log_utility:
        u_cz = jnp.log(bundle) / (1 - psi)
    else:
        u_cz = (bundle ** ((1 - sigma) / (1 - psi)) - 1) / (1 - sigma)
    return u_cz - xi * l ** (1 + iota) / (1 + iota)


def _residuals(xp, xc, xf, u, th, log_utility: bool):
    P, C, N = _View(xp), _View(xc), _View(xf)
    g = lambda name: th[PIDX[name]]  # noqa: E731

    beta, sigma, psi, iota = g("beta"), g("sigma"), g("psi"), g("iota")
    v, xi = g("v"), g("xi")
    phi, varphi, e_bank = g("phi"), g("varphi"), g("e_bank")
    alpha, delta, theta, tc = g("alpha"), g("delta"), g("theta_calvo"), g("theta_c")
    mu_r, mu_m = g("mu_r"), g("mu_m")
    R_bar = g("pi_bar") / beta
    chi_r_bar = 1 - g("R_r_bar") / R_bar
    I_ss = g("I_ss")

    lam, ep, a = jnp.exp(C.lambda_pref), jnp.exp(C.eps_pref), jnp.exp(C.a_prod)
    gov, eta = jnp.exp(C.g_spend), jnp.exp(C.eta_goods)

    Uc = C.c ** (-sigma) * C.Omega
    Uc_f = N.c ** (-sigma) * N.Omega
    elas = (1 - C.s_weight) / psi + C.s_weight / ep

    growth = (C.I_net + I_ss) / (P.I_net + I_ss)
    growth_f = (N.I_net + I_ss) / (C.I_net + I_ss)
    adj_cost = tc / 2 * jnp.log(growth) ** 2 * (C.I_net + I_ss)

    def rule(prefix, R_now, R_lag, shock):
        rho, tpi, ty = g(f"{prefix}_rho"), g(f"{prefix}_theta_pi"), g(f"{prefix}_theta_y")
        R_ss = R_bar if prefix == "bond" else g("R_m_bar")
        return (jnp.log(R_now) - (1 - rho) * jnp.log(R_ss) - rho * jnp.log(R_lag)
                - (1 - rho) * (tpi * jnp.log(C.pi / g("pi_bar")) + ty * jnp.log(C.y / g("y_ss")))
                - shock)

    on = g("cbdc_rule_on")
    cbdc_rate = (on * rule("cbdc", C.R_cbdc, P.R_cbdc, u[SHOCK_IDX["e_m"]])
                 + (1 - on) * (jnp.log(C.R_cbdc) - jnp.log(g("R_m_bar"))))

    d_bank = (P.q * P.k_b * C.R_k + P.r_reserves * P.R_reserve / C.pi + (C.q - delta) * P.k_b
              - P.n * P.R_deposit / C.pi - e_bank - C.n * C.omega_cost)
    d_intermediate = C.gamma * C.y_m - P.q * P.k * C.R_k - C.w * C.l
    d_retail = C.y - C.gamma * C.y_m
    d_capital = (C.q - 1) * C.I_net - adj_cost
    d_final = 0.0  # zero-profit final-good aggregator

    def ar1(shock, var):
        rho = g(f"rho_{shock}")
        bar = {"lambda": "lambda_bar", "eps": "eps_bar", "a": "a_bar",
               "g": "g_bar", "eta": "eta_bar"}[shock]
        return getattr(C, var) - (1 - rho) * jnp.log(g(bar)) - rho * getattr(P, var) - u[SHOCK_IDX[shock]]

    res = [
        # households
        C.z - C.c * (v / (1 - v) / C.chi_z) ** (1 / psi),
        C.chi_z - C.chi_m * C.chi_n / (lam ** (1 / ep) * C.chi_n ** ((1 - ep) / ep)
                                       + C.chi_m ** ((1 - ep) / ep)) ** (ep / (1 - ep)),
        C.m - C.z * (lam * C.chi_z / C.chi_m) ** (1 / ep),
        C.n - C.z * (C.chi_z / C.chi_n) ** (1 / ep),
        Uc - beta * Uc_f * C.R_bond / N.pi,
        Uc - beta * Uc_f * (N.R_k + (N.q - delta) / C.q),
        C.Omega - (1 - v) ** ((1 - sigma) / (1 - psi)) * (
            1 + (v / (1 - v)) ** (1 / psi) * C.chi_z ** (1 - 1 / psi)) ** ((psi - sigma) / (1 - psi)),
        xi * C.l ** iota - C.w * Uc,
        # banks
        C.q * C.k_b + C.r_reserves - C.n - e_bank,
        C.zeta - (C.chi_r / (phi * (varphi - 1))) ** (-1 / varphi),
        C.r_reserves - C.zeta * C.n,
        C.chi_n - g("markup_on") * C.chi_n / elas - varphi * phi * C.zeta ** (1 - varphi),
        C.s_weight - lam ** (1 / ep) * (C.chi_z / C.chi_m) ** ((1 - ep) / ep),
        C.omega_cost - phi * C.zeta ** (1 - varphi),
        # firms
        C.y_m - a * P.k ** alpha * C.l ** (1 - alpha),
        C.w - a * (1 - alpha) * C.gamma * (P.k / C.l) ** alpha,
        C.R_k - a * alpha * C.gamma * (P.k / C.l) ** (alpha - 1) / P.q,
        C.pi_reset - C.pi * C.x1 / C.x2 / (1 - eta),
        C.x1 - Uc * C.y * C.gamma - theta * beta * N.pi ** (1 / eta) * N.x1,
        C.x2 - Uc * C.y - theta * beta * N.pi ** (1 / eta - 1) * N.x2,
        C.pi ** (1 - 1 / eta) - (1 - theta) * C.pi_reset ** (1 - 1 / eta) - theta,
        C.v_p - (1 - theta) * (C.pi / C.pi_reset) ** (1 / eta) - theta * C.pi ** (1 / eta) * P.v_p,
        C.y - a * P.k ** alpha * C.l ** (1 - alpha) / C.v_p,
        C.q - 1 - tc / 2 * jnp.log(growth) ** 2 - tc * jnp.log(growth)
        + beta * Uc_f / Uc * tc * jnp.log(growth_f) * growth_f,
        C.I_gross - C.I_net - delta * P.k,
        C.k - P.k - C.I_net,
        C.k - C.k_h - C.k_b,
        C.c + gov + C.I_gross - C.y + adj_cost + C.m * mu_m + C.n * (C.omega_cost + C.zeta * mu_r),
        # government
        C.b + C.r_reserves + C.m - gov + C.tau - P.b * P.R_bond / C.pi
        - P.r_reserves * P.R_reserve / C.pi - P.m * P.R_cbdc / C.pi
        - C.r_reserves * mu_r - C.m * mu_m,
        C.b - g("b_bar"),
        rule("bond", C.R_bond, P.R_bond, u[SHOCK_IDX["e_R"]]),
        C.R_reserve - C.R_bond * (1 - chi_r_bar),
        cbdc_rate,
        C.chi_m - 1 + C.R_cbdc / C.R_bond,
        C.chi_n - 1 + C.R_deposit / C.R_bond,
        C.chi_r - 1 + C.R_reserve / C.R_bond,
        C.d_profit - (d_bank + d_final + d_intermediate + d_retail + d_capital),
        # welfare
        C.W_welfare - _utility(C.c, C.z, C.l, th, log_utility) - beta * N.W_welfare,
        # exogenous processes
        ar1("lambda", "lambda_pref"),
        ar1("eps", "eps_pref"),
        ar1("a", "a_prod"),
        ar1("g", "g_spend"),
        ar1("eta", "eta_goods"),
    ]
    return jnp.stack(res)


EQUATIONS = (
    "liquidity_demand", "average_cost_of_liquidity", "cbdc_demand", "deposit_demand",
    "euler_bond", "euler_capital", "omega_index", "labor_supply",
    "bank_balance_sheet", "liquidity_ratio", "reserves", "deposit_pricing",
    "cbdc_weight", "unit_deposit_cost",
    "intermediate_output", "labor_demand", "capital_return", "reset_inflation",
    "x1_recursion", "x2_recursion", "inflation_aggregation", "price_dispersion",
    "aggregate_output", "capital_price", "gross_investment", "capital_accumulation",
    "capital_market", "resource_constraint",
    "government_budget", "bond_supply", "bond_rule", "reserve_rate", "cbdc_rate",
    "cbdc_spread", "deposit_spread", "reserve_spread", "profits",
    "welfare",
    "lambda_process", "eps_process", "a_process", "g_process", "eta_process",
)


def _stacked(vec, th, log_utility):
    n = N_VARS
    return _residuals(vec[:n], vec[n:2 * n], vec[2 * n:3 * n], vec[3 * n:], th, log_utility)


@partial(jax.jit, static_argnums=(5,))
def _residual_jit(xp, xc, xf, u, th, log_utility):
    return _residuals(xp, xc, xf, u, th, log_utility)


@partial(jax.jit, static_argnums=(2,))
def _jacobian_jit(vec, th, log_utility):
    return jax.jacfwd(_stacked)(vec, th, log_utility)


@partial(jax.jit, static_argnums=(2,))
def _derivatives_jit(vec, th, log_utility):
    jac = jax.jacfwd(_stacked)
    return jac(vec, th, log_utility), jax.jacfwd(jac)(vec, th, log_utility)


class ModelError(RuntimeError):
    """The equation system is malformed or evaluated outside its domain."""


def parameter_vector(cal: Calibration, variant: ModelVariant, y_ss: float, I_ss: float) -> np.ndarray:
    vals = {f: getattr(cal, f) for f in PARAM_NAMES if hasattr(cal, f) and f != "R_bar"}
    for which in ("bond", "cbdc"):
        rule = getattr(cal, f"{which}_rule")
        vals[f"{which}_rho"] = rule.rho
        vals[f"{which}_theta_pi"] = rule.theta_pi
        vals[f"{which}_theta_y"] = rule.theta_y
    for shock in AR1_SHOCKS:
        vals[f"rho_{shock}"] = cal.rho_shocks[shock]
    vals["markup_on"] = 1.0 if variant.banking == "monopolist" else 0.0
    vals["cbdc_rule_on"] = 1.0 if variant.cbdc_rate_regime == "taylor_rule" else 0.0
    vals["y_ss"] = y_ss
    vals["I_ss"] = I_ss
    return np.array([float(vals[name]) for name in PARAM_NAMES])


@dataclass(frozen=True)
class EquationSystem:
    """Stacked residuals ``F(x_prev, x_curr, x_next, innovations)`` for one calibration.

    ``y_ss`` and ``I_ss`` anchor the Taylor rules and the investment adjustment
    cost; they are the steady-state output and gross investment.
    """

    calibration: Calibration
    variant: ModelVariant
    y_ss: float
    I_ss: float
    variables: VariableSet = VARIABLE_SET
    equation_names: tuple[str, ...] = EQUATIONS

    def __post_init__(self):
        if len(self.equation_names) != len(self.variables):
            raise ModelError(f"{len(self.equation_names)} equations for "
                             f"{len(self.variables)} variables")

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_shocks(self) -> int:
        return N_SHOCKS

    @property
    def params(self) -> np.ndarray:
        return parameter_vector(self.calibration, self.variant, self.y_ss, self.I_ss)

    @property
    def log_utility(self) -> bool:
        return self.calibration.sigma == 1.0

    def residual(self, x_prev, x_curr, x_next, innovations=None) -> np.ndarray:
        if innovations is None:
            innovations = np.zeros(N_SHOCKS)
        out = _residual_jit(jnp.asarray(x_prev, float), jnp.asarray(x_curr, float),
                            jnp.asarray(x_next, float), jnp.asarray(innovations, float),
                            jnp.asarray(self.params), self.log_utility)
        return np.asarray(out)

    def steady_residual(self, x) -> np.ndarray:
        return self.residual(x, x, x)

    def stacked_point(self, x_prev, x_curr, x_next, innovations=None) -> np.ndarray:
        if innovations is None:
            innovations = np.zeros(N_SHOCKS)
        return np.concatenate([x_prev, x_curr, x_next, innovations]).astype(float)

    def jacobian(self, vec) -> np.ndarray:
        """Jacobian with respect to the stacked (x_prev, x_curr, x_next, innovations)."""
        return np.asarray(_jacobian_jit(jnp.asarray(vec), jnp.asarray(self.params), self.log_utility))

    def jacobian_and_hessian(self, vec) -> tuple[np.ndarray, np.ndarray]:
        jac, hess = _derivatives_jit(jnp.asarray(vec), jnp.asarray(self.params), self.log_utility)
        return np.asarray(jac), np.asarray(hess)

    def vector(self, values: dict[str, float]) -> np.ndarray:
        missing = set(NAMES) - set(values)
        if missing:
            raise ModelError(f"missing values for {sorted(missing)}")
        return np.array([values[name] for name in NAMES], dtype=float)


def build_equation_system(cal: Calibration, variant: ModelVariant,
                          y_ss: float | None = None, I_ss: float | None = None) -> EquationSystem:
    """Assemble the residual system; steady-state anchors are computed if not given."""
    if variant.cbdc_rate_regime == "fixed_gross_rate_one" and cal.R_m_bar != 1.0:
        raise ModelError(f"fixed CBDC rate regime requires R_m_bar = 1, got {cal.R_m_bar}")
    if y_ss is None or I_ss is None:
        from .steady_state import analytic_steady_state

        levels = analytic_steady_state(cal, variant)
        y_ss, I_ss = levels["y"], levels["I_gross"]
    return EquationSystem(cal, variant, float(y_ss), float(I_ss))


def utility_flow(c: float, z: float, l: float, cal: Calibration) -> float:
    """Per-period utility over consumption, liquidity services and hours."""
    if c <= 0 or z <= 0:
        raise ValueError(f"utility needs c > 0 and z > 0, got c={c}, z={z}")
    if l < 0:
        raise ValueError(f"hours must be non-negative, got {l}")
    bundle = (1 - cal.v) * c ** (1 - cal.psi) + cal.v * z ** (1 - cal.psi)
    if cal.sigma == 1.0:
        u_cz = np.log(bundle) / (1 - cal.psi)
    else:
        u_cz = (bundle ** ((1 - cal.sigma) / (1 - cal.psi)) - 1) / (1 - cal.sigma)
    return float(u_cz - cal.xi * l ** (1 + cal.iota) / (1 + cal.iota))


def household_budget_gap(prev: dict, curr: dict, cal: Calibration) -> float:
    """Household budget constraint (spending minus income) at ``curr`` given ``prev``.

    Not part of F: it is implied by the resource constraint, the government
    budget and the definition of profits.
    """
    P, C = prev, curr
    spend = C["c"] + C["m"] + C["n"] + C["b"] + C["q"] * C["k_h"] + C["tau"]
    income = (C["w"] * C["l"] + C["d_profit"]
              + (P["m"] * P["R_cbdc"] + P["n"] * P["R_deposit"] + P["b"] * P["R_bond"]) / C["pi"]
              + P["q"] * P["k_h"] * C["R_k"] + (C["q"] - cal.delta) * P["k_h"])
    return spend - income
