"""Parameter schema, model variants, calibration targets and config-file I/O.

Everything downstream reads its numbers from the dataclasses defined here.
Instances are frozen; use :func:`dataclasses.replace` to derive variants.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

AR1_SHOCKS = ("lambda", "eps", "a", "g", "eta")
POLICY_SHOCKS = ("e_R", "e_m")
SHOCKS = AR1_SHOCKS + POLICY_SHOCKS

BANKING_TYPES = ("monopolist", "competitive")
CBDC_REGIMES = ("fixed_gross_rate_one", "taylor_rule")

# Shock standard deviations used for the welfare experiments.
WELFARE_SHOCK_SD = {
    "lambda": 0.25,
    "eps": 0.25,
    "a": 0.0064,
    "g": 0.016,
    "eta": 0.14,
    "e_R": 0.0,
    "e_m": 0.0,
}
SHOCK_PRESETS = {
    "none": {name: 0.0 for name in SHOCKS},
    "welfare": WELFARE_SHOCK_SD,
}


class ConfigError(ValueError):
    """Invalid or unparsable configuration."""


def _require(ok: bool, name: str, value, what: str) -> None:
    if not ok:
        raise ConfigError(f"{name} out of range: {value!r} ({what})")


@dataclass(frozen=True)
class TaylorCoefficients:
    """Interest-rate rule coefficients: smoothing, inflation and output response."""

    rho: float = 0.5
    theta_pi: float = 1.5
    theta_y: float = 0.2

    def __post_init__(self):
        _require(0.0 <= self.rho <= 0.99, "rho", self.rho, "must lie in [0, 0.99]")
        _require(self.theta_pi >= 0.0, "theta_pi", self.theta_pi, "must be >= 0")
        _require(self.theta_y >= 0.0, "theta_y", self.theta_y, "must be >= 0")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.theta_pi, self.theta_y, self.rho)


@dataclass(frozen=True)
class ModelVariant:
    banking: str = "monopolist"
    cbdc_rate_regime: str = "taylor_rule"

    def __post_init__(self):
        _require(self.banking in BANKING_TYPES, "banking", self.banking,
                 f"one of {BANKING_TYPES}")
        _require(self.cbdc_rate_regime in CBDC_REGIMES, "cbdc_rate_regime",
                 self.cbdc_rate_regime, f"one of {CBDC_REGIMES}")

    @property
    def label(self) -> str:
        return f"{self.banking}/{self.cbdc_rate_regime}"


@dataclass(frozen=True)
class CalibrationTargets:
    """Steady-state targets that pin down the internally calibrated parameters.

    ``cbdc_cost_rule`` switches on mu_m = (omega + zeta * mu_r) * lambda.
    ``bond_output_ratio`` is the closure for the (allocation-neutral) bond stock.
    """

    liquidity_output_ratio: float = 1.04
    labor_target: float = 1.0 / 3.0
    liquidity_ratio_target: float = 0.1945
    bank_capital_share_target: float = 0.3
    reserve_spread_target: float = 0.00497
    cbdc_cost_rule: bool = True
    bond_output_ratio: float = 0.25

    def __post_init__(self):
        for f in fields(self):
            if f.name == "cbdc_cost_rule":
                continue
            val = getattr(self, f.name)
            _require(val > 0.0, f.name, val, "targets must be strictly positive")
        _require(self.labor_target < 1.0, "labor_target", self.labor_target, "must be < 1")
        _require(self.bank_capital_share_target < 1.0, "bank_capital_share_target",
                 self.bank_capital_share_target, "must be < 1")


def _default_rho() -> dict[str, float]:
    return {name: 0.9 for name in AR1_SHOCKS}


def _default_sigma() -> dict[str, float]:
    return {name: 0.0 for name in SHOCKS}


@dataclass(frozen=True)
class Calibration:
    """Structural parameters of the model (quarterly frequency).

    ``v``, ``xi``, ``phi``, ``e_bank``, ``mu_m``, ``b_bar`` and ``R_r_bar`` are
    internally calibrated; the defaults are the rounded published values and only
    serve as starting guesses (see :func:`cbdc_nk.steady_state.calibrate_internal_parameters`).
    """

    # households
    beta: float = 0.99
    sigma: float = 1.0
    psi: float = 4.55
    iota: float = 1.0
    v: float = 0.08
    xi: float = 9.46
    lambda_bar: float = 1.0
    eps_bar: float = 1.0 / 6.0
    # banks
    phi: float = 0.0008
    varphi: float = 1.503
    e_bank: float = 1.38
    # firms
    alpha: float = 1.0 / 3.0
    delta: float = 0.025
    theta_calvo: float = 0.75
    eta_bar: float = 1.0 / 11.0
    theta_c: float = 10.0
    a_bar: float = 1.0
    # government
    mu_r: float = 0.0003
    mu_m: float = 0.002
    g_bar: float = 0.16
    pi_bar: float = 1.0
    R_r_bar: float = 1.005
    R_m_bar: float = 1.0
    b_bar: float = 0.25
    bond_rule: TaylorCoefficients = field(default_factory=TaylorCoefficients)
    cbdc_rule: TaylorCoefficients = field(default_factory=TaylorCoefficients)
    # exogenous processes
    rho_shocks: Mapping[str, float] = field(default_factory=_default_rho)
    sigma_shocks: Mapping[str, float] = field(default_factory=_default_sigma)

    def __post_init__(self):
        object.__setattr__(self, "rho_shocks", {**_default_rho(), **dict(self.rho_shocks)})
        object.__setattr__(self, "sigma_shocks", {**_default_sigma(), **dict(self.sigma_shocks)})
        self.validate()

    def validate(self) -> None:
        r = _require
        r(0.0 < self.beta < 1.0, "beta", self.beta, "0 < beta < 1")
        for name in ("sigma", "psi", "iota", "xi"):
            r(getattr(self, name) > 0.0, name, getattr(self, name), "must be > 0")
        r(0.0 < self.v < 1.0, "v", self.v, "0 < v < 1")
        r(self.lambda_bar >= 0.0, "lambda_bar", self.lambda_bar, "must be >= 0")
        r(self.eps_bar > 0.0, "eps_bar", self.eps_bar, "must be > 0")
        r(self.eps_bar != 1.0, "eps_bar", self.eps_bar, "CES aggregator undefined at 1")
        r(self.psi != 1.0, "psi", self.psi, "CES aggregator undefined at 1")
        r(self.phi >= 0.0, "phi", self.phi, "must be >= 0")
        r(self.varphi > 1.0, "varphi", self.varphi, "must be > 1")
        r(0.0 <= self.theta_calvo < 1.0, "theta_calvo", self.theta_calvo, "0 <= theta < 1")
        r(0.0 < self.alpha < 1.0, "alpha", self.alpha, "0 < alpha < 1")
        r(0.0 < self.delta < 1.0, "delta", self.delta, "0 < delta < 1")
        r(0.0 < self.eta_bar < 1.0, "eta_bar", self.eta_bar, "0 < eta < 1")
        r(self.theta_c >= 0.0, "theta_c", self.theta_c, "must be >= 0")
        r(self.a_bar > 0.0, "a_bar", self.a_bar, "must be > 0")
        r(self.pi_bar > 0.0, "pi_bar", self.pi_bar, "must be > 0")
        r(self.R_r_bar > 0.0, "R_r_bar", self.R_r_bar, "must be > 0")
        r(self.R_m_bar > 0.0, "R_m_bar", self.R_m_bar, "must be > 0")
        r(self.mu_r >= 0.0, "mu_r", self.mu_r, "must be >= 0")
        r(self.mu_m >= 0.0, "mu_m", self.mu_m, "must be >= 0")
        r(self.g_bar > 0.0, "g_bar", self.g_bar, "must be > 0")
        for name, val in self.rho_shocks.items():
            r(name in AR1_SHOCKS, f"rho_{name}", val, "unknown shock")
            r(0.0 <= val < 1.0, f"rho_{name}", val, "persistence in [0, 1)")
        for name, val in self.sigma_shocks.items():
            r(name in SHOCKS, f"sigma_{name}", val, "unknown shock")
            r(val >= 0.0, f"sigma_{name}", val, "standard deviation >= 0")

    @property
    def R_bar(self) -> float:
        """Steady-state gross bond rate implied by the bond Euler equation."""
        return self.pi_bar / self.beta

    @property
    def chi_r_bar(self) -> float:
        return 1.0 - self.R_r_bar / self.R_bar

    def with_shocks(self, preset: str | Mapping[str, float]) -> "Calibration":
        sd = SHOCK_PRESETS[preset] if isinstance(preset, str) else preset
        return replace(self, sigma_shocks=dict(sd))


def baseline_calibration() -> Calibration:
    """The published baseline calibration (shock standard deviations all zero)."""
    return Calibration()


# --------------------------------------------------------------------------
# config files
# --------------------------------------------------------------------------

_SCALAR_FIELDS = [f.name for f in fields(Calibration)
                  if f.name not in ("bond_rule", "cbdc_rule", "rho_shocks", "sigma_shocks")]
_TARGET_FIELDS = [f.name for f in fields(CalibrationTargets)]
_RULE_KEYS = {"rho", "theta_pi", "theta_y"}
SECTIONS = ("calibration", "variant", "shocks", "rules", "experiment")


def _parse_float(section: str, key: str, raw: str) -> float:
    try:
        if "/" in raw:
            num, den = raw.split("/", 1)
            return float(num) / float(den)
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as a number") from exc


def _parse_bool(section: str, key: str, raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as a boolean")


def read_config(path: str | Path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keep key case (R_r_bar)
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        parser.read_string(p.read_text(), source=str(p))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    return parser


def parse_config(parser: configparser.ConfigParser
                 ) -> tuple[Calibration, ModelVariant, CalibrationTargets]:
    kw: dict = {}
    target_kw: dict = {}
    if parser.has_section("calibration"):
        for key, raw in parser.items("calibration"):
            if key in _SCALAR_FIELDS:
                kw[key] = _parse_float("calibration", key, raw)
            elif key.startswith("target_") and key[7:] in _TARGET_FIELDS:
                name = key[7:]
                if name == "cbdc_cost_rule":
                    target_kw[name] = _parse_bool("calibration", key, raw)
                else:
                    target_kw[name] = _parse_float("calibration", key, raw)
            else:
                raise ConfigError(f"[calibration] unknown key {key!r}")

    rules = {"bond": {}, "cbdc": {}}
    if parser.has_section("rules"):
        for key, raw in parser.items("rules"):
            which, _, coef = key.partition("_")
            if which not in rules or coef not in _RULE_KEYS:
                raise ConfigError(f"[rules] unknown key {key!r}")
            rules[which][coef] = _parse_float("rules", key, raw)
    for which, vals in rules.items():
        if vals:
            kw[f"{which}_rule"] = TaylorCoefficients(**vals)

    rho: dict[str, float] = {}
    sigma: dict[str, float] = {}
    if parser.has_section("shocks"):
        items = dict(parser.items("shocks"))
        preset = items.pop("preset", None)
        if preset is not None:
            if preset not in SHOCK_PRESETS:
                raise ConfigError(f"[shocks] unknown preset {preset!r}")
            sigma.update(SHOCK_PRESETS[preset])
        for key, raw in items.items():
            kind, _, name = key.partition("_")
            if kind == "rho" and name in AR1_SHOCKS:
                rho[name] = _parse_float("shocks", key, raw)
            elif kind == "sigma" and name in SHOCKS:
                sigma[name] = _parse_float("shocks", key, raw)
            else:
                raise ConfigError(f"[shocks] unknown key {key!r}")
    if rho:
        kw["rho_shocks"] = rho
    if sigma:
        kw["sigma_shocks"] = sigma

    variant_kw = {}
    if parser.has_section("variant"):
        for key, raw in parser.items("variant"):
            if key not in ("banking", "cbdc_rate_regime"):
                raise ConfigError(f"[variant] unknown key {key!r}")
            variant_kw[key] = raw.strip()

    return Calibration(**kw), ModelVariant(**variant_kw), CalibrationTargets(**target_kw)


def load_config(path: str | Path) -> tuple[Calibration, ModelVariant, CalibrationTargets]:
    """Read a sectioned key-value file; absent keys take baseline values."""
    return parse_config(read_config(path))


def dump_config(cal: Calibration, variant: ModelVariant | None = None,
                targets: CalibrationTargets | None = None) -> str:
    """Serialize to the config format; ``load_config`` reads it back unchanged."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    calib = {k: repr(float(getattr(cal, k))) for k in _SCALAR_FIELDS}
    if targets is not None:
        for k in _TARGET_FIELDS:
            val = getattr(targets, k)
            calib[f"target_{k}"] = str(val).lower() if isinstance(val, bool) else repr(float(val))
    parser["calibration"] = calib
    if variant is not None:
        parser["variant"] = {"banking": variant.banking,
                             "cbdc_rate_regime": variant.cbdc_rate_regime}
    parser["rules"] = {f"{which}_{k}": repr(float(getattr(getattr(cal, f"{which}_rule"), k)))
                       for which in ("bond", "cbdc") for k in ("rho", "theta_pi", "theta_y")}
    shocks = {f"rho_{k}": repr(float(v)) for k, v in cal.rho_shocks.items()}
    shocks.update({f"sigma_{k}": repr(float(v)) for k, v in cal.sigma_shocks.items()})
    parser["shocks"] = shocks
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()

