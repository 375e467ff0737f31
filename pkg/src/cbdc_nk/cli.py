"""Command-line front end.

Config files are INI-style with the sections [calibration], [variant],
[shocks], [rules] and [experiment].  Command-line flags override the file.
Outputs go to ``--out``, else ``$CBDC_NK_OUTPUT_DIR``, else ``./output``.

Exit codes: 0 success, 1 unexpected error, 2 bad configuration or usage,
3 solver failure, 4 Blanchard-Kahn failure.
"""

from __future__ import annotations

import argparse
import configparser
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .config import (CBDC_REGIMES, SHOCK_PRESETS, SHOCKS, Calibration, CalibrationTargets,
                     ConfigError, ModelVariant, TaylorCoefficients, parse_config, read_config)
from .model import NAMES, RATE_VARIABLES
from .perturbation import BlanchardKahnError, PerturbationError
from .steady_state import SteadyStateError, calibrate_internal_parameters, solve_steady_state
from .welfare import SPECIFICATIONS, WelfareError

OUTPUT_ENV = "CBDC_NK_OUTPUT_DIR"
FIGURE_PANELS = ("y", "c", "l", "pi", "I_gross", "R_bond", "chi_m", "chi_n", "chi_r",
                 "m", "n", "m_n_ratio", "z", "k_b", "q", "w")
VARIANT_ALIASES = {
    "fixed-cbdc": {"cbdc_rate_regime": "fixed_gross_rate_one"},
    "taylor-cbdc": {"cbdc_rate_regime": "taylor_rule"},
    "competitive": {"banking": "competitive"},
    "monopolist": {"banking": "monopolist"},
}
EXPERIMENT_KEYS = ("shock", "size", "horizon", "periods", "seed", "preset", "recalibrate")


# --------------------------------------------------------------------------
# output helpers
# --------------------------------------------------------------------------

def fmt(x) -> str:
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.12g}"


def atomic_write(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_text(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def emit_csv(result, path, allow_inf: bool = False) -> Path:
    """Write an IRF, overlay, steady state or table to CSV (12 significant digits, LF).

    NaN is always rejected; infinities only when ``allow_inf`` is set.
    """
    from .simulation import IrfOverlay, IrfResult

    if isinstance(result, IrfResult):
        header = ["t"] + list(result.variables)
        rows = [[str(t)] + [result.paths[v][t] for v in result.variables]
                for t in range(result.horizon + 1)]
    elif isinstance(result, IrfOverlay):
        cols, data = result.table()
        header = ["t"] + cols
        rows = [[str(t)] + list(data[t]) for t in range(result.horizon + 1)]
    elif isinstance(result, dict):
        header, rows = ["variable", "value"], [[k, v] for k, v in result.items()]
    else:
        header, rows = result
    for row in rows:
        for v in row:
            if isinstance(v, str):
                continue
            if math.isnan(float(v)) or (math.isinf(float(v)) and not allow_inf):
                raise ValueError(f"non-finite value in CSV output: {v}")
    return atomic_write(Path(path), csv_text(header, rows))


def svg_small_multiples(runs, variables, title: str = "", cols: int = 4) -> str:
    """Line charts, one panel per variable, one line per run."""
    colors = ("#1f4e79", "#c0392b", "#27864a", "#8e44ad", "#d68910")
    pw, ph, pad = 220, 150, 28
    rows = max(1, math.ceil(len(variables) / cols))
    width, height = cols * pw, rows * ph + 40
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="10">',
           f'<text x="8" y="16" font-size="13">{title}</text>']
    for i, lab in enumerate(r.label or f"run{i}" for r in runs):
        out.append(f'<text x="{width - 160}" y="{14 + 12 * i}" fill="{colors[i % len(colors)]}">{lab}</text>')
    for k, var in enumerate(variables):
        x0, y0 = (k % cols) * pw, 40 + (k // cols) * ph
        series = [np.asarray(r.paths[var], float) for r in runs]
        lo = min(0.0, min(float(s.min()) for s in series))
        hi = max(0.0, max(float(s.max()) for s in series))
        if hi - lo < 1e-12:
            lo, hi = lo - 1, hi + 1
        n = len(series[0])

        def pt(t, v):
            x = x0 + pad + (pw - 2 * pad) * t / max(n - 1, 1)
            y = y0 + ph - pad - (ph - 2 * pad) * (v - lo) / (hi - lo)
            return f"{x:.1f},{y:.1f}"

        unit = "bp" if var in RATE_VARIABLES else "%"
        out.append(f'<text x="{x0 + pad}" y="{y0 + 14}">{var} ({unit})</text>')
        out.append(f'<polyline fill="none" stroke="#999" stroke-dasharray="3,3" '
                   f'points="{pt(0, 0)} {pt(n - 1, 0)}"/>')
        for j, s in enumerate(series):
            pts = " ".join(pt(t, v) for t, v in enumerate(s))
            out.append(f'<polyline fill="none" stroke="{colors[j % len(colors)]}" points="{pts}"/>')
        out.append(f'<text x="{x0 + 2}" y="{y0 + pad + 4}">{fmt(round(hi, 4))}</text>')
        out.append(f'<text x="{x0 + 2}" y="{y0 + ph - pad + 4}">{fmt(round(lo, 4))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# argument handling
# --------------------------------------------------------------------------

def parse_size(text: str) -> float:
    """``log:<x>`` is a log innovation; ``pct:<p>`` a p percent level jump, ln(1 + p/100)."""
    kind, _, raw = text.partition(":")
    try:
        val = float(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shock size {text!r}; use log:<x> or pct:<p>") from None
    if kind == "log":
        return val
    if kind == "pct":
        if val <= -100:
            raise argparse.ArgumentTypeError("pct size must exceed -100")
        return math.log1p(val / 100)
    raise argparse.ArgumentTypeError(f"bad shock size {text!r}; use log:<x> or pct:<p>")


def _rule_arg(text: str) -> TaylorCoefficients:
    try:
        tp, ty, rho = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"rule must be theta_pi,theta_y,rho; got {text!r}") from None
    return TaylorCoefficients(rho=rho, theta_pi=tp, theta_y=ty)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI config file")
    common.add_argument("--out", type=Path, help=f"output directory (default ${OUTPUT_ENV} or ./output)")
    common.add_argument("--banking", choices=("monopolist", "competitive"), help="override [variant] banking")
    common.add_argument("--cbdc-rate", choices=CBDC_REGIMES, help="override [variant] cbdc_rate_regime")
    common.add_argument("--lambda-bar", type=float, help="override steady-state CBDC benefit")
    common.add_argument("--no-recalibrate", action="store_true",
                        help="use v, xi, phi, e_bank, mu_m, b_bar, R_r_bar as given instead of hitting the targets")

    p = argparse.ArgumentParser(prog="cbdc-nk", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    sub.add_parser("steady", parents=[common], help="print the steady state as CSV")

    q = sub.add_parser("irf", parents=[common], help="impulse responses (CSV + SVG)")
    q.add_argument("--shock", choices=SHOCKS, help="innovation to apply (default lambda)")
    q.add_argument("--size", type=parse_size, help="log:<x> or pct:<p> (default pct:25)")
    q.add_argument("--horizon", type=int, help="quarters after impact (default 40)")
    q.add_argument("--variant", action="append", choices=sorted(VARIANT_ALIASES), default=[],
                   help="add a comparison run (repeatable)")
    q.add_argument("--second-order", action="store_true", help="pruned second-order responses")
    q.add_argument("--no-svg", action="store_true", help="skip the SVG plot")

    q = sub.add_parser("simulate", parents=[common], help="pruned stochastic simulation")
    q.add_argument("--periods", type=int, help="number of periods (default 1000)")
    q.add_argument("--seed", type=int, help="random seed (default 0)")
    q.add_argument("--preset", choices=sorted(SHOCK_PRESETS), help="shock standard deviations")

    q = sub.add_parser("welfare", parents=[common], help="conditional welfare of the configured rules")
    q.add_argument("--preset", choices=sorted(SHOCK_PRESETS), help="shock standard deviations (default welfare)")
    q.add_argument("--bond-rule", type=_rule_arg, help="theta_pi,theta_y,rho")
    q.add_argument("--cbdc-rule", type=_rule_arg, help="theta_pi,theta_y,rho")

    q = sub.add_parser("optimize", parents=[common], help="optimize one Taylor rule")
    q.add_argument("--rule", choices=("bond", "cbdc"), default="cbdc", help="rule to optimize")
    q.add_argument("--preset", choices=sorted(SHOCK_PRESETS), help="shock standard deviations (default welfare)")
    q.add_argument("--grid", type=int, nargs=3, metavar=("N_PI", "N_Y", "N_RHO"), default=(9, 9, 5),
                   help="coarse grid sizes")
    q.add_argument("--starts", type=int, default=5, help="local searches from the best grid points")

    q = sub.add_parser("tables", parents=[common], help="two-step welfare experiment (Tables 2, 3, C.1)")
    q.add_argument("--spec", default="all",
                   help="'all' or a comma list like monopolist:1.0,competitive:0.9")
    q.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    q.add_argument("--grid", type=int, nargs=3, metavar=("N_PI", "N_Y", "N_RHO"), default=(9, 9, 5),
                   help="coarse grid sizes")
    q.add_argument("--starts", type=int, default=5, help="local searches from the best grid points")
    return p


def _experiment(parser: configparser.ConfigParser | None) -> dict[str, str]:
    if parser is None or not parser.has_section("experiment"):
        return {}
    items = dict(parser.items("experiment"))
    unknown = set(items) - set(EXPERIMENT_KEYS)
    if unknown:
        raise ConfigError(f"[experiment] unknown key(s) {sorted(unknown)}")
    return items


def _setup(args):
    parser = read_config(args.config) if args.config else None
    if parser is not None:
        cal, variant, targets = parse_config(parser)
    else:
        cal, variant, targets = Calibration(), ModelVariant(), CalibrationTargets()
    exp = _experiment(parser)
    if args.banking:
        variant = replace(variant, banking=args.banking)
    if args.cbdc_rate:
        variant = replace(variant, cbdc_rate_regime=args.cbdc_rate)
    if args.lambda_bar is not None:
        cal = replace(cal, lambda_bar=args.lambda_bar)
    recal = not args.no_recalibrate
    if "recalibrate" in exp:
        recal = recal and exp["recalibrate"].strip().lower() in ("1", "true", "yes", "on")
    out = args.out or Path(os.environ.get(OUTPUT_ENV, "output"))
    return cal, variant, targets, exp, recal, out


def _resolve(cal, variant, targets, recal):
    return calibrate_internal_parameters(cal, targets, variant) if recal else cal


def _exp_value(args, exp, key, default, conv):
    val = getattr(args, key, None)
    if val is not None:
        return val
    if key in exp:
        try:
            return conv(exp[key])
        except (ValueError, argparse.ArgumentTypeError) as e:
            raise ConfigError(f"[experiment] {key}: {e}") from None
    return default


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_steady(args, stdout):
    cal, variant, targets, exp, recal, out = _setup(args)
    ss = solve_steady_state(_resolve(cal, variant, targets, recal), variant)
    values = {name: ss[name] for name in NAMES}
    text = csv_text(["variable", "value"], values.items())
    atomic_write(out / "steady_state.csv", text)
    stdout.write(text)
    return 0


def _variant_runs(base: ModelVariant, extra):
    runs = [("baseline", base)]
    for alias in extra:
        runs.append((alias, replace(base, **VARIANT_ALIASES[alias])))
    return runs


def cmd_irf(args, stdout):
    from .pipeline import solve_model
    from .simulation import DEFAULT_HORIZON, compute_irf, overlay_irfs

    cal, variant, targets, exp, recal, out = _setup(args)
    shock = _exp_value(args, exp, "shock", "lambda", str)
    if shock not in SHOCKS:
        raise ConfigError(f"unknown shock {shock!r}")
    size = _exp_value(args, exp, "size", math.log(1.25), parse_size)
    horizon = _exp_value(args, exp, "horizon", DEFAULT_HORIZON, int)
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    irfs = []
    for label, var in _variant_runs(variant, args.variant):
        c = _resolve(cal, var, targets, recal)
        sol = solve_model(c, var, order=2 if args.second_order else 1)
        irfs.append(compute_irf(sol.best, shock, size, horizon, label=label,
                                second_order=args.second_order))
    stem = f"irf_{shock}"
    if len(irfs) == 1:
        path = emit_csv(irfs[0], out / f"{stem}.csv")
    else:
        path = emit_csv(overlay_irfs(irfs), out / f"{stem}.csv")
    if not args.no_svg:
        atomic_write(out / f"{stem}.svg",
                     svg_small_multiples(irfs, FIGURE_PANELS, f"{shock} shock, log size {fmt(size)}"))
    stdout.write(f"wrote {path}\n")
    return 0


def cmd_simulate(args, stdout):
    from .pipeline import solve_model
    from .simulation import simulate

    cal, variant, targets, exp, recal, out = _setup(args)
    preset = _exp_value(args, exp, "preset", None, str)
    if preset is not None:
        if preset not in SHOCK_PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        cal = cal.with_shocks(preset)
    periods = _exp_value(args, exp, "periods", 1000, int)
    seed = _exp_value(args, exp, "seed", 0, int)
    if periods < 1:
        raise ConfigError(f"periods must be >= 1, got {periods}")
    sol = solve_model(_resolve(cal, variant, targets, recal), variant, order=2)
    res = simulate(sol.second, periods, seed)
    rows = [[str(t)] + list(res.levels[t]) for t in range(periods)]
    path = emit_csv((["t"] + list(NAMES), rows), out / f"simulation_seed{seed}.csv")
    stdout.write(f"wrote {path}\n")
    return 0


def _welfare_cal(args, exp, cal):
    preset = _exp_value(args, exp, "preset", "welfare", str)
    if preset not in SHOCK_PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    return cal.with_shocks(preset)


def cmd_welfare(args, stdout):
    from .welfare import WelfareEvaluator, compensating_fraction

    cal, variant, targets, exp, recal, out = _setup(args)
    cal = _welfare_cal(args, exp, cal)
    if args.bond_rule:
        cal = replace(cal, bond_rule=args.bond_rule)
    if args.cbdc_rule:
        cal = replace(cal, cbdc_rule=args.cbdc_rule)
    cal = _resolve(cal, variant, targets, recal)
    fixed = replace(variant, cbdc_rate_regime="fixed_gross_rate_one")
    ss = solve_steady_state(cal, variant)
    res = WelfareEvaluator(cal, variant, ss)(cal.bond_rule, cal.cbdc_rule)
    ref = WelfareEvaluator(cal, fixed, ss)(cal.bond_rule, cal.cbdc_rule)
    if not res.determinate:
        raise BlanchardKahnError("configured rules are indeterminate")
    rows = [["welfare", res.value], ["steady_state_welfare", res.steady_value],
            ["risk_term", res.risk_term], ["fixed_rate_welfare", ref.value]]
    if ref.determinate:
        rows.append(["gain_vs_fixed_rate_pct", compensating_fraction(ref, res, ss)])
    text = csv_text(["quantity", "value"], rows)
    atomic_write(out / "welfare.csv", text)
    stdout.write(text)
    return 0


def cmd_optimize(args, stdout):
    from .welfare import optimize_rule

    cal, variant, targets, exp, recal, out = _setup(args)
    if args.rule == "cbdc" and variant.cbdc_rate_regime != "taylor_rule":
        raise ConfigError("optimizing the CBDC rule needs cbdc_rate_regime = taylor_rule")
    cal = _resolve(_welfare_cal(args, exp, cal), variant, targets, recal)
    res = optimize_rule(cal, variant, args.rule, grid=tuple(args.grid), n_starts=args.starts)
    r = res.rule
    rows = [["theta_pi", r.theta_pi], ["theta_y", r.theta_y], ["rho", r.rho], ["welfare", res.welfare],
            ["evaluations", str(res.evaluations)], ["indeterminate", str(res.indeterminate)],
            ["boundary", ";".join(str(b).lower() for b in res.boundary)]]
    text = csv_text(["quantity", "value"], rows)
    atomic_write(out / f"optimize_{args.rule}.csv", text)
    stdout.write(text)
    return 0


def _parse_specs(text: str):
    if text == "all":
        return list(SPECIFICATIONS)
    specs = []
    for item in text.split(","):
        bank, _, lam = item.partition(":")
        if bank not in ("monopolist", "competitive"):
            raise ConfigError(f"bad --spec entry {item!r}")
        try:
            specs.append((bank, float(lam)))
        except ValueError:
            raise ConfigError(f"bad --spec entry {item!r}") from None
    return specs


def _run_spec(job):
    from .welfare import run_two_step_experiment

    cal, targets, bank, lam, recal, grid, starts = job
    variant = ModelVariant(banking=bank)
    fixed = replace(variant, cbdc_rate_regime="fixed_gross_rate_one")
    c = replace(cal, lambda_bar=lam)
    c = calibrate_internal_parameters(c, targets, fixed) if recal else c
    return run_two_step_experiment(c, variant, grid=grid, n_starts=starts)


def table_rows(results):
    t2 = (["banking", "lambda_bar", "fixed_rate_welfare", "baseline_taylor_gain_pct",
           "optimized_taylor_gain_pct"],
          [[r.banking, r.lambda_bar, r.welfare_fixed, r.gain_baseline, r.gain_optimized] for r in results])
    t3 = (["banking", "lambda_bar", "theta_pi_m", "theta_y_m", "rho_m"],
          [[r.banking, r.lambda_bar, r.cbdc_rule.theta_pi, r.cbdc_rule.theta_y, r.cbdc_rule.rho]
           for r in results])
    c1 = (["banking", "lambda_bar", "theta_pi", "theta_y", "rho"],
          [[r.banking, r.lambda_bar, r.bond_rule.theta_pi, r.bond_rule.theta_y, r.bond_rule.rho]
           for r in results])
    return t2, t3, c1


def cmd_tables(args, stdout):
    cal, variant, targets, exp, recal, out = _setup(args)
    cal = _welfare_cal(args, exp, cal)
    specs = _parse_specs(args.spec)
    jobs = [(cal, targets, b, lam, recal, tuple(args.grid), args.starts) for b, lam in specs]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs, mp_context=get_context("spawn")) as pool:
            results = list(pool.map(_run_spec, jobs))
    else:
        results = [_run_spec(j) for j in jobs]
    t2, t3, c1 = table_rows(results)
    emit_csv(t2, out / "table2_welfare.csv", allow_inf=True)
    emit_csv(t3, out / "table3_cbdc_rule.csv")
    emit_csv(c1, out / "tableC1_bond_rule.csv")
    combined = (t2[0] + ["theta_pi_m", "theta_y_m", "rho_m", "theta_pi", "theta_y", "rho", "spectral_radius"],
                [a + b[2:] + c[2:] + [r.spectral_radius]
                 for a, b, c, r in zip(t2[1], t3[1], c1[1], results)])
    emit_csv(combined, out / "tables.csv", allow_inf=True)
    stdout.write(csv_text(*combined))
    return 0


COMMANDS = {"steady": cmd_steady, "irf": cmd_irf, "simulate": cmd_simulate, "welfare": cmd_welfare,
            "optimize": cmd_optimize, "tables": cmd_tables}


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, stdout)
    except ConfigError as exc:
        stderr.write(f"config error: {exc}\n")
        return 2
    except BlanchardKahnError as exc:
        stderr.write(f"Blanchard-Kahn failure: {exc}\n")
        return 4
    except (SteadyStateError, PerturbationError, WelfareError) as exc:
        stderr.write(f"solver error: {exc}\n")
        return 3
    except Exception as exc:  # noqa: BLE001
        stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
