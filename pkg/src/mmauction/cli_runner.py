"""Configuration parsing, experiment orchestration and CSV output.

Configs are flat YAML mappings of typed keys (see :data:`DYNAMIC_KEYS`,
:data:`STATIC_KEYS` and :data:`COMMON_KEYS`).  A minimal dynamic config::

    seed: 2024
    n_makers: 3
    rho: 1
    gamma: 1
    sigma_d: 1
    phi: 1
    psi: 1
    sigma_target: 1

Unknown keys are errors, and every violation is reported at once.  The only
environment variable consulted is ``OUTPUT_DIR`` (default output directory).

Every number written to CSV uses ``format(x, '.17g')``, which round-trips
through ``float`` exactly and never depends on the locale.
"""

from __future__ import annotations

import argparse
import csv
import difflib
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .dynamic_equilibrium import (
    DynamicParams,
    MarketState,
    comparative_static_sign,
    competitive_limit,
    compute_constants,
    liquidity,
    price_impact,
    system_residuals,
)
from .errors import ConfigurationError, MarketModelError
from .game_verification import (
    bellman_consistency,
    candidate_rate,
    foc_residual,
    hamiltonian_argmax,
    hjb_coefficients,
    hjb_residual,
    nash_gap,
    objective_value,
    solve_value_function,
    standard_policy_grid,
)
from .impact_analysis import (
    almgren_chriss_coefficients,
    cost_measures,
    decomposition_residual,
    regression_fit,
    roundtrip_sign_check,
)
from .market_simulator import SCHEMES, SimConfig, iter_simulate
from .static_auction import (
    FlowDistribution,
    GridSpec,
    StaticParams,
    SupplyCurve,
    brute_force_verify,
    degenerate_supply_curve,
    inventory_equilibrium,
)

__all__ = ["ExperimentConfig", "parse_config", "load_config", "run", "main", "COMMANDS", "format_number"]

COMMANDS = ("constants", "static-eq", "simulate", "nash-check", "hjb-check", "impact", "sweep")
SCHEMA_VERSION = 1

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2

_REQUIRED = object()


@dataclass(frozen=True)
class Key:
    kind: str  # "int", "float", "str", "bool", "floats", "ints"
    default: object = _REQUIRED
    check: str = ""  # "pos", "nonneg", "prob", "n3", "n2", "posint"
    choices: tuple = ()


COMMON_KEYS = {
    "seed": Key("int"),
    "model": Key("str", "dynamic", choices=("dynamic", "static")),
    "out": Key("str", None),
    "lambda_scale": Key("float", 1.0, "pos"),
}

DYNAMIC_KEYS = {
    # model parameters
    "n_makers": Key("int", check="n3"),
    "rho": Key("float", check="pos"),
    "gamma": Key("float", check="pos"),
    "sigma_d": Key("float", check="pos"),
    "phi": Key("float", check="pos"),
    "psi": Key("float", check="pos"),
    "sigma_target": Key("float", check="pos"),
    "mu": Key("float", 0.0),
    "a_scale": Key("float", 1.0, "pos"),
    "c_scale": Key("float", 1.0),
    # simulation
    "dt": Key("float", 1e-3, "pos"),
    "horizon": Key("float", None, "pos"),  # default 20 / rho
    "n_paths": Key("int", 1000, "posint"),
    "scheme": Key("str", "exact_gaussian", choices=SCHEMES),
    "thin": Key("int", 1, "posint"),
    "chunk_size": Key("int", 128, "posint"),
    # initial state (inventories default to zero; S_0 is their sum)
    "init_d": Key("float", 0.0),
    "init_s_target": Key("float", 0.0),
    "init_inventories": Key("floats", None),
    "agent": Key("int", 0, "nonneg"),
    # nash-check
    "deviation_scales": Key("floats", [0.05, 0.1, 0.2, 0.4]),
    "deviation_shifts": Key("floats", [0.25, 0.5]),
    "deviation_alt_rel": Key("float", 0.2, "nonneg"),
    # hjb-check
    "hjb_states": Key("int", 10_000, "posint"),
    "hjb_state_scale": Key("float", 2.0, "pos"),
    "value_paths": Key("int", 0, "nonneg"),
    "bellman_taus": Key("floats", [1.0, 2.0, 5.0]),
    # impact
    "impact_window": Key("float", 1.0, "pos"),
    "flow_threshold": Key("float", None, "nonneg"),
    "regression_paths": Key("int", 20, "posint"),
    # sweep
    "sweep_draws": Key("int", 100, "posint"),
    "sweep_n_grid": Key("ints", [3, 10, 100, 1000, 10_000]),
    "sweep_factors": Key("floats", [0.5, 0.75, 1.0, 1.5, 2.0]),
}

STATIC_KEYS = {
    "n_makers": Key("int", check="n2"),
    "gamma": Key("float", check="pos"),
    "sigma": Key("float", check="pos"),
    "mu": Key("float", 0.0),
    "total_shares": Key("float", 0.0),
    "flow_kind": Key("str", "two_point", choices=("two_point", "degenerate", "gaussian")),
    "flow_values": Key("floats", [-1.0, 1.0]),
    "flow_prob": Key("float", 0.5, "prob"),
    "flow_std": Key("float", 1.0, "pos"),
    "inventories": Key("floats", [0.0, 1.0, 2.0]),
    "degenerate_lambda": Key("float", 1.0, "pos"),
    "grid_resolution": Key("float", 1e-2, "pos"),
    "grid_a_min": Key("float", -3.0),
    "grid_a_max": Key("float", 3.0),
    "grid_b_min": Key("float", 1e-3),
    "grid_b_max": Key("float", 1.0 - 1e-3),
}


@dataclass
class ExperimentConfig:
    model: str
    seed: int
    params: object  # DynamicParams or StaticParams
    sim: SimConfig | None
    init: MarketState | None
    options: dict = field(default_factory=dict)
    out_dir: Path = Path("out")


# ---------------------------------------------------------------------------
# parsing


def _coerce(name: str, key: Key, value, problems: list):
    if value is None:
        if key.default is None:
            return None
        problems.append(f"{name}: value is missing")
        return None
    if key.kind in ("floats", "ints"):
        if not isinstance(value, list):
            value = [value]
        scalar = Key(key.kind[:-1])
        out = [_coerce(f"{name}[{i}]", scalar, v, problems) for i, v in enumerate(value)]
        return out
    if key.kind == "bool":
        if not isinstance(value, bool):
            problems.append(f"{name}: expected true/false, got {value!r}")
        return value
    if key.kind == "str":
        if not isinstance(value, str):
            problems.append(f"{name}: expected a string, got {value!r}")
            return None
        if key.choices and value not in key.choices:
            problems.append(f"{name}: must be one of {list(key.choices)}, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        problems.append(f"{name}: expected a number, got {value!r}")
        return None
    if not math.isfinite(float(value)):
        problems.append(f"{name}: must be finite, got {value!r}")
        return None
    if key.kind == "int":
        if float(value) != int(value):
            problems.append(f"{name}: expected an integer, got {value!r}")
            return None
        return int(value)
    return float(value)


_CHECKS = {
    "pos": (lambda v: v > 0, "must be > 0"),
    "nonneg": (lambda v: v >= 0, "must be >= 0"),
    "prob": (lambda v: 0 < v < 1, "must lie in (0, 1)"),
    "n3": (lambda v: v >= 3, "must be >= 3"),
    "n2": (lambda v: v >= 2, "must be >= 2"),
    "posint": (lambda v: v >= 1, "must be >= 1"),
}


def _suggest(name: str, known) -> str:
    close = [k for k in known if k.startswith(name + "_")]
    if not close:
        close = difflib.get_close_matches(name, known, n=3, cutoff=0.6)
    return f" (did you mean {' or '.join(close)}?)" if close else ""


def _parse_override(text: str, problems: list):
    if "=" not in text:
        problems.append(f"override {text!r}: expected key=value")
        return None, None
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        problems.append(f"override {key}: cannot parse {raw!r} ({exc.__class__.__name__})")
        return None, None
    return key.strip(), value


def parse_config(text: str, overrides=(), seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    """Validate a config text (plus CLI overrides) into an :class:`ExperimentConfig`.

    Raises:
        ConfigurationError: listing every violation found.
    """
    problems = []
    try:
        raw = yaml.safe_load(text) if text.strip() else {}
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config is not valid YAML: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a flat key: value mapping")
    raw = {str(k): v for k, v in raw.items()}
    for item in overrides:
        k, v = _parse_override(item, problems)
        if k is not None:
            raw[k] = v
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["out"] = out

    model = raw.get("model", "dynamic")
    if model not in ("dynamic", "static"):
        raise ConfigurationError(f"model: must be 'dynamic' or 'static', got {model!r}")
    schema = {**COMMON_KEYS, **(DYNAMIC_KEYS if model == "dynamic" else STATIC_KEYS)}

    values = {}
    for name in raw:
        if name not in schema:
            problems.append(f"unknown key {name!r}{_suggest(name, schema)}")
        elif isinstance(raw[name], dict):
            problems.append(f"{name}: nested mappings are not allowed (the config is flat)")
    for name, key in schema.items():
        if name not in raw:
            if key.default is _REQUIRED:
                problems.append(f"{name}: required key is missing")
            else:
                values[name] = list(key.default) if isinstance(key.default, list) else key.default
            continue
        if isinstance(raw[name], dict):
            continue
        value = _coerce(name, key, raw[name], problems)
        if value is not None and key.check:
            ok, msg = _CHECKS[key.check]
            items = value if isinstance(value, list) else [value]
            if any(v is not None and not ok(v) for v in items):
                problems.append(f"{name}: {msg}, got {raw[name]!r}")
        values[name] = value
    seed_value = values.get("seed")
    if seed_value is not None and not 0 <= seed_value < 2**64:
        problems.append(f"seed: must be an unsigned 64-bit integer, got {seed_value}")

    if not problems:
        cfg = _build_dynamic(values, problems) if model == "dynamic" else _build_static(values, problems)
    if problems:
        raise ConfigurationError(f"{len(problems)} config violation(s): " + "; ".join(problems), problems)
    return cfg


def _out_dir(values) -> Path:
    return Path(values["out"] if values["out"] is not None else os.environ.get("OUTPUT_DIR", "out"))


def _build_dynamic(v: dict, problems: list) -> ExperimentConfig | None:
    try:
        params = DynamicParams(v["n_makers"], v["rho"], v["gamma"], v["sigma_d"], v["phi"], v["psi"],
                               v["sigma_target"], v["mu"])
        horizon = v["horizon"] if v["horizon"] is not None else 20.0 / v["rho"]
        sim = SimConfig(v["dt"], horizon, v["n_paths"], v["seed"], v["scheme"], v["thin"], v["chunk_size"])
    except MarketModelError as exc:
        problems.append(str(exc))
        return None
    inv = v["init_inventories"]
    if inv is None:
        inv = [0.0] * params.n_makers
    if len(inv) != params.n_makers:
        problems.append(f"init_inventories: need {params.n_makers} values, got {len(inv)}")
    if v["agent"] >= params.n_makers:
        problems.append(f"agent: must be < n_makers = {params.n_makers}, got {v['agent']}")
    if problems:
        return None
    init = MarketState(0.0, v["init_d"], v["init_s_target"], float(math.fsum(inv)), inv)
    options = {k: val for k, val in v.items() if k not in ("seed", "model", "out")}
    return ExperimentConfig("dynamic", v["seed"], params, sim, init, options, _out_dir(v))


def _build_static(v: dict, problems: list) -> ExperimentConfig | None:
    try:
        kind, vals = v["flow_kind"], v["flow_values"]
        if kind == "two_point":
            if len(vals) != 2:
                raise ConfigurationError(f"flow_values: two_point flow needs 2 values, got {len(vals)}")
            flow = FlowDistribution.two_point(vals[0], v["flow_prob"], vals[1])
        elif kind == "degenerate":
            if len(vals) != 1:
                raise ConfigurationError(f"flow_values: degenerate flow needs 1 value, got {len(vals)}")
            flow = FlowDistribution.degenerate(vals[0])
        else:
            if len(vals) != 1:
                raise ConfigurationError(f"flow_values: gaussian flow needs 1 value (the mean), got {len(vals)}")
            flow = FlowDistribution.gaussian(vals[0], v["flow_std"])
        params = StaticParams(v["n_makers"], v["gamma"], v["sigma"], v["mu"], v["total_shares"], flow)
        grid = GridSpec((v["grid_a_min"], v["grid_a_max"]), (v["grid_b_min"], v["grid_b_max"]), v["grid_resolution"])
    except MarketModelError as exc:
        problems.append(str(exc))
        return None
    options = {k: val for k, val in v.items() if k not in ("seed", "model", "out")}
    options["grid"] = grid
    return ExperimentConfig("static", v["seed"], params, None, None, options, _out_dir(v))


def load_config(path: str | None, overrides=(), seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, overrides, seed, out)


# ---------------------------------------------------------------------------
# CSV output


def format_number(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_number(x) for x in row])


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool


def _write_checks(cfg: ExperimentConfig, checks: list, name: str = "checks.csv"):
    _write_csv(cfg.out_dir / name, ["check_name", "value", "threshold", "pass"],
               [(c.name, c.value, c.threshold, bool(c.passed)) for c in checks])
    width = max(len(c.name) for c in checks)
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"{status}  {c.name:<{width}}  value={c.value:.6g}  threshold={c.threshold:.6g}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK_FAILED


def _require_model(cfg: ExperimentConfig, model: str, command: str):
    if cfg.model != model:
        raise ConfigurationError(f"command {command!r} needs model: {model}, config has model: {cfg.model}")


def _constants(cfg: ExperimentConfig):
    o = cfg.options
    k = compute_constants(cfg.params)
    scales = {"lam": o["lambda_scale"], "a": o["a_scale"], "c": o["c_scale"]}
    scales = {name: s for name, s in scales.items() if s != 1.0}
    return k.perturbed(**scales) if scales else k


def _rng(cfg: ExperimentConfig, stream: int) -> np.random.Generator:
    # streams are separated from the simulator's per-path streams by a second key
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed, spawn_key=(2**32 + stream,))))


# ---------------------------------------------------------------------------
# commands


def cmd_constants(cfg: ExperimentConfig) -> int:
    _require_model(cfg, "dynamic", "constants")
    p = cfg.params
    k = _constants(cfg)
    coef = almgren_chriss_coefficients(p, k)
    named = {
        "schema_version": SCHEMA_VERSION,
        "a": k.a, "lam": k.lam, "b": k.b, "c": k.c, "xi": k.xi,
        "delta": k.delta, "kappa": k.kappa, "theta": k.theta,
        "price_impact": price_impact(p), "liquidity": liquidity(p),
        "permanent_impact": coef.permanent, "temporary_impact": coef.temporary,
    }
    _write_csv(cfg.out_dir / "constants.csv", list(named), [list(named.values())])
    for name, value in named.items():
        print(f"{name:>16} = {format_number(value)}")
    res = system_residuals(k, p)
    checks = [Check(f"residual_{n}", abs(r), 1e-10, abs(r) <= 1e-10) for n, r in zip(("xx", "xst", "xs"), res)]
    checks.append(Check("admissible_reversion", k.a / k.lam, p.rho / 2, k.lam > 0 and k.a / k.lam < p.rho / 2))
    return _write_checks(cfg, checks)


def cmd_static_eq(cfg: ExperimentConfig) -> int:
    _require_model(cfg, "static", "static-eq")
    p, o = cfg.params, cfg.options
    if p.flow.is_degenerate:
        curve = degenerate_supply_curve(p, o["degenerate_lambda"])
    else:
        curve = inventory_equilibrium(p)
    if o["lambda_scale"] != 1.0:
        curve = SupplyCurve(curve.level, curve.inventory_coef, curve.impact * o["lambda_scale"])
    named = {"schema_version": SCHEMA_VERSION, "level": curve.level, "inventory_coef": curve.inventory_coef,
             "impact": curve.impact}
    _write_csv(cfg.out_dir / "constants.csv", list(named), [list(named.values())])
    result = brute_force_verify(p, o["grid"], curve, o["inventories"])
    res = o["grid"].resolution
    checks = []
    for x, (ah, bh), (ac, bc), ok in zip(o["inventories"], result.argmax, result.candidates, result.per_inventory):
        dist = max(abs(ah - ac), abs(bh - bc))
        checks.append(Check(f"best_response_x={format_number(float(x))}", dist, res, ok))
    return _write_checks(cfg, checks)


def cmd_simulate(cfg: ExperimentConfig) -> int:
    _require_model(cfg, "dynamic", "simulate")
    p = cfg.params
    k = _constants(cfg)
    n = p.n_makers
    header = ["path_id", "t", "D", "S_tilde", "S", "N_flow", "p"]
    header += [f"X_{i + 1}" for i in range(n)] + [f"q_{i + 1}" for i in range(n)] + [f"W_{i + 1}" for i in range(n)]
    path = cfg.out_dir / "paths.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for sp in iter_simulate(cfg.sim, p, k, cfg.init):
            block = np.column_stack([sp.times, sp.d, sp.s_target, sp.s_agg, sp.flow, sp.prices,
                                     sp.inventories, sp.rates, sp.wealth])
            pid = str(sp.path_id)
            w.writerows([pid, *map(format_number, row)] for row in block.tolist())
            count += 1
    print(f"wrote {count} paths to {path}")
    return EXIT_OK


def cmd_nash_check(cfg: ExperimentConfig) -> int:
    _require_model(cfg, "dynamic", "nash-check")
    p, o = cfg.params, cfg.options
    k = _constants(cfg)
    grid = standard_policy_grid(k, o["deviation_scales"], o["deviation_shifts"], o["deviation_alt_rel"])
    report = nash_gap(grid, cfg.sim, p, k, cfg.init, agent=o["agent"])
    bad = {id(r) for r in report.profitable}
    checks = [Check(f"nash_gap:{r.policy.label}", r.gap.value, r.gap.half_width, id(r) not in bad)
              for r in report.results]
    print(f"equilibrium payoff {report.reference.value:.10g} +/- {report.reference.half_width:.3g} "
          f"({report.reference.n_paths} paths)")
    code = _write_checks(cfg, checks)
    for r in report.profitable:
        print(f"profitable deviation: {r.policy.label} gains {r.gap.value:.6g} +/- {r.gap.half_width:.3g}")
    return code


def cmd_hjb_check(cfg: ExperimentConfig) -> int:
    _require_model(cfg, "dynamic", "hjb-check")
    p, o = cfg.params, cfg.options
    k = _constants(cfg)
    agent = o["agent"]
    value = solve_value_function(p, k)
    states = _rng(cfg, 1).normal(scale=o["hjb_state_scale"], size=(o["hjb_states"], 4))
    x, d, st, s = states.T
    hjb = float(np.max(np.abs(hjb_residual(value, states, p, k))))
    foc = float(np.max(np.abs(foc_residual(value, states, p, k))))
    arg = float(np.max(np.abs(hamiltonian_argmax(value, states, p, k) - candidate_rate(k, p, x, s, st))))
    coef = float(max(abs(c) for c in hjb_coefficients(value, p, k).values()))
    checks = [
        Check("hjb_residual_max", hjb, 1e-8, hjb <= 1e-8),
        Check("foc_residual_max", foc, 1e-8, foc <= 1e-8),
        Check("argmax_vs_candidate_max", arg, 1e-10, arg <= 1e-10),
        Check("coefficient_matching_max", coef, 1e-10, coef <= 1e-10),
    ]
    if o["value_paths"] > 0:
        sim = SimConfig(cfg.sim.dt, cfg.sim.horizon, o["value_paths"], cfg.seed, cfg.sim.scheme, 1,
                        cfg.sim.chunk_size)
        init = cfg.init
        v0 = float(value(init.inventories[agent], init.d, init.s_target, init.s_agg))
        est = objective_value(iter_simulate(sim, p, k, init), p, agent)
        err = abs(est.value - v0)
        checks.append(Check("value_match_abs_error", err, est.half_width + est.tail_bound,
                            est.covers(v0, slack=est.tail_bound)))
        bell = bellman_consistency(iter_simulate(sim, p, k, init), value, p, o["bellman_taus"], agent)
        for tau, e in zip(bell.taus, bell.drift):
            checks.append(Check(f"bellman_drift_tau={format_number(tau)}", e.value, e.half_width,
                                e.covers(0.0, slack=1e-12)))
    return _write_checks(cfg, checks)


def cmd_impact(cfg: ExperimentConfig) -> int:
    _require_model(cfg, "dynamic", "impact")
    p, o = cfg.params, cfg.options
    k = _constants(cfg)

    def paths():
        return iter_simulate(cfg.sim, p, k, cfg.init)

    coef = almgren_chriss_coefficients(p, k)
    decomp = decomposition_residual(paths(), p, k)
    reg_sim = SimConfig(cfg.sim.dt, cfg.sim.horizon, min(o["regression_paths"], cfg.sim.n_paths), cfg.seed,
                        cfg.sim.scheme, cfg.sim.thin, cfg.sim.chunk_size)
    g_hat, l_hat, diag = regression_fit(iter_simulate(reg_sim, p, k, cfg.init), p)
    frac, mean_sign = roundtrip_sign_check(paths(), p, k)
    cm = cost_measures(paths(), p, k, o["impact_window"], o["flow_threshold"])
    named = {
        "schema_version": SCHEMA_VERSION,
        "permanent_impact": coef.permanent, "temporary_impact": coef.temporary,
        "permanent_fit": g_hat, "temporary_fit": l_hat, "fit_rss": diag.rss, "fit_tss": diag.tss,
        "effective_cost": cm.effective.value, "effective_half_width": cm.effective.half_width,
        "realized_cost": cm.realized.value, "realized_half_width": cm.realized.half_width,
        "cost_window": cm.window, "n_trades": cm.n_trades, "roundtrip_mean": mean_sign,
    }
    _write_csv(cfg.out_dir / "constants.csv", list(named), [list(named.values())])
    fit_err = abs(g_hat - coef.permanent) + abs(l_hat - coef.temporary)
    checks = [
        Check("decomposition_residual_max", decomp, 1e-12, decomp <= 1e-12),
        Check("regression_error", fit_err, 1e-8, fit_err <= 1e-8),
        Check("roundtrip_sign_fraction", frac, 1.0, frac == 1.0),
        Check("effective_minus_realized", cm.gap.value, cm.gap.half_width, cm.gap.value > cm.gap.half_width),
    ]
    return _write_checks(cfg, checks)


def cmd_sweep(cfg: ExperimentConfig) -> int:
    _require_model(cfg, "dynamic", "sweep")
    p, o = cfg.params, cfg.options
    rows = []
    for which in ("gamma", "sigma_d", "psi", "n_makers"):
        for f in o["sweep_factors"]:
            if which == "n_makers":
                n = max(3, int(round(p.n_makers * f)))
                q = p.replace(n_makers=n, gamma=p.gamma / p.n_makers * n)
                value = float(n)
            else:
                value = getattr(p, which) * f
                q = p.replace(**{which: value})
            rows.append((which, value, price_impact(q), liquidity(q)))
    gamma0 = p.gamma / p.n_makers
    n_grid = o["sweep_n_grid"]
    impacts, limit = competitive_limit(p, gamma0, n_grid)
    for n, imp in zip(n_grid, impacts):
        rows.append(("competitive_n", float(n), float(imp), 1.0 / float(imp)))
    _write_csv(cfg.out_dir / "sweep.csv", ["parameter", "value", "price_impact", "liquidity"], rows)

    rng = _rng(cfg, 2)
    expected = {"gamma": -1, "sigma_d": -1, "psi": 1, "n_competition": 1}
    correct = dict.fromkeys(expected, 0)
    draws = o["sweep_draws"]
    for _ in range(draws):
        q = DynamicParams(int(rng.integers(3, 51)), *rng.uniform(0.1, 5.0, size=6))
        for which, sign in expected.items():
            correct[which] += comparative_static_sign(q, which) == sign
    checks = [Check(f"comparative_static_sign:{w}", c / draws, 1.0, c == draws) for w, c in correct.items()]
    rel = abs(float(impacts[-1]) - limit) / limit
    checks.append(Check(f"competitive_limit_rel_error_n={n_grid[-1]}", rel, 0.01, rel < 0.01))
    return _write_checks(cfg, checks)


_DISPATCH = {
    "constants": cmd_constants,
    "static-eq": cmd_static_eq,
    "simulate": cmd_simulate,
    "nash-check": cmd_nash_check,
    "hjb-check": cmd_hjb_check,
    "impact": cmd_impact,
    "sweep": cmd_sweep,
}


def run(command: str, config: ExperimentConfig) -> int:
    """Run ``command``; returns 0 on success, 1 on a failed check, 2 on a config error."""
    if command not in _DISPATCH:
        print(f"error: unknown command {command!r}; choose from {', '.join(COMMANDS)}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        start = time.perf_counter()
        code = _DISPATCH[command](config)
        print(f"{command} finished in {time.perf_counter() - start:.2f}s with exit code {code}", file=sys.stderr)
        return code
    except MarketModelError as exc:
        _report(exc)
        return EXIT_CONFIG


def _report(exc: MarketModelError):
    violations = getattr(exc, "violations", None) or [str(exc)]
    print(f"configuration error ({len(violations)}):", file=sys.stderr)
    for v in violations:
        print(f"  - {v}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mmauction", description="Market-making auction experiments.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="flat YAML config file")
    ap.add_argument("--seed", type=int, help="overrides the config seed")
    ap.add_argument("--out", help="output directory (default: $OUTPUT_DIR or ./out)")
    ap.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                    help="override one config key (repeatable)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.override, args.seed, args.out)
    except MarketModelError as exc:
        _report(exc)
        return EXIT_CONFIG
    return run(args.command, cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
