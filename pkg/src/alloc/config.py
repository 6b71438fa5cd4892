"""Flat ``key = value`` experiment configuration files.

Grammar: one ``key = value`` per line, ``#`` or ``;`` starts a comment line, keys are
case-insensitive. Per-agent keys take a ``.i`` suffix (1-based) and override the
unsuffixed key for that agent.

Market
    T, K, d              horizon, agents, constraints (defaults 1000, 3, 1)
    rho                  one number or a comma list of d numbers (default 0.5)
    gamma                agent discount factor (default 0.9)
    value_dist[.i]       point(x) | uniform(a,b) | truncnormal(mu,sigma,a,b)
    cost_dist[.i]        as above, plus uniform_rho(a,b) = Unif[a rho_j, b rho_j];
                         ``;`` separates per-coordinate specs
Mechanism
    updater              vanilla | ftrl | oftrl_fp | zero (default oftrl_fp)
    schedule             doubling | uniform:<L> | uniform:T^1/3 | uniform:T^2/3
    eta_scale, vanilla_eta
    vanilla_payment      none | second_price (what the baseline's winner pays)
    fp_mode              exact | approx
    fp_grid, fp_refine, fp_tolerance, archive_exploration
Agents and run
    policy[.i]           truthful | shift(<delta>) | q_learning
    alpha, persist_q     Q-learning step size and cross-trial table persistence
    trials, seed, benchmark (lp | exhaustive | none)
    write_trace, emit_plot_data

Precedence, lowest to highest: built-in defaults, config file, ``--set key=value``
command-line overrides, dedicated flags (``--seed``, ``--trials``, ``--out``).
"""

from __future__ import annotations

import configparser
import re
from pathlib import Path

from .duals import UpdaterParams
from .harness import ExperimentPlan, MechanismSpec
from .market import ConfigError, MarketConfig, parse_cost_distribution, parse_distribution

DEFAULTS = {
    "t": "1000", "k": "3", "d": "1", "rho": "0.5", "gamma": "0.9",
    "value_dist": "uniform(0,1)", "cost_dist": "uniform_rho(0.7,1.3)",
    "updater": "oftrl_fp", "eta_scale": "1.0", "vanilla_payment": "none",
    "fp_mode": "exact", "fp_refine": "20", "fp_tolerance": "1e-3", "archive_exploration": "true",
    "policy": "truthful", "alpha": "0.1", "persist_q": "true",
    "trials": "200", "seed": "0", "benchmark": "lp",
    "write_trace": "true", "emit_plot_data": "false",
}

KNOWN = set(DEFAULTS) | {"schedule", "vanilla_eta", "fp_grid"}
PER_AGENT = ("value_dist", "cost_dist", "policy")
_SUFFIXED = re.compile(r"^(value_dist|cost_dist|policy)\.(\d+)$")


def read_config_text(text: str) -> dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",), delimiters=("=",))
    try:
        parser.read_string("[plan]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    return {k.lower(): v.strip() for k, v in parser["plan"].items()}


def read_config(path: str | Path) -> dict[str, str]:
    return read_config_text(Path(path).read_text())


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip().lower()] = v.strip()
    return out


def _bool(s: str, key: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {s!r}")


def _num(kv, key, cast):
    try:
        return cast(kv[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot read {kv[key]!r} as {cast.__name__}") from exc


def build_plan(kv: dict[str, str], out_dir: str | None = None) -> ExperimentPlan:
    """Turn merged key/value pairs into a validated plan (raises ConfigError)."""
    for k in kv:
        if k not in KNOWN and not _SUFFIXED.match(k):
            raise ConfigError(f"unknown config key {k!r}")
    kv = {**DEFAULTS, **kv}
    T, K, d = _num(kv, "t", int), _num(kv, "k", int), _num(kv, "d", int)
    if K < 1 or d < 1:
        raise ConfigError("K and d must be positive")
    try:
        rho = [float(x) for x in kv["rho"].split(",")]
    except ValueError as exc:
        raise ConfigError(f"rho: cannot parse {kv['rho']!r}") from exc
    if len(rho) == 1:
        rho = rho * d
    if len(rho) != d:
        raise ConfigError(f"rho has {len(rho)} entries, expected d={d}")
    for i in range(1, K + 1):
        for key in PER_AGENT:
            kv.setdefault(f"{key}.{i}", kv[key])
    for k in kv:
        m = _SUFFIXED.match(k)
        if m and not 1 <= int(m.group(2)) <= K:
            raise ConfigError(f"{k}: agent index outside 1..{K}")
    values = tuple(parse_distribution(kv[f"value_dist.{i}"]) for i in range(1, K + 1))
    costs = tuple(parse_cost_distribution(kv[f"cost_dist.{i}"], rho) for i in range(1, K + 1))
    market = MarketConfig(T=T, K=K, d=d, rho=tuple(rho), gamma=_num(kv, "gamma", float),
                          value_dists=values, cost_dists=costs)
    try:
        fp = UpdaterParams(
            eta_scale=_num(kv, "eta_scale", float),
            fp_mode=kv["fp_mode"],
            fp_grid=_num(kv, "fp_grid", int) if "fp_grid" in kv else None,
            fp_refine=_num(kv, "fp_refine", int),
            fp_tolerance=_num(kv, "fp_tolerance", float),
            include_exploration=_bool(kv["archive_exploration"], "archive_exploration"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    mech = MechanismSpec(
        updater=kv["updater"].lower(),
        schedule=kv.get("schedule"),
        eta_scale=fp.eta_scale,
        vanilla_eta=_num(kv, "vanilla_eta", float) if "vanilla_eta" in kv else None,
        vanilla_payment=kv["vanilla_payment"].lower(),
        fp=fp,
    )
    seed = _num(kv, "seed", int)
    alpha = _num(kv, "alpha", float)
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    return ExperimentPlan(
        market=market,
        mechanism=mech,
        policies=tuple(kv[f"policy.{i}"] for i in range(1, K + 1)),
        n_trials=_num(kv, "trials", int),
        master_seed=seed,
        benchmark=kv["benchmark"].lower(),
        alpha=alpha,
        persist_q=_bool(kv["persist_q"], "persist_q"),
        out_dir=out_dir,
        write_trace=_bool(kv["write_trace"], "write_trace"),
        emit_plot_data=_bool(kv["emit_plot_data"], "emit_plot_data"),
    )


def load_plan(path: str | Path | None, overrides: dict[str, str] | None = None,
              out_dir: str | None = None) -> ExperimentPlan:
    kv = read_config(path) if path is not None else {}
    kv.update(overrides or {})
    return build_plan(kv, out_dir)
