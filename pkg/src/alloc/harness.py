"""Seeded multi-trial experiment runner and output writers."""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .agents import Policy, make_policy
from .duals import (FTRLUpdater, OFTRLFPUpdater, UpdaterParams, ZeroUpdater, ftrl_etas,
                    oftrl_etas)
from .market import (AGENT, MECHANISM, ConfigError, MarketConfig, name_key, parse_schedule,
                     sample_market, stream)
from .mechanism import VANILLA_PAYMENTS, IncentiveAwareMechanism, VanillaPrimalDual
from .metrics import ExperimentSummary, TrialMetrics, summarize, trial_metrics

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
UPDATERS = ("vanilla", "ftrl", "oftrl_fp", "zero")
DEFAULT_SCHEDULE = {"ftrl": "uniform:T^1/3", "oftrl_fp": "doubling", "zero": "doubling"}


@dataclass(frozen=True)
class MechanismSpec:
    updater: str = "oftrl_fp"
    schedule: str | None = None
    eta_scale: float = 1.0
    vanilla_eta: float | None = None
    vanilla_payment: str = "none"
    fp: UpdaterParams = UpdaterParams()

    def __post_init__(self):
        if self.updater not in UPDATERS:
            raise ConfigError(f"updater must be one of {UPDATERS}, got {self.updater!r}")
        if self.vanilla_payment not in VANILLA_PAYMENTS:
            raise ConfigError(f"vanilla_payment must be one of {VANILLA_PAYMENTS}, got {self.vanilla_payment!r}")

    @property
    def name(self) -> str:
        return "vanilla" if self.updater == "vanilla" else f"lazy_{self.updater}"

    @property
    def schedule_text(self) -> str:
        return self.schedule or DEFAULT_SCHEDULE.get(self.updater, "doubling")

    def echo(self) -> dict:
        out = {"updater": self.updater, "name": self.name}
        if self.updater == "vanilla":
            out.update(vanilla_eta=self.vanilla_eta, vanilla_payment=self.vanilla_payment)
        else:
            out.update(schedule=self.schedule_text, eta_scale=self.eta_scale)
        if self.updater == "oftrl_fp":
            out.update(fp_mode=self.fp.fp_mode, fp_grid=self.fp.fp_grid, fp_refine=self.fp.fp_refine,
                       fp_tolerance=self.fp.fp_tolerance, archive_exploration=self.fp.include_exploration)
        return out


@dataclass(frozen=True)
class ExperimentPlan:
    market: MarketConfig
    mechanism: MechanismSpec = MechanismSpec()
    policies: tuple = ("truthful",)
    n_trials: int = 200
    master_seed: int = 0
    benchmark: str = "lp"
    alpha: float = 0.1
    persist_q: bool = True
    out_dir: str | None = None
    write_trace: bool = True
    emit_plot_data: bool = False

    def __post_init__(self):
        if self.n_trials < 1:
            raise ConfigError("trials must be >= 1")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.benchmark not in ("lp", "exhaustive", "none"):
            raise ConfigError(f"benchmark must be lp, exhaustive or none, got {self.benchmark!r}")
        pol = tuple(self.policies)
        if len(pol) == 1 and self.market.K > 1:
            pol = pol * self.market.K
        if len(pol) != self.market.K:
            raise ConfigError(f"need 1 or K={self.market.K} policy specs, got {len(pol)}")
        object.__setattr__(self, "policies", pol)
        try:
            self.make_policies()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        try:
            parse_schedule(self.mechanism.schedule_text, self.market.T)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def make_policies(self) -> list[Policy]:
        m = self.market
        return [make_policy(p, m.d, m.rho, m.T, m.gamma, self.alpha, self.persist_q) for p in self.policies]

    def echo(self) -> dict:
        return {
            "market": self.market.echo(),
            "mechanism": self.mechanism.echo(),
            "policies": list(self.policies),
            "trials": self.n_trials,
            "seed": self.master_seed,
            "benchmark": self.benchmark,
            "alpha": self.alpha,
            "persist_q": self.persist_q,
        }


def build_mechanism(plan: ExperimentPlan, diagnose: bool = False):
    m = plan.market
    spec = plan.mechanism
    if spec.updater == "vanilla":
        return VanillaPrimalDual(m, spec.vanilla_eta, payment=spec.vanilla_payment)
    schedule = parse_schedule(spec.schedule_text, m.T)
    if spec.updater == "ftrl":
        updater = FTRLUpdater(ftrl_etas(schedule, m.rho, spec.eta_scale), m.rho)
    elif spec.updater == "oftrl_fp":
        updater = OFTRLFPUpdater(oftrl_etas(schedule, m.rho, m.K, spec.eta_scale), spec.fp, diagnose=diagnose)
    else:
        updater = ZeroUpdater(m.d)
    return IncentiveAwareMechanism(m, schedule, updater)


@dataclass
class TrialTrace:
    trial_index: int
    mechanism: str
    values: np.ndarray
    costs: np.ndarray
    reports: np.ndarray
    winners: np.ndarray
    payments: np.ndarray
    explore: np.ndarray
    explored_agent: np.ndarray
    offered_price: np.ndarray
    rejected: np.ndarray
    lam: np.ndarray
    cumulative_cost: np.ndarray
    epoch_of_round: np.ndarray
    epochs: list = field(default_factory=list)
    metrics: TrialMetrics | None = None


def run_trial(plan: ExperimentPlan, trial_index: int, agents: list[Policy] | None = None,
              mechanism=None) -> tuple[TrialTrace, list[Policy]]:
    """Play one trial of the interaction protocol.

    Deterministic in (master seed, trial index, agent state). Agents carry learning
    state in and out, so Q-tables thread through consecutive trials.
    """
    m = plan.market
    T, K, d = m.T, m.K, m.d
    agents = agents if agents is not None else plan.make_policies()
    mech = mechanism or build_mechanism(plan)
    seed = plan.master_seed
    values, costs = sample_market(m, seed, trial_index)
    mech.reset(stream(seed, trial_index, MECHANISM, name_key(mech.name)))
    rngs = [stream(seed, trial_index, AGENT, i) for i in range(K)]
    for a in agents:
        a.begin_trial(trial_index)

    reports = np.empty((T, K))
    winners = np.zeros(T, dtype=np.int64)
    payments = np.zeros(T)
    explore = np.zeros(T, dtype=bool)
    explored_agent = np.zeros(T, dtype=np.int64)
    offered_price = np.full(T, np.nan)
    rejected = np.zeros(T, dtype=bool)
    lam = np.zeros((T, d))
    epoch_of_round = np.zeros(T, dtype=np.int64)
    adaptive = any(a.adaptive for a in agents)

    def store(lo, blk):
        n = len(blk.winners)
        sl = slice(lo - 1, lo - 1 + n)
        winners[sl] = blk.winners
        payments[sl] = blk.payments
        explore[sl] = blk.explore
        explored_agent[sl] = blk.explored_agent
        offered_price[sl] = blk.offered_price
        rejected[sl] = blk.rejected.astype(bool)
        lam[sl] = blk.lam_used

    for ell, (lo, hi) in enumerate(mech.epochs(), start=1):
        epoch_of_round[lo - 1:hi] = ell
        if not adaptive:
            for i, a in enumerate(agents):
                reports[lo - 1:hi, i] = a.reports(values[lo - 1:hi, i])
            store(lo, mech.play(reports[lo - 1:hi], costs[lo - 1:hi]))
            continue
        for t in range(lo, hi + 1):
            lam_t = mech.lam.copy()
            for i, a in enumerate(agents):
                reports[t - 1, i] = a.report(values[t - 1, i], lam_t, t, rngs[i])
            blk = mech.play(reports[t - 1:t], costs[t - 1:t])
            store(t, blk)
            w = int(blk.winners[0])
            lam_next = mech.lam.copy()
            for i, a in enumerate(agents):
                r = (values[t - 1, i] - blk.payments[0]) if w == i + 1 else 0.0
                if t < T:
                    a.observe(r, values[t, i], lam_next, t + 1)
                else:
                    a.observe(r, None, None, None)
    for a in agents:
        a.end_of_trial(trial_index)

    spent = np.zeros((T, d))
    sel = winners > 0
    spent[sel] = costs[np.nonzero(sel)[0], winners[sel] - 1]
    cumulative = np.cumsum(spent, axis=0)

    epochs = []
    for res in getattr(mech, "updates", []):
        row = {"epoch": res.epoch, "lambda": [float(x) for x in res.lam], "eta": res.eta,
               "residual": res.residual, "flagged": bool(res.flagged)}
        for k, v in res.extra.items():
            row[k] = [float(x) for x in v] if isinstance(v, np.ndarray) else v
        epochs.append(row)
    hist = getattr(mech, "history", None)
    if hist is not None:
        for row, g in zip(epochs, hist.gradients):
            row["grad_norm"] = float(np.linalg.norm(g))

    trace = TrialTrace(trial_index, mech.name, values, costs, reports, winners, payments, explore,
                       explored_agent, offered_price, rejected, lam, cumulative, epoch_of_round, epochs)
    trace.metrics = trial_metrics(values, reports, costs, winners, explore, rejected, m.rho_array,
                                  None if plan.benchmark == "none" else plan.benchmark)
    check_trace(trace, plan)
    return trace, agents


def check_trace(trace: TrialTrace, plan: ExperimentPlan) -> None:
    """Safety (zero violation) and, for lazy mechanisms, one dual per epoch."""
    if trace.metrics.violation != 0.0:
        raise AssertionError(f"trial {trace.trial_index}: constraint violation {trace.metrics.violation}")
    if plan.mechanism.updater != "vanilla":
        for ell in np.unique(trace.epoch_of_round):
            block = trace.lam[trace.epoch_of_round == ell]
            if not np.all(block == block[0]):
                raise AssertionError(f"trial {trace.trial_index}: dual changed inside epoch {ell}")


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("ALLOC_WORKERS", "1")))
    except ValueError:
        return 1


def _run_one(args):
    plan, n = args
    trace, _ = run_trial(plan, n)
    return trace


def iter_trials(plan: ExperimentPlan):
    """Yield traces for trials 0..N-1 in order.

    Learning agents run sequentially on one worker; otherwise trials are independent and
    may be spread over ``ALLOC_WORKERS`` processes (results do not depend on the count).
    """
    agents = plan.make_policies()
    workers = _worker_count()
    if workers > 1 and not any(a.adaptive for a in agents):
        with ProcessPoolExecutor(workers) as pool:
            yield from pool.map(_run_one, [(plan, n) for n in range(plan.n_trials)])
        return
    mech = build_mechanism(plan)
    for n in range(plan.n_trials):
        trace, agents = run_trial(plan, n, agents, mech)
        yield trace


def run_experiment(plan: ExperimentPlan, keep_traces: bool = False) -> ExperimentSummary:
    """Run all trials, summarise, and write outputs when ``plan.out_dir`` is set."""
    writer = OutputWriter(plan) if plan.out_dir else None
    light = []
    traces = []
    try:
        for trace in iter_trials(plan):
            if writer:
                writer.add(trace)
            light.append(_Light(trace.trial_index, trace.metrics))
            if keep_traces:
                traces.append(trace)
        summary = summarize(light)
        if writer:
            writer.finish(summary)
    finally:
        if writer:
            writer.close()
    if keep_traces:
        summary.traces = traces
    return summary


@dataclass
class _Light:
    trial_index: int
    metrics: TrialMetrics


# ---------------------------------------------------------------------------
# Fixed-point diagnostics
# ---------------------------------------------------------------------------


def _rel(a, b) -> tuple[float, bool]:
    """|a - b| / |a|, or the absolute difference (flagged) when |a| = 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    num = float(np.linalg.norm(a - b))
    den = float(np.linalg.norm(a))
    if den == 0.0:
        return num, True
    return num / den, False


def fixed_point_diagnostics(plan: ExperimentPlan, trials: int | None = None) -> list[dict]:
    """Per-epoch comparison of the exact-residual and approximate fixed-point solutions.

    The mechanism runs with the plan's fixed-point mode; at every epoch both modes and
    plain FTRL are evaluated on the same history and learning rate.
    """
    if plan.mechanism.updater != "oftrl_fp":
        raise ConfigError("fpdiag needs updater = oftrl_fp")
    rows = []
    agents = plan.make_policies()
    mech = build_mechanism(plan, diagnose=True)
    for n in range(trials or plan.n_trials):
        trace, agents = run_trial(plan, n, agents, mech)
        for e in trace.epochs:
            rel_ea, flag_ea = _rel(e["lam_exact"], e["lam_approx"])
            rel_ef, flag_ef = _rel(e["lam_exact"], e["lam_ftrl"])
            rows.append({
                "trial": n, "epoch": e["epoch"], "eta": e["eta"],
                "lambda_exact": e["lam_exact"], "lambda_approx": e["lam_approx"], "lambda_ftrl": e["lam_ftrl"],
                "residual_exact": e["residual_exact"], "residual_approx": e["residual_approx"],
                "rel_diff_exact_approx": rel_ea, "rel_diff_exact_ftrl": rel_ef,
                "absolute_flag": flag_ea, "absolute_flag_ftrl": flag_ef,
                "grad_norm": e.get("grad_norm", 0.0),
            })
    return rows


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _f(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if np.isnan(x) else repr(x)


def trace_header(K: int, d: int) -> list[str]:
    cols = ["trial", "t", "epoch"] + [f"lambda_{j}" for j in range(d)]
    cols += ["exploration", "explored_agent", "offered_price"]
    cols += [f"report_{i}" for i in range(1, K + 1)] + [f"value_{i}" for i in range(1, K + 1)]
    cols += [f"cost_{i}_{j}" for i in range(1, K + 1) for j in range(d)]
    cols += ["winner", "payment", "safety_rejected"] + [f"cumulative_cost_{j}" for j in range(d)]
    return cols


def trace_rows(tr: TrialTrace):
    T, K = tr.reports.shape
    for t in range(T):
        row = [tr.trial_index, t + 1, int(tr.epoch_of_round[t])] + [_f(x) for x in tr.lam[t]]
        row += [_f(bool(tr.explore[t])), int(tr.explored_agent[t]) if tr.explore[t] else "",
                _f(tr.offered_price[t])]
        row += [_f(x) for x in tr.reports[t]] + [_f(x) for x in tr.values[t]]
        row += [_f(x) for x in tr.costs[t].ravel()]
        row += [int(tr.winners[t]), _f(tr.payments[t]), _f(bool(tr.rejected[t]))]
        row += [_f(x) for x in tr.cumulative_cost[t]]
        yield row


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(type(o))


def dump_json(obj, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, default=_json_default)
        fh.write("\n")


class OutputWriter:
    """Streams per-round traces and per-epoch diagnostics; writes summaries at the end."""

    def __init__(self, plan: ExperimentPlan):
        self.plan = plan
        self.dir = Path(plan.out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        m = plan.market
        self._files = []
        self.trace = None
        if plan.write_trace:
            fh = open(self.dir / "trace.csv", "w", newline="")
            self._files.append(fh)
            self.trace = csv.writer(fh, lineterminator="\n")
            self.trace.writerow(trace_header(m.K, m.d))
        fh = open(self.dir / "epochs.csv", "w", newline="")
        self._files.append(fh)
        self.epochs = csv.writer(fh, lineterminator="\n")
        self.epochs.writerow(["trial", "epoch"] + [f"lambda_{j}" for j in range(m.d)]
                             + ["eta", "residual", "flagged", "grad_norm"])

    def add(self, tr: TrialTrace) -> None:
        if self.trace is not None:
            self.trace.writerows(trace_rows(tr))
        for e in tr.epochs:
            self.epochs.writerow([tr.trial_index, e["epoch"]] + [_f(x) for x in e["lambda"]]
                                 + [_f(e["eta"]), _f(e["residual"]), _f(e["flagged"]), _f(e.get("grad_norm", 0.0))])

    def finish(self, summary: ExperimentSummary) -> None:
        plan = self.plan
        doc = {
            "schema_version": SCHEMA_VERSION,
            "kind": "experiment_summary",
            "mechanism": plan.mechanism.name,
            "config": plan.echo(),
            "seeding": {"master_seed": plan.master_seed, "generator": "philox4x64",
                        "paired_market_streams": True},
            **summary.to_dict(),
        }
        dump_json(doc, self.dir / "summary.json")
        d = plan.market.d
        with open(self.dir / "curves.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trial", "welfare", "mean_abs_misreport"] + [f"utilization_{j}" for j in range(d)])
            c = summary.curves
            for k, idx in enumerate(c["trial"]):
                w.writerow([idx, _f(c["welfare"][k]), _f(c["mean_abs_misreport"][k])]
                           + [_f(u) for u in c["budget_utilization"][k]])
        if plan.emit_plot_data:
            write_plot_data({plan.mechanism.name: summary}, self.dir / "plot_data.csv")

    def close(self) -> None:
        for fh in self._files:
            fh.close()
        self._files = []


def write_plot_data(summaries: dict, path: Path) -> None:
    """Tidy long-format CSV: mechanism, trial, metric, value."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mechanism", "trial", "metric", "value"])
        for name in sorted(summaries):
            c = summaries[name].curves
            for k, idx in enumerate(c["trial"]):
                w.writerow([name, idx, "welfare", _f(c["welfare"][k])])
                w.writerow([name, idx, "mean_abs_misreport", _f(c["mean_abs_misreport"][k])])
                for j, u in enumerate(c["budget_utilization"][k]):
                    w.writerow([name, idx, f"utilization_{j}", _f(u)])


def compare(plans: list[ExperimentPlan], out_dir: str | None = None) -> dict:
    """Run several mechanisms on shared market streams; summaries keyed by mechanism name."""
    names = [p.mechanism.name for p in plans]
    if len(set(names)) != len(names):
        raise ConfigError(f"compare needs distinct mechanisms, got {names}")
    seeds = {p.master_seed for p in plans}
    if len(seeds) != 1:
        raise ConfigError("compare needs one shared seed across configs")
    out = {}
    for p in plans:
        if out_dir is not None:
            p = replace(p, out_dir=str(Path(out_dir) / p.mechanism.name))
        out[p.mechanism.name] = run_experiment(p)
    if out_dir is not None:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "kind": "comparison",
            "paired_market_streams": True,
            "master_seed": plans[0].master_seed,
            "mechanisms": {k: {"config": p.echo(), "aggregates": out[k].aggregates}
                           for k, p in zip(names, plans)},
        }
        dump_json(doc, Path(out_dir) / "compare.json")
        write_plot_data(out, Path(out_dir) / "plot_data.csv")
    return out
