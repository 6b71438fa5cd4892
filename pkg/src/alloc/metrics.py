"""Offline benchmark, regret, constraint violation and experiment summaries."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize, sparse

from . import kernels

EXHAUSTIVE_LIMIT = 10 ** 7


class OfflineSizeError(ValueError):
    """Exhaustive enumeration requested on an instance that is too large."""


@dataclass
class OfflineSolution:
    allocation: np.ndarray  # (T,) in {0..K}; empty for the LP bound
    welfare: float
    method: str

    @property
    def is_upper_bound(self) -> bool:
        return self.method == "lp_relaxation_bound"


def _lp_dual_bound(values, costs, rho, mu) -> float:
    """Lagrangian dual value at mu >= 0; an upper bound on the fractional optimum by weak duality.

    Padded by a floating-point error margin so it also dominates any float summation of
    an integer allocation's welfare.
    """
    T = values.shape[0]
    adj = values - (costs * mu).sum(axis=-1)
    per_round = np.maximum(adj.max(axis=1), 0.0)
    terms = np.concatenate([T * rho * mu, per_round])
    scale = math.fsum(np.abs(terms)) + float(np.abs(values).sum())
    return math.fsum(terms) + 4.0 * (len(terms) + costs.shape[-1] + 1) * np.finfo(float).eps * scale


def lp_relaxation_bound(values, costs, rho) -> tuple[float, np.ndarray]:
    """Optimal value of the fractional relaxation of the hindsight program, and its dual prices.

    The dual LP (prices mu on the d budgets, slacks s_t per round) is solved with HiGHS;
    the reported bound is then re-evaluated as the Lagrangian dual at the returned mu,
    which keeps it a certified upper bound regardless of solver tolerances.
    """
    values = np.asarray(values, dtype=float)
    costs = np.asarray(costs, dtype=float)
    rho = np.asarray(rho, dtype=float)
    T, K = values.shape
    d = costs.shape[2]
    # variables: [mu (d), s (T)]; constraints: mu.c_{t,i} + s_t >= v_{t,i}
    rows = T * K
    mu_part = sparse.csr_matrix(costs.reshape(rows, d))
    s_part = sparse.kron(sparse.identity(T, format="csr"), np.ones((K, 1)), format="csr")
    A = -sparse.hstack([mu_part, s_part], format="csr")
    b = -values.reshape(rows)
    c = np.concatenate([T * rho, np.ones(T)])
    res = optimize.linprog(c, A_ub=A, b_ub=b, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP relaxation failed: {res.message}")
    mu = np.maximum(res.x[:d], 0.0)
    return _lp_dual_bound(values, costs, rho, mu), mu


def offline_optimal(values, costs, rho, method: str = "exhaustive") -> OfflineSolution:
    """Hindsight welfare maximiser subject to average cost <= rho.

    ``exhaustive`` enumerates every allocation (needs (K+1)^T <= 1e7);
    ``lp_relaxation_bound`` returns the fractional optimum as an upper bound.
    """
    values = np.ascontiguousarray(values, dtype=float)
    costs = np.ascontiguousarray(costs, dtype=float)
    rho = np.asarray(rho, dtype=float)
    T, K = values.shape
    if method == "exhaustive":
        if (K + 1) ** T > EXHAUSTIVE_LIMIT:
            raise OfflineSizeError(f"(K+1)^T = {K + 1}^{T} exceeds {EXHAUSTIVE_LIMIT}; "
                                   "use method='lp_relaxation_bound'")
        welfare, alloc = kernels.enumerate_offline(values, costs, np.ascontiguousarray(T * rho))
        return OfflineSolution(np.asarray(alloc, dtype=np.int64), float(welfare), "exhaustive")
    if method in ("lp", "lp_relaxation_bound"):
        bound, _ = lp_relaxation_bound(values, costs, rho)
        return OfflineSolution(np.zeros(0, dtype=np.int64), bound, "lp_relaxation_bound")
    raise ValueError(f"unknown method {method!r}")


@dataclass
class RegretValue:
    value: float
    is_upper_bound: bool = False

    def __float__(self):
        return self.value


def regret(trial_welfare: float, offline: OfflineSolution) -> RegretValue:
    return RegretValue(offline.welfare - float(trial_welfare), offline.is_upper_bound)


def violation(cost_trace, rho, T: int | None = None) -> float:
    """l1 norm of the positive part of sum_t (c_{t,i_t} - rho)."""
    cost_trace = np.asarray(cost_trace, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if cost_trace.ndim == 1:
        cost_trace = cost_trace.reshape(-1, len(rho))
    if T is not None and cost_trace.shape[0] != T:
        raise ValueError("cost trace length differs from T")
    over = cost_trace.sum(axis=0) - cost_trace.shape[0] * rho
    return float(np.maximum(over, 0.0).sum())


def realized_costs(costs: np.ndarray, winners: np.ndarray) -> np.ndarray:
    """(T, d) costs of the realised allocation; forfeited rounds cost nothing."""
    T, _, d = costs.shape
    out = np.zeros((T, d))
    sel = winners > 0
    out[sel] = costs[np.nonzero(sel)[0], winners[sel] - 1]
    return out


@dataclass
class TrialMetrics:
    welfare: float
    regret: float
    regret_is_upper_bound: bool
    violation: float
    budget_utilization: list
    mean_abs_misreport: float
    exploration_count: int
    rejected_count: int
    benchmark: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def trial_metrics(values, reports, costs, winners, explore, rejected, rho, benchmark: str | None = "lp") -> TrialMetrics:
    values = np.asarray(values, dtype=float)
    T = values.shape[0]
    rho = np.asarray(rho, dtype=float)
    won = np.zeros(T)
    sel = winners > 0
    won[sel] = values[np.nonzero(sel)[0], winners[sel] - 1]
    welfare = float(won.sum())
    spent = realized_costs(costs, winners)
    if benchmark in ("lp", "lp_relaxation_bound", "exhaustive"):
        off = offline_optimal(values, costs, rho, "exhaustive" if benchmark == "exhaustive" else "lp_relaxation_bound")
        reg = regret(welfare, off)
        bench = off.welfare
    else:
        reg = RegretValue(float("nan"), False)
        bench = float("nan")
    return TrialMetrics(
        welfare=welfare,
        regret=reg.value,
        regret_is_upper_bound=reg.is_upper_bound,
        violation=violation(spent, rho),
        budget_utilization=[float(x) for x in spent.sum(axis=0) / (T * rho)],
        mean_abs_misreport=float(np.mean(np.abs(np.asarray(reports) - values))),
        exploration_count=int(np.sum(explore)),
        rejected_count=int(np.sum(rejected)),
        benchmark=bench,
    )


SCALARS = ("welfare", "regret", "violation", "mean_abs_misreport", "exploration_count", "rejected_count")


@dataclass
class ExperimentSummary:
    per_trial: list = field(default_factory=list)   # [(trial_index, TrialMetrics)]
    aggregates: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_trial": [{"trial": i, **m.to_dict()} for i, m in self.per_trial],
            "aggregates": self.aggregates,
            "curves": self.curves,
        }


def _stats(x: np.ndarray) -> dict:
    x = np.asarray(x, dtype=float)
    x = x[~np.isnan(x)]
    if x.size == 0:
        return {"mean": None, "std": None, "q05": None, "q50": None, "q95": None, "n": 0}
    q = np.quantile(x, [0.05, 0.5, 0.95])
    return {"mean": float(x.mean()), "std": float(x.std()), "q05": float(q[0]),
            "q50": float(q[1]), "q95": float(q[2]), "n": int(x.size)}


def summarize(traces) -> ExperimentSummary:
    """Fold trial traces (anything with ``trial_index`` and ``metrics``) into a summary.

    Traces are sorted by trial index (then by content), so the result does not depend on
    input order.
    Learning curves average all traces sharing a trial index.
    """
    if not traces:
        raise ValueError("need at least one trace")
    items = sorted(((t.trial_index, t.metrics) for t in traces),
                   key=lambda p: (p[0], repr(sorted(p[1].to_dict().items()))))
    aggregates = {name: _stats([getattr(m, name) for _, m in items]) for name in SCALARS}
    util = np.array([m.budget_utilization for _, m in items])
    aggregates["budget_utilization"] = [_stats(util[:, j]) for j in range(util.shape[1])]
    indices = sorted({i for i, _ in items})
    curves = {"trial": indices, "welfare": [], "mean_abs_misreport": [], "budget_utilization": []}
    for idx in indices:
        group = [m for i, m in items if i == idx]
        curves["welfare"].append(float(np.mean([m.welfare for m in group])))
        curves["mean_abs_misreport"].append(float(np.mean([m.mean_abs_misreport for m in group])))
        curves["budget_utilization"].append([float(x) for x in np.mean([m.budget_utilization for m in group], axis=0)])
    return ExperimentSummary(items, aggregates, curves)
