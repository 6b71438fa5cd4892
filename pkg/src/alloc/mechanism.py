"""One-round decisions of the incentive-aware mechanism and its per-trial state.

The scalar functions (``standard_allocate``, ``exploration_allocate``, ``safety_check``,
``decide_round``) are the readable reference path. ``IncentiveAwareMechanism`` and
``VanillaPrimalDual`` run blocks of rounds through the compiled kernels and are what
the experiment harness drives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .duals import DualUpdater, LossHistory, UpdateResult, vanilla_dual_step
from .market import EpochSchedule, MarketConfig, clip_to_dual_region, in_dual_region


def standard_allocate(reports, costs, lam) -> tuple[int, float]:
    """Cost-adjusted second-price allocation.

    The forfeit option 0 takes part with adjusted report 0. Ties go to the smallest
    index, so the forfeit wins any tie at 0. Returns (winner, payment) with agents
    numbered 1..K.
    """
    reports = np.asarray(reports, dtype=float)
    costs = np.asarray(costs, dtype=float).reshape(len(reports), -1)
    lamc = (costs * np.asarray(lam, dtype=float)).sum(axis=-1)
    adj = np.concatenate(([0.0], reports - lamc))
    winner = int(np.argmax(adj))
    if winner == 0:
        return 0, 0.0
    others = np.delete(adj, winner)
    return winner, float(lamc[winner - 1] + others.max())


def exploration_allocate(report: float, price: float, agent: int) -> tuple[int, float]:
    """Take-it-or-leave-it offer of ``price`` to ``agent``; accepted on report >= price."""
    if report >= price:
        return agent, float(price)
    return 0, 0.0


def safety_check(cumulative_cost, candidate_cost, T: int, rho) -> bool:
    """True (accept) unless the candidate would push some coordinate above T * rho."""
    cumulative_cost = np.asarray(cumulative_cost, dtype=float)
    candidate_cost = np.asarray(candidate_cost, dtype=float)
    budget = T * np.asarray(rho, dtype=float)
    return not bool(np.any(cumulative_cost + candidate_cost > budget))


@dataclass
class RoundOutcome:
    winner: int
    payment: float
    was_exploration: bool = False
    explored_agent: int | None = None
    offered_price: float | None = None
    safety_rejected: bool = False


@dataclass
class MechanismState:
    schedule: EpochSchedule
    rho: np.ndarray
    lam: np.ndarray
    epoch_index: int = 1
    round: int = 1
    cumulative_cost: np.ndarray = None
    epoch_gradient: np.ndarray = None
    epoch_loss_history: list = field(default_factory=list)

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        d = len(self.rho)
        if self.cumulative_cost is None:
            self.cumulative_cost = np.zeros(d)
        if self.epoch_gradient is None:
            self.epoch_gradient = np.zeros(d)
        assert in_dual_region(self.lam, self.rho)

    @property
    def T(self) -> int:
        return self.schedule.T

    @property
    def epoch(self) -> tuple[int, int]:
        return self.schedule.epochs[self.epoch_index - 1]

    @property
    def epoch_len(self) -> int:
        lo, hi = self.epoch
        return hi - lo + 1


def exploration_draw(u) -> tuple[float, int, float]:
    """Map three uniforms to (coin, 0-based agent slot fraction, price)."""
    return float(u[0]), float(u[1]), float(u[2])


def _agent_from_uniform(u: float, K: int) -> int:
    return 1 + min(int(u * K), K - 1)


def decide_round(state: MechanismState, reports, costs, rng: np.random.Generator) -> tuple[RoundOutcome, MechanismState]:
    """Play round ``state.round`` with reports already collected.

    Three uniforms are drawn from ``rng`` every round (exploration coin, agent, price)
    whether or not the round explores, so the stream stays aligned.
    """
    lo, hi = state.epoch
    if not lo <= state.round <= hi:
        raise ValueError(f"round {state.round} outside current epoch {state.epoch}")
    reports = np.asarray(reports, dtype=float)
    costs = np.asarray(costs, dtype=float).reshape(len(reports), -1)
    K = len(reports)
    coin, ua, price = exploration_draw(rng.random(3))
    if coin < 1.0 / state.epoch_len:
        agent = _agent_from_uniform(ua, K)
        winner, payment = exploration_allocate(reports[agent - 1], price, agent)
        outcome = RoundOutcome(winner, payment, True, agent, price)
    else:
        winner, payment = standard_allocate(reports, costs, state.lam)
        outcome = RoundOutcome(winner, payment)
    if winner != 0:
        if safety_check(state.cumulative_cost, costs[winner - 1], state.T, state.rho):
            state.cumulative_cost = state.cumulative_cost + costs[winner - 1]
        else:
            outcome.winner, outcome.payment, outcome.safety_rejected = 0, 0.0, True
    spent = costs[outcome.winner - 1] if outcome.winner else np.zeros_like(state.rho)
    state.epoch_gradient = state.epoch_gradient + (state.rho - spent)
    state.round += 1
    return outcome, state


def advance_epoch(state: MechanismState, updater: DualUpdater, history: LossHistory,
                  epoch_reports=None, epoch_costs=None, epoch_explore=None) -> tuple[MechanismState, UpdateResult]:
    """Close the current epoch and fetch the next dual from ``updater``."""
    history.add_epoch(state.epoch_gradient, epoch_reports, epoch_costs, epoch_explore)
    state.epoch_loss_history.append(state.epoch_gradient.copy())
    state.epoch_gradient = np.zeros_like(state.rho)
    state.epoch_index += 1
    result = updater.update(history, state.epoch_index, state.epoch_len)
    state.lam = result.lam
    assert in_dual_region(state.lam, state.rho)
    return state, result


@dataclass
class Block:
    """Outcomes of a contiguous run of rounds."""

    winners: np.ndarray
    payments: np.ndarray
    rejected: np.ndarray
    explore: np.ndarray
    explored_agent: np.ndarray
    offered_price: np.ndarray
    lam_used: np.ndarray


class IncentiveAwareMechanism:
    """Epoch-lazy duals, exploration rounds, cost-adjusted second price, safety rejection."""

    lazy = True

    def __init__(self, market: MarketConfig, schedule: EpochSchedule, updater: DualUpdater,
                 name: str | None = None):
        if schedule.T != market.T:
            raise ValueError("schedule does not cover the market horizon")
        self.market = market
        self.schedule = schedule
        self.updater = updater
        self.name = name or f"lazy_{updater.name}"

    def reset(self, rng: np.random.Generator) -> None:
        m = self.market
        self.draws = rng.random((m.T, 3))
        self.state = MechanismState(self.schedule, m.rho_array, np.zeros(m.d))
        self.history = LossHistory(m.rho_array, m.K, include_exploration=getattr(self.updater, "include_exploration", True))
        self.budget = m.budget
        self.updates: list[UpdateResult] = []
        self._epoch_rows: list[tuple] = []
        result = self.updater.update(self.history, 1, self.state.epoch_len)
        self.state.lam = result.lam
        self.updates.append(result)

    @property
    def lam(self) -> np.ndarray:
        return self.state.lam

    def epochs(self):
        return self.schedule.epochs

    def play(self, reports: np.ndarray, costs: np.ndarray) -> Block:
        """Resolve the next ``len(reports)`` rounds; must not straddle an epoch boundary."""
        st = self.state
        n = reports.shape[0]
        t0 = st.round
        lo, hi = st.epoch
        if not (lo <= t0 and t0 + n - 1 <= hi):
            raise ValueError("block straddles an epoch boundary")
        K = self.market.K
        dr = self.draws[t0 - 1:t0 - 1 + n]
        explore = (dr[:, 0] < 1.0 / st.epoch_len).astype(np.uint8)
        agent = (1 + np.minimum((dr[:, 1] * K).astype(np.int64), K - 1)).astype(np.int64)
        price = np.ascontiguousarray(dr[:, 2])
        reports = np.ascontiguousarray(reports, dtype=float)
        costs = np.ascontiguousarray(costs, dtype=float)
        lam_in_force = st.lam.copy()
        win, pay, rej = kernels.resolve_rounds(reports, costs, st.lam, explore, agent, price,
                                               st.cumulative_cost, self.budget)
        self._epoch_rows.append((reports, costs, win, explore))
        st.round += n
        if st.round > hi:
            self._close_epoch()
        ex = explore.astype(bool)
        return Block(win, pay, rej, ex, np.where(ex, agent, 0), np.where(ex, price, np.nan),
                     np.broadcast_to(lam_in_force, (n, self.market.d)))

    def _close_epoch(self) -> None:
        st = self.state
        reports = np.concatenate([r[0] for r in self._epoch_rows])
        costs = np.concatenate([r[1] for r in self._epoch_rows])
        win = np.concatenate([r[2] for r in self._epoch_rows])
        explore = np.concatenate([r[3] for r in self._epoch_rows]).astype(bool)
        self._epoch_rows = []
        st.epoch_gradient = epoch_gradient(costs, win, st.rho)
        if st.epoch_index < len(self.schedule):
            st, result = advance_epoch(st, self.updater, self.history, reports, costs, explore)
            self.updates.append(result)
        else:
            self.history.add_epoch(st.epoch_gradient, reports, costs, explore)
            st.epoch_loss_history.append(st.epoch_gradient.copy())


def epoch_gradient(costs: np.ndarray, winners: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Sum over rounds of rho - c_{t, i_t} (forfeit costs 0), accumulated in round order."""
    n = len(winners)
    spent = np.zeros((n, len(rho)))
    sel = winners > 0
    spent[sel] = costs[np.nonzero(sel)[0], winners[sel] - 1]
    if n == 0:
        return np.zeros(len(rho))
    return np.cumsum(rho - spent, axis=0)[-1]


VANILLA_PAYMENTS = ("none", "second_price")


class VanillaPrimalDual:
    """Per-round projected dual subgradient baseline with the same allocation and safety rule.

    ``payment="none"`` charges nothing, as in a plain online allocation algorithm;
    ``"second_price"`` charges the cost-adjusted second price of the standard rounds.
    """

    lazy = False

    def __init__(self, market: MarketConfig, eta: float | None = None, name: str = "vanilla",
                 payment: str = "none"):
        if payment not in VANILLA_PAYMENTS:
            raise ValueError(f"vanilla payment must be one of {VANILLA_PAYMENTS}, got {payment!r}")
        self.market = market
        self.eta = float(eta) if eta is not None else 1.0 / np.sqrt(market.T)
        self.name = name
        self.payment = payment
        self.schedule = EpochSchedule(((1, market.T),))

    def reset(self, rng: np.random.Generator) -> None:
        m = self.market
        self.lam_state = np.zeros(m.d)
        self.cum = np.zeros(m.d)
        self.budget = m.budget
        self.round = 1
        self.updates = []

    @property
    def lam(self) -> np.ndarray:
        return self.lam_state

    def epochs(self):
        return self.schedule.epochs

    def play(self, reports: np.ndarray, costs: np.ndarray) -> Block:
        n = reports.shape[0]
        reports = np.ascontiguousarray(reports, dtype=float)
        costs = np.ascontiguousarray(costs, dtype=float)
        win, pay, rej, used = kernels.resolve_vanilla(reports, costs, self.lam_state, self.market.rho_array,
                                                      self.eta, self.cum, self.budget)
        if self.payment == "none":
            pay = np.zeros(n)
        self.round += n
        none = np.zeros(n, dtype=bool)
        return Block(win, pay, rej, none, np.zeros(n, dtype=np.int64), np.full(n, np.nan), used)

    @property
    def cumulative_cost(self) -> np.ndarray:
        return self.cum


def vanilla_reference(reports, costs, rho, eta, T, payment: str = "none"):
    """Scalar per-round reference of the vanilla baseline (for cross-checking the kernel)."""
    rho = np.asarray(rho, dtype=float)
    lam = np.zeros(len(rho))
    cum = np.zeros(len(rho))
    out = []
    for u, c in zip(reports, costs):
        w, p = standard_allocate(u, c, lam)
        rejected = False
        if w and not safety_check(cum, c[w - 1], T, rho):
            w, p, rejected = 0, 0.0, True
        spent = c[w - 1] if w else np.zeros_like(rho)
        cum = cum + spent
        out.append((w, p if payment == "second_price" else 0.0, rejected, lam.copy()))
        lam = vanilla_dual_step(lam, spent, rho, eta)
    return out


__all__ = [
    "standard_allocate", "exploration_allocate", "safety_check", "decide_round", "advance_epoch",
    "MechanismState", "RoundOutcome", "IncentiveAwareMechanism", "VanillaPrimalDual", "Block",
    "epoch_gradient", "clip_to_dual_region",
]
