"""Agent reporting policies: truthful, constant-shift and tabular Q-learning."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

N_BINS = 10
ACTION_REPORTS = (np.arange(N_BINS) + 0.5) / N_BINS  # bin midpoints 0.05 .. 0.95


def discretize(x: float, bins: int = N_BINS) -> int:
    """Equal-width bin of x in [0, 1]; the right edge belongs to the last bin."""
    return min(int(x * bins), bins - 1)


class Policy:
    """Base class. ``adaptive`` policies depend on history and must be run round by round."""

    adaptive = False
    kind = "base"

    def begin_trial(self, trial_index: int) -> None:
        pass

    def report(self, v: float, lam, t: int, rng: np.random.Generator | None = None) -> float:
        raise NotImplementedError

    def reports(self, values: np.ndarray) -> np.ndarray:
        """Vectorised reports for non-adaptive policies."""
        return np.array([self.report(v, None, 0) for v in values])

    def observe(self, reward: float, v_next: float | None, lam_next, t_next: int | None) -> None:
        pass

    def end_of_trial(self, trial_index: int) -> None:
        pass


class Truthful(Policy):
    kind = "truthful"

    def report(self, v, lam=None, t=0, rng=None):
        return float(v)

    def reports(self, values):
        return np.asarray(values, dtype=float).copy()

    def spec(self):
        return "truthful"


class ConstantShift(Policy):
    kind = "constant_shift"

    def __init__(self, delta: float):
        self.delta = float(delta)

    def report(self, v, lam=None, t=0, rng=None):
        return min(max(v + self.delta, 0.0), 1.0)

    def reports(self, values):
        return np.clip(np.asarray(values, dtype=float) + self.delta, 0.0, 1.0)

    def spec(self):
        return f"shift({self.delta!r})"


@dataclass(frozen=True)
class QLearningParams:
    alpha: float = 0.1
    gamma: float = 0.9
    epsilon_decay: float = 0.995

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")

    def epsilon(self, n: int) -> float:
        return self.epsilon_decay ** n


class QTable:
    """Q[t_bin, lam_bin_1..lam_bin_d, v_bin, action], all zeros initially."""

    def __init__(self, d: int, values: np.ndarray | None = None):
        self.d = d
        shape = (N_BINS,) * (2 + d) + (N_BINS,)
        self.q = np.zeros(shape) if values is None else np.asarray(values, dtype=float).reshape(shape)

    def state(self, t: int, T: int, lam, rho, v: float) -> tuple:
        lam_bins = tuple(discretize(min(max(l * r, 0.0), 1.0)) for l, r in zip(lam, rho))
        return (discretize((t - 1) / T),) + lam_bins + (discretize(v),)

    def update(self, s: tuple, a: int, r: float, s_next: tuple | None, params: QLearningParams) -> None:
        """One Q-learning step; ``s_next=None`` is the absorbing terminal state with value 0."""
        nxt = 0.0 if s_next is None else float(self.q[s_next].max())
        key = s + (a,)
        self.q[key] += params.alpha * (r + params.gamma * nxt - self.q[key])

    def dumps(self) -> bytes:
        buf = io.BytesIO()
        np.save(buf, self.q, allow_pickle=False)
        return buf.getvalue()

    @classmethod
    def loads(cls, data: bytes) -> "QTable":
        q = np.load(io.BytesIO(data), allow_pickle=False)
        return cls(q.ndim - 3, q)


class QLearner(Policy):
    """Epsilon-greedy tabular Q-learner whose table persists across trials.

    State is (time bin, dual bins normalised by rho, value bin); actions are ten report
    bins played at their midpoints. The update for round t runs once round t+1's state
    is known, or against the absorbing state after the final round.
    """

    adaptive = True
    kind = "q_learning"

    def __init__(self, d: int, rho, T: int, params: QLearningParams = QLearningParams(),
                 table: QTable | None = None, persist: bool = True):
        self.d = d
        self.rho = tuple(float(r) for r in rho)
        self.T = T
        self.params = params
        self.table = table or QTable(d)
        self.persist = persist
        self.epsilon = params.epsilon(0)
        self.trial_index = 0
        self._pending = None
        self.value_history: list[float] = []

    def spec(self):
        return "q_learning"

    def begin_trial(self, trial_index: int) -> None:
        self.trial_index = trial_index
        self.epsilon = self.params.epsilon(trial_index)
        self._pending = None
        self.value_history = []
        if not self.persist:
            self.table = QTable(self.d)

    def greedy(self, s: tuple) -> int:
        # np.argmax keeps the lowest index among ties
        return int(np.argmax(self.table.q[s]))

    def act(self, s: tuple, rng: np.random.Generator) -> int:
        if rng.random() < self.epsilon:
            return int(rng.integers(N_BINS))
        return self.greedy(s)

    def report(self, v, lam, t, rng=None):
        s = self.table.state(t, self.T, lam, self.rho, v)
        a = self.act(s, rng) if rng is not None else self.greedy(s)
        self._pending = (s, a)
        self.value_history.append(float(v))
        return float(ACTION_REPORTS[a])

    def observe(self, reward, v_next, lam_next, t_next):
        if self._pending is None:
            return
        s, a = self._pending
        s_next = None if t_next is None else self.table.state(t_next, self.T, lam_next, self.rho, v_next)
        self.table.update(s, a, reward, s_next, self.params)
        self._pending = None

    def end_of_trial(self, trial_index: int) -> None:
        self.epsilon = self.params.epsilon(trial_index + 1)
        self.value_history = []


def q_update(table: QTable, s: tuple, a: int, r: float, s_next: tuple | None, params: QLearningParams) -> None:
    table.update(s, a, r, s_next, params)


def report(policy: Policy, v: float, lam, t: int, rng: np.random.Generator | None = None) -> float:
    return policy.report(v, lam, t, rng)


def end_of_trial(policy: Policy, trial_index: int) -> Policy:
    policy.end_of_trial(trial_index)
    return policy


def make_policy(spec: str, d: int, rho, T: int, gamma: float, alpha: float = 0.1, persist: bool = True) -> Policy:
    """``truthful``, ``shift(<delta>)`` or ``q_learning``."""
    spec = spec.strip().lower()
    if spec == "truthful":
        return Truthful()
    if spec.startswith("shift(") and spec.endswith(")"):
        return ConstantShift(float(spec[6:-1]))
    if spec in ("q_learning", "qlearning", "q"):
        return QLearner(d, rho, T, QLearningParams(alpha=alpha, gamma=gamma), persist=persist)
    raise ValueError(f"unknown policy {spec!r}")
