"""Market primitives: configuration, value/cost distributions, the dual box and epoch schedules."""

from __future__ import annotations

import math
import warnings
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats


class ConfigError(ValueError):
    """Raised for an invalid market or experiment configuration."""


class InvalidScheduleError(ConfigError):
    pass


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------


class Distribution:
    """Scalar distribution on a bounded interval.

    Subclasses implement ``sample`` and expose ``low``/``high`` (support bounds)
    and ``atomic`` (True when the law has a point mass).
    """

    low: float
    high: float
    atomic: bool = False

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def spec(self) -> str:
        raise NotImplementedError

    def __repr__(self):
        return self.spec()


@dataclass(frozen=True, repr=False)
class PointMass(Distribution):
    value: float
    atomic: bool = field(default=True, init=False)

    @property
    def low(self):
        return self.value

    @property
    def high(self):
        return self.value

    def sample(self, rng, size=None):
        if size is None:
            return float(self.value)
        return np.full(size, float(self.value))

    def spec(self):
        return f"point({self.value!r})"


@dataclass(frozen=True, repr=False)
class Uniform(Distribution):
    a: float
    b: float

    def __post_init__(self):
        if not self.a <= self.b:
            raise ConfigError(f"uniform({self.a}, {self.b}): need a <= b")

    @property
    def low(self):
        return self.a

    @property
    def high(self):
        return self.b

    def sample(self, rng, size=None):
        return rng.uniform(self.a, self.b, size)

    def spec(self):
        return f"uniform({self.a!r},{self.b!r})"


@dataclass(frozen=True, repr=False)
class TruncatedNormal(Distribution):
    mu: float
    sigma: float
    a: float
    b: float

    def __post_init__(self):
        if self.sigma <= 0 or not self.a < self.b:
            raise ConfigError(f"invalid truncnormal parameters {self.spec()}")

    @property
    def low(self):
        return self.a

    @property
    def high(self):
        return self.b

    def sample(self, rng, size=None):
        lo = (self.a - self.mu) / self.sigma
        hi = (self.b - self.mu) / self.sigma
        out = stats.truncnorm.rvs(lo, hi, loc=self.mu, scale=self.sigma, size=size, random_state=rng)
        # inverse-cdf rounding can leave the box by an ulp
        return np.clip(out, self.a, self.b) if size is not None else float(min(max(out, self.a), self.b))

    def spec(self):
        return f"truncnormal({self.mu!r},{self.sigma!r},{self.a!r},{self.b!r})"


@dataclass(frozen=True)
class CostDistribution:
    """Cost law on [0,1]^d with independent coordinates."""

    coords: tuple[Distribution, ...]

    @property
    def d(self) -> int:
        return len(self.coords)

    @property
    def atomic(self) -> bool:
        return any(c.atomic for c in self.coords)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        if size is None:
            return np.array([c.sample(rng) for c in self.coords], dtype=float)
        out = np.empty((size, self.d))
        for j, c in enumerate(self.coords):
            out[:, j] = c.sample(rng, size)
        return out

    def spec(self) -> str:
        return ";".join(c.spec() for c in self.coords)


def parse_distribution(text: str, rho_j: float | None = None) -> Distribution:
    """Parse ``point(x)``, ``uniform(a,b)``, ``uniform_rho(a,b)`` or ``truncnormal(mu,sigma,a,b)``.

    ``uniform_rho(a,b)`` means Unif[a*rho_j, b*rho_j] and needs the coordinate's threshold.
    """
    text = text.strip()
    if "(" not in text or not text.endswith(")"):
        raise ConfigError(f"cannot parse distribution {text!r}")
    name, args = text[:-1].split("(", 1)
    name = name.strip().lower()
    try:
        vals = [float(x) for x in args.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number in distribution {text!r}") from exc
    arity = {"point": 1, "uniform": 2, "uniform_rho": 2, "truncnormal": 4}
    if name not in arity:
        raise ConfigError(f"unknown distribution {name!r}")
    if len(vals) != arity[name]:
        raise ConfigError(f"{name} takes {arity[name]} arguments, got {len(vals)}")
    if name == "point":
        return PointMass(vals[0])
    if name == "uniform":
        return Uniform(vals[0], vals[1])
    if name == "uniform_rho":
        if rho_j is None:
            raise ConfigError("uniform_rho is only valid for cost coordinates")
        return Uniform(vals[0] * rho_j, vals[1] * rho_j)
    return TruncatedNormal(*vals)


def parse_cost_distribution(text: str, rho: Sequence[float]) -> CostDistribution:
    """A single spec is broadcast to every coordinate; ``;`` separates per-coordinate specs."""
    parts = [p for p in text.split(";") if p.strip()]
    if len(parts) == 1:
        parts = parts * len(rho)
    if len(parts) != len(rho):
        raise ConfigError(f"cost distribution {text!r} has {len(parts)} coordinates, expected {len(rho)}")
    return CostDistribution(tuple(parse_distribution(p, r) for p, r in zip(parts, rho)))


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarketConfig:
    T: int
    K: int
    d: int
    rho: tuple[float, ...]
    gamma: float
    value_dists: tuple[Distribution, ...]
    cost_dists: tuple[CostDistribution, ...]

    def __post_init__(self):
        object.__setattr__(self, "rho", tuple(float(r) for r in self.rho))
        object.__setattr__(self, "value_dists", tuple(self.value_dists))
        object.__setattr__(self, "cost_dists", tuple(self.cost_dists))
        if int(self.T) != self.T or self.T < 1:
            raise ConfigError(f"T must be a positive integer, got {self.T}")
        if int(self.K) != self.K or self.K < 1:
            raise ConfigError(f"K must be a positive integer, got {self.K}")
        if int(self.d) != self.d or self.d < 1:
            raise ConfigError(f"d must be a positive integer, got {self.d}")
        if len(self.rho) != self.d:
            raise ConfigError(f"rho has {len(self.rho)} entries, expected d={self.d}")
        if not all(0.0 < r <= 1.0 for r in self.rho):
            raise ConfigError(f"rho entries must lie in (0, 1], got {self.rho}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if len(self.value_dists) != self.K or len(self.cost_dists) != self.K:
            raise ConfigError("need exactly K value and K cost distributions")
        for i, dist in enumerate(self.value_dists):
            if dist.low < 0.0 or dist.high > 1.0:
                raise ConfigError(f"value distribution of agent {i + 1} leaves [0,1]: {dist.spec()}")
        for i, cd in enumerate(self.cost_dists):
            if cd.d != self.d:
                raise ConfigError(f"cost distribution of agent {i + 1} has dimension {cd.d}, expected {self.d}")
            for c in cd.coords:
                if c.low < 0.0 or c.high > 1.0:
                    raise ConfigError(f"cost distribution of agent {i + 1} leaves [0,1]: {c.spec()}")

    @property
    def rho_array(self) -> np.ndarray:
        return np.asarray(self.rho, dtype=float)

    @property
    def budget(self) -> np.ndarray:
        """Total cost allowance T * rho."""
        return self.T * self.rho_array

    def lint(self) -> list[str]:
        """Soft checks. Atoms in cost laws break the smooth-cost assumption of the theory."""
        msgs = []
        for i, cd in enumerate(self.cost_dists):
            if cd.atomic:
                msgs.append(f"agent {i + 1}: cost distribution {cd.spec()} has an atom; "
                            "projected-cost density is unbounded")
        return msgs

    def echo(self) -> dict:
        return {
            "T": self.T, "K": self.K, "d": self.d, "rho": list(self.rho), "gamma": self.gamma,
            "value_dists": [v.spec() for v in self.value_dists],
            "cost_dists": [c.spec() for c in self.cost_dists],
        }


def reference_market(T: int = 1000, K: int = 3, rho: float = 0.5, gamma: float = 0.9) -> MarketConfig:
    """Single-constraint market with Unif[0,1] values and Unif[0.7 rho, 1.3 rho] costs."""
    cost = CostDistribution((Uniform(0.7 * rho, 1.3 * rho),))
    return MarketConfig(T=T, K=K, d=1, rho=(rho,), gamma=gamma,
                        value_dists=(Uniform(0.0, 1.0),) * K, cost_dists=(cost,) * K)


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

# Purpose tags for sub-streams; never renumber, outputs depend on them.
VALUES = 1
COSTS = 2
MECHANISM = 3
AGENT = 4
SCENARIO = 5


def stream(master_seed: int, *key: int) -> np.random.Generator:
    """Philox generator for the sub-stream ``key`` of ``master_seed``.

    All randomness in the package flows through here so that every draw is a pure
    function of (master seed, trial, purpose, ...).
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def name_key(name: str) -> int:
    return zlib.crc32(name.encode())


@dataclass
class RoundSample:
    values: np.ndarray  # (K,)
    costs: np.ndarray   # (K, d)


def sample_round(config: MarketConfig, rng: np.random.Generator) -> RoundSample:
    values = np.array([dist.sample(rng) for dist in config.value_dists], dtype=float)
    costs = np.stack([cd.sample(rng) for cd in config.cost_dists])
    return RoundSample(values, costs)


def sample_market(config: MarketConfig, master_seed: int, trial: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw a whole trial's values (T, K) and costs (T, K, d).

    Each agent has its own value and cost sub-stream, so adding agents leaves the
    draws of existing agents untouched.
    """
    T, K, d = config.T, config.K, config.d
    values = np.empty((T, K))
    costs = np.empty((T, K, d))
    for i in range(K):
        values[:, i] = config.value_dists[i].sample(stream(master_seed, trial, VALUES, i), T)
        costs[:, i, :] = config.cost_dists[i].sample(stream(master_seed, trial, COSTS, i), T)
    return values, costs


# ---------------------------------------------------------------------------
# Dual region and epochs
# ---------------------------------------------------------------------------


def dual_upper(rho) -> np.ndarray:
    return 1.0 / np.asarray(rho, dtype=float)


def clip_to_dual_region(x, rho) -> np.ndarray:
    """Clamp each coordinate of ``x`` to [0, 1/rho_j]."""
    return np.clip(np.asarray(x, dtype=float), 0.0, dual_upper(rho))


def in_dual_region(lam, rho) -> bool:
    lam = np.asarray(lam, dtype=float)
    return bool(np.all(lam >= 0.0) and np.all(lam <= dual_upper(rho)))


@dataclass(frozen=True)
class EpochSchedule:
    """Contiguous 1-based inclusive round intervals covering [1, T]."""

    epochs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        prev = 0
        for lo, hi in self.epochs:
            if lo != prev + 1 or hi < lo:
                raise InvalidScheduleError(f"epochs not contiguous at {(lo, hi)}")
            prev = hi

    @property
    def T(self) -> int:
        return self.epochs[-1][1]

    @property
    def lengths(self) -> list[int]:
        return [hi - lo + 1 for lo, hi in self.epochs]

    def __len__(self):
        return len(self.epochs)

    def __iter__(self):
        return iter(self.epochs)

    def epoch_of(self, t: int) -> int:
        """1-based epoch index containing round t."""
        for ell, (lo, hi) in enumerate(self.epochs, start=1):
            if lo <= t <= hi:
                return ell
        raise IndexError(t)


def build_epoch_schedule(T: int, scheme: str = "doubling", L: int | None = None) -> EpochSchedule:
    """Doubling epochs [2^(l-1), min(2^l - 1, T)] or L near-equal uniform epochs."""
    if T < 1:
        raise InvalidScheduleError(f"T must be positive, got {T}")
    if scheme == "doubling":
        epochs = []
        ell = 1
        while 2 ** (ell - 1) <= T:
            epochs.append((2 ** (ell - 1), min(2 ** ell - 1, T)))
            ell += 1
        return EpochSchedule(tuple(epochs))
    if scheme == "uniform":
        if L is None or L < 1 or L > T:
            raise InvalidScheduleError(f"uniform schedule needs 1 <= L <= T, got L={L}, T={T}")
        bounds = [(ell * T) // L for ell in range(L + 1)]
        return EpochSchedule(tuple((bounds[k] + 1, bounds[k + 1]) for k in range(L)))
    raise InvalidScheduleError(f"unknown epoch scheme {scheme!r}")


def parse_schedule(text: str, T: int) -> EpochSchedule:
    """``doubling``, ``uniform:<L>``, ``uniform:T^1/3`` or ``uniform:T^2/3``."""
    text = text.strip()
    if text == "doubling":
        return build_epoch_schedule(T, "doubling")
    if text.startswith("uniform:"):
        arg = text.split(":", 1)[1].strip()
        if arg.startswith("T^"):
            num, den = arg[2:].split("/")
            L = max(1, min(T, int(round(T ** (int(num) / int(den))))))
        else:
            try:
                L = int(arg)
            except ValueError as exc:
                raise InvalidScheduleError(f"bad epoch count {arg!r}") from exc
        return build_epoch_schedule(T, "uniform", L)
    raise InvalidScheduleError(f"unknown epoch scheme {text!r}")


def warn_lint(config: MarketConfig) -> None:
    for msg in config.lint():
        warnings.warn(msg, stacklevel=2)


def n_doubling_epochs(T: int) -> int:
    return math.ceil(math.log2(T + 1))
