"""Epoch dual updates: FTRL, optimistic FTRL with fixed points, and the per-round baseline step.

The regularizer is fixed to half the squared Euclidean norm, so every inner argmin
over the dual box is a coordinate clamp of ``-eta * gradient``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .market import EpochSchedule, clip_to_dual_region, dual_upper


class LossHistory:
    """Per-epoch loss gradients plus the report/cost archive used for predictions."""

    def __init__(self, rho, K: int, include_exploration: bool = True):
        self.rho = np.asarray(rho, dtype=float)
        self.K = K
        self.d = len(self.rho)
        self.include_exploration = include_exploration
        self.gradients: list[np.ndarray] = []
        self.lengths: list[int] = []
        self._reports: list[np.ndarray] = []
        self._costs: list[np.ndarray] = []
        self._archive = None
        self.rounds = 0

    def add_epoch(self, gradient, reports=None, costs=None, explore=None) -> None:
        gradient = np.asarray(gradient, dtype=float)
        n = 0 if reports is None else len(reports)
        if n and np.max(np.abs(gradient)) > n + 1e-9:
            raise ValueError("epoch gradient exceeds the epoch length in sup norm")
        self.gradients.append(gradient.copy())
        self.lengths.append(n)
        self.rounds += n
        if n:
            reports = np.asarray(reports, dtype=float)
            costs = np.asarray(costs, dtype=float)
            if explore is not None and not self.include_exploration:
                keep = ~np.asarray(explore, dtype=bool)
                reports, costs = reports[keep], costs[keep]
            self._reports.append(reports)
            self._costs.append(costs)
            self._archive = None

    @property
    def n_epochs(self) -> int:
        return len(self.gradients)

    @property
    def cumulative_gradient(self) -> np.ndarray:
        total = np.zeros(self.d)
        for g in self.gradients:
            total = total + g
        return total

    @property
    def archive(self) -> tuple[np.ndarray, np.ndarray]:
        if self._archive is None:
            if self._reports:
                self._archive = (np.ascontiguousarray(np.concatenate(self._reports)),
                                 np.ascontiguousarray(np.concatenate(self._costs)))
            else:
                self._archive = (np.zeros((0, self.K)), np.zeros((0, self.K, self.d)))
        return self._archive


def _cum_grad(history) -> np.ndarray:
    if isinstance(history, LossHistory):
        return history.cumulative_gradient
    return np.asarray(history, dtype=float)


def ftrl_dual(history, eta: float, rho) -> np.ndarray:
    """argmin over the box of G.lam + |lam|^2 / (2 eta), i.e. clamp(-eta G)."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    return clip_to_dual_region(-eta * _cum_grad(history), rho)


def predicted_gradient(lam, reports, costs, rho, epoch_len: int) -> np.ndarray:
    """Forecast of the coming epoch's loss gradient if archived rounds replay under ``lam``.

    An empty archive predicts zero.
    """
    reports = np.ascontiguousarray(reports, dtype=float)
    costs = np.ascontiguousarray(costs, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if reports.shape[0] == 0:
        return np.zeros(len(rho))
    lam = np.asarray(lam, dtype=float).reshape(1, -1)
    return epoch_len * kernels.predicted_means(lam, reports, costs, rho)[0]


def _predictions(lams, history: LossHistory, epoch_len: int) -> np.ndarray:
    reports, costs = history.archive
    if reports.shape[0] == 0:
        return np.zeros((len(lams), history.d))
    return epoch_len * kernels.predicted_means(np.ascontiguousarray(lams), reports, costs, history.rho)


def _residuals(lams, history: LossHistory, eta: float, epoch_len: int) -> np.ndarray:
    lams = np.atleast_2d(lams)
    G = history.cumulative_gradient
    pred = _predictions(lams, history, epoch_len)
    target = np.clip(-eta * (G + pred), 0.0, dual_upper(history.rho))
    return np.sqrt(((lams - target) ** 2).sum(axis=1))


def _approx_objective(lams, history: LossHistory, eta: float, epoch_len: int) -> np.ndarray:
    lams = np.atleast_2d(lams)
    G = history.cumulative_gradient
    pred = _predictions(lams, history, epoch_len)
    return ((G + pred) * lams).sum(axis=1) + (lams ** 2).sum(axis=1) / (2.0 * eta)


def oftrlfp_residual(lam, history: LossHistory, eta: float, epoch_len: int) -> float:
    """Distance from ``lam`` to the FTRL step taken with the prediction evaluated at ``lam``."""
    return float(_residuals(np.asarray(lam, dtype=float).reshape(1, -1), history, eta, epoch_len)[0])


def default_grid(d: int) -> int:
    """Points per coordinate; keeps the total grid near 201 points for d > 1."""
    return 201 if d == 1 else max(5, int(round(201 ** (1.0 / d))))


@dataclass(frozen=True)
class UpdaterParams:
    eta_scale: float = 1.0
    fp_mode: str = "exact"
    fp_grid: int | None = None
    fp_refine: int = 20
    fp_tolerance: float = 1e-3
    include_exploration: bool = True

    def __post_init__(self):
        if self.fp_mode not in ("exact", "approx"):
            raise ValueError(f"fp_mode must be 'exact' or 'approx', got {self.fp_mode!r}")
        if self.fp_grid is not None and self.fp_grid < 2:
            raise ValueError("fp_grid needs at least 2 points per coordinate")
        if self.fp_tolerance <= 0:
            raise ValueError("fp_tolerance must be positive")
        if self.eta_scale <= 0:
            raise ValueError("eta_scale must be positive")


def _grid_search(score, rho, n_grid: int, n_refine: int, seeds=()) -> tuple[np.ndarray, float]:
    """Minimise ``score`` over the dual box: lexicographic grid, then halving local search.

    Ties resolve to the lowest lexicographic grid index; refinement only moves on strict
    improvement. ``seeds`` are extra starting candidates compared after the grid.
    """
    upper = dual_upper(rho)
    d = len(upper)
    axes = [np.linspace(0.0, u, n_grid) for u in upper]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    s = score(pts)
    k = int(np.argmin(s))
    x, best = pts[k].copy(), float(s[k])
    for seed in seeds:
        sv = float(score(np.asarray(seed, dtype=float).reshape(1, -1))[0])
        if sv < best:
            x, best = np.asarray(seed, dtype=float).copy(), sv
    h = upper / (n_grid - 1)
    offsets = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=d)))
    for _ in range(n_refine):
        h = h / 2.0
        cand = np.clip(x + offsets * h, 0.0, upper)
        sc = score(cand)
        k = int(np.argmin(sc))
        if sc[k] < best:
            x, best = cand[k].copy(), float(sc[k])
    return x, best


def _ftrl_step(lam, history: LossHistory, eta: float, epoch_len: int) -> np.ndarray:
    G = history.cumulative_gradient
    pred = _predictions(np.atleast_2d(lam), history, epoch_len)[0]
    return np.clip(-eta * (G + pred), 0.0, dual_upper(history.rho))


def _picard_polish(lam, res, history, eta, epoch_len, steps: int = 5):
    """A few fixed-point iterations from the grid answer, kept only on strict improvement.

    The prediction is piecewise constant in lam, so one step lands exactly on the fixed
    point whenever the grid answer already sits on the right piece.
    """
    for _ in range(steps):
        if res == 0.0:
            break
        nxt = _ftrl_step(lam, history, eta, epoch_len)
        r = oftrlfp_residual(nxt, history, eta, epoch_len)
        if not r < res:
            break
        lam, res = nxt, r
    return lam, res


@dataclass
class FixedPointResult:
    lam: np.ndarray
    residual: float
    mode: str
    flagged: bool = False


def solve_oftrlfp(history: LossHistory, params: UpdaterParams, epoch_len: int, eta: float) -> FixedPointResult:
    """Approximate fixed point of the optimistic FTRL step.

    ``exact`` minimises the fixed-point residual directly (seeded with the ``approx``
    answer, so it never does worse than it); ``approx`` evaluates the prediction at the
    candidate itself and minimises the resulting objective.
    """
    rho = history.rho
    d = len(rho)
    if history.archive[0].shape[0] == 0 and not np.any(history.cumulative_gradient):
        lam = np.zeros(d)
        return FixedPointResult(lam, oftrlfp_residual(lam, history, eta, epoch_len), params.fp_mode)
    n_grid = params.fp_grid or default_grid(d)
    approx_lam, _ = _grid_search(lambda L: _approx_objective(L, history, eta, epoch_len),
                                 rho, n_grid, params.fp_refine)
    if params.fp_mode == "approx":
        lam = approx_lam
        res = oftrlfp_residual(lam, history, eta, epoch_len)
    else:
        lam, res = _grid_search(lambda L: _residuals(L, history, eta, epoch_len),
                                rho, n_grid, params.fp_refine, seeds=(approx_lam,))
        lam, res = _picard_polish(lam, res, history, eta, epoch_len)
    lam = clip_to_dual_region(lam, rho)
    return FixedPointResult(lam, res, params.fp_mode, flagged=res > params.fp_tolerance)


def vanilla_dual_step(lam, winner_cost, rho, eta: float) -> np.ndarray:
    """Projected subgradient step lam - eta (rho - c_{t,i_t}) onto the dual box."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    lam = np.asarray(lam, dtype=float)
    return clip_to_dual_region(lam - eta * (np.asarray(rho, dtype=float) - np.asarray(winner_cost, dtype=float)), rho)


def ftrl_regret_bound(grad_norms_sq, etas, psi_at_comparator: float) -> float:
    """Psi(x*)/eta_L + 1/2 sum_l eta_l |g_l|^2 for non-increasing learning rates."""
    etas = np.asarray(etas, dtype=float)
    g2 = np.asarray(grad_norms_sq, dtype=float)
    if len(etas) != len(g2) or len(etas) == 0:
        raise ValueError("need one learning rate per gradient")
    if np.any(np.diff(etas) > 0):
        raise ValueError("learning rates must be non-increasing")
    return float(psi_at_comparator / etas[-1] + 0.5 * np.sum(etas * g2))


# ---------------------------------------------------------------------------
# Learning-rate schedules
# ---------------------------------------------------------------------------


def ftrl_etas(schedule: EpochSchedule, rho, scale: float = 1.0) -> np.ndarray:
    """|rho^-1|_2 / sqrt(2d) * (sum_{l'<=l} |E_l'|^2)^(-1/2)."""
    inv = dual_upper(rho)
    d = len(inv)
    lens = np.asarray(schedule.lengths, dtype=float)
    return scale * np.linalg.norm(inv) / math.sqrt(2 * d) / np.sqrt(np.cumsum(lens ** 2))


def oftrl_etas(schedule: EpochSchedule, rho, K: int, scale: float = 1.0) -> np.ndarray:
    """|rho^-1|_2 / (sqrt(112 d) K^2) * (sum_{l'<=l} |E_l'|)^(-1/2)."""
    inv = dual_upper(rho)
    d = len(inv)
    lens = np.asarray(schedule.lengths, dtype=float)
    return scale * np.linalg.norm(inv) / (math.sqrt(112 * d) * K ** 2) / np.sqrt(np.cumsum(lens))


# ---------------------------------------------------------------------------
# Updaters
# ---------------------------------------------------------------------------


@dataclass
class UpdateResult:
    lam: np.ndarray
    epoch: int
    eta: float = float("nan")
    residual: float = 0.0
    flagged: bool = False
    extra: dict = field(default_factory=dict)


class DualUpdater:
    name = "base"
    include_exploration = True

    def update(self, history: LossHistory, epoch: int, epoch_len: int) -> UpdateResult:
        raise NotImplementedError


class ZeroUpdater(DualUpdater):
    name = "zero"

    def __init__(self, d: int):
        self.d = d

    def update(self, history, epoch, epoch_len):
        return UpdateResult(np.zeros(self.d), epoch)


class FTRLUpdater(DualUpdater):
    name = "ftrl"

    def __init__(self, etas, rho):
        self.etas = np.asarray(etas, dtype=float)
        self.rho = np.asarray(rho, dtype=float)

    def update(self, history, epoch, epoch_len):
        eta = float(self.etas[epoch - 1])
        return UpdateResult(ftrl_dual(history, eta, self.rho), epoch, eta)


class OFTRLFPUpdater(DualUpdater):
    name = "oftrl_fp"

    def __init__(self, etas, params: UpdaterParams = UpdaterParams(), diagnose: bool = False):
        self.etas = np.asarray(etas, dtype=float)
        self.params = params
        self.include_exploration = params.include_exploration
        self.diagnose = diagnose

    def update(self, history, epoch, epoch_len):
        eta = float(self.etas[epoch - 1])
        fp = solve_oftrlfp(history, self.params, epoch_len, eta)
        out = UpdateResult(fp.lam, epoch, eta, fp.residual, fp.flagged)
        if self.diagnose:
            other_mode = "approx" if self.params.fp_mode == "exact" else "exact"
            alt = solve_oftrlfp(history, replace(self.params, fp_mode=other_mode), epoch_len, eta)
            exact, approx = (fp, alt) if self.params.fp_mode == "exact" else (alt, fp)
            out.extra = {
                "lam_exact": exact.lam, "lam_approx": approx.lam,
                "residual_exact": exact.residual, "residual_approx": approx.residual,
                "lam_ftrl": ftrl_dual(history, eta, history.rho),
            }
        return out
