from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alloc import kernels
from alloc.metrics import (OfflineSizeError, TrialMetrics, lp_relaxation_bound, offline_optimal, regret,
                           summarize, violation)

from .oracles import branch_and_bound, brute_welfare

V3 = np.array([[0.9, 0.5], [0.8, 0.4], [0.7, 0.3]])
C3 = np.array([[[0.6], [0.2]], [[0.5], [0.3]], [[0.4], [0.2]]])


def test_unconstrained_instance():
    v = np.array([[0.3, 0.7], [0.9, 0.1]])
    c = np.full((2, 2, 1), 0.5)
    sol = offline_optimal(v, c, [1.0])
    assert sol.welfare == pytest.approx(1.6)
    assert list(sol.allocation) == [2, 1]


def test_knapsack_instance():
    sol = offline_optimal(V3, C3, [1 / 3])
    assert list(sol.allocation) == [1, 0, 1]
    assert sol.welfare == pytest.approx(1.6)
    assert brute_welfare(V3.tolist(), C3.tolist(), [1.0]) == pytest.approx(1.6)
    assert not sol.is_upper_bound


def test_regret_examples():
    sol = offline_optimal(V3, C3, [1 / 3])
    assert regret(1.2, sol).value == pytest.approx(0.4)
    assert regret(sol.welfare, sol).value == 0.0


def test_size_guard():
    with pytest.raises(OfflineSizeError):
        offline_optimal(np.zeros((20, 3)), np.zeros((20, 3, 1)), [0.5])


def test_violation_examples():
    assert violation(np.zeros((4, 1)), [0.5]) == 0.0
    assert violation(np.array([[0.7, 0.5], [0.5, 0.3]]), [0.5, 0.5]) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        violation(np.zeros((3, 1)), [0.5], T=4)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=20), st.floats(0.05, 1), st.integers(0, 19), st.floats(0, 1))
def test_violation_zero_iff_within_budget_and_monotone(costs, rho, k, bump):
    c = np.array(costs).reshape(-1, 1)
    v = violation(c, [rho])
    assert (v == 0.0) == (c.sum() <= len(c) * rho)
    c2 = c.copy()
    c2[k % len(c)] += bump
    assert violation(c2, [rho]) >= v


def _instance(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, 3))
    T = {1: 6, 2: 6}[K] if K == 1 else 4
    T = min(T, int(np.floor(np.log(3 ** 6) / np.log(K + 1))))
    d = int(rng.integers(1, 3))
    v = rng.random((T, K))
    c = rng.random((T, K, d))
    rho = rng.uniform(0.1, 0.8, d)
    return v, c, rho


@pytest.mark.parametrize("seed", range(30))
def test_exhaustive_matches_branch_and_bound_and_lp_dominates(seed):
    v, c, rho = _instance(seed)
    T = v.shape[0]
    sol = offline_optimal(v, c, rho)
    assert sol.welfare == branch_and_bound(v.tolist(), c.tolist(), (T * rho).tolist())
    lp = offline_optimal(v, c, rho, "lp_relaxation_bound")
    assert lp.is_upper_bound and lp.allocation.size == 0
    assert lp.welfare >= sol.welfare - 1e-12
    spent = sum(c[t, sol.allocation[t] - 1] for t in range(T) if sol.allocation[t])
    assert np.all(np.asarray(spent) <= T * rho)


def test_lp_bound_vacuous_budget_is_sum_of_maxima():
    rng = np.random.default_rng(1)
    v, c = rng.random((50, 3)), rng.random((50, 3, 2)) * 0.1
    bound, mu = lp_relaxation_bound(v, c, [1.0, 1.0])
    assert bound == pytest.approx(v.max(axis=1).sum(), abs=1e-7)


@pytest.mark.skipif(kernels.compiled is None, reason="compiled kernels not built")
def test_enumeration_backends_agree():
    rng = np.random.default_rng(0)
    v, c = rng.random((6, 2)), rng.random((6, 2, 2))
    b = np.array([2.0, 1.5])
    pw, pa = kernels.python.enumerate_offline(v, c, b)
    cw, ca = kernels.compiled.enumerate_offline(v, c, b)
    assert pw == cw and np.array_equal(pa, ca)


@dataclass
class _T:
    trial_index: int
    metrics: TrialMetrics


def _m(w):
    return TrialMetrics(welfare=w, regret=1.0, regret_is_upper_bound=True, violation=0.0,
                        budget_utilization=[0.5], mean_abs_misreport=0.1, exploration_count=3,
                        rejected_count=0)


def test_summarize_examples():
    one = summarize([_T(0, _m(2.0))])
    assert one.aggregates["welfare"]["mean"] == 2.0 and one.aggregates["welfare"]["std"] == 0.0
    dup = summarize([_T(0, _m(2.0))] * 10)
    assert dup.aggregates["welfare"]["mean"] == 2.0 and dup.aggregates["welfare"]["std"] == 0.0
    two = summarize([_T(1, _m(2.0)), _T(0, _m(1.0))])
    assert two.aggregates["welfare"]["mean"] == 1.5
    assert two.curves["trial"] == [0, 1] and two.curves["welfare"] == [1.0, 2.0]


def test_summarize_is_order_independent():
    items = [_T(i % 4, _m(float(i))) for i in range(12)]
    a = summarize(items).to_dict()
    b = summarize(items[::-1]).to_dict()
    assert a == b
