import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alloc.duals import (FTRLUpdater, LossHistory, OFTRLFPUpdater, UpdaterParams, ftrl_dual, ftrl_etas,
                         ftrl_regret_bound, oftrl_etas, oftrlfp_residual, predicted_gradient,
                         solve_oftrlfp, vanilla_dual_step)
from alloc.market import build_epoch_schedule, in_dual_region

from .oracles import ftrl_grid_argmin, predicted_gradient_loop, residual_loop


def test_ftrl_empty_history_is_zero():
    h = LossHistory([0.5, 0.25], 2)
    assert np.array_equal(ftrl_dual(h, 0.3, h.rho), [0.0, 0.0])


@pytest.mark.parametrize("G,expected", [(-2.0, 0.2), (-30.0, 2.0)])
def test_ftrl_examples(G, expected):
    lam = ftrl_dual(np.array([G]), 0.1, [0.5])
    assert lam[0] == pytest.approx(expected, abs=1e-12)
    grid = ftrl_grid_argmin([G], 0.1, [0.5])
    assert abs(grid[0] - lam[0]) <= 2.0 / 10_000


@given(st.integers(1, 3).flatmap(lambda d: st.tuples(
    st.lists(st.floats(-200, 200), min_size=d, max_size=d),
    st.lists(st.floats(0.05, 1.0), min_size=d, max_size=d))), st.floats(1e-3, 2.0))
def test_ftrl_closed_form_matches_grid(inst, eta):
    G, rho = inst
    lam = ftrl_dual(np.array(G), eta, rho)
    grid = ftrl_grid_argmin(G, eta, rho)
    cell = (1.0 / np.array(rho)) / 10_000
    assert np.all(np.abs(lam - grid) <= cell + 1e-12)
    assert in_dual_region(lam, rho)


def test_predicted_gradient_examples():
    u = np.array([[1.0, 0.0]])
    c = np.array([[[1.0], [0.0]]])
    assert predicted_gradient([0.0], u, c, [0.5], 4) == pytest.approx([-2.0])
    assert predicted_gradient([2.0], u, c, [0.5], 4) == pytest.approx([2.0])
    assert predicted_gradient_loop([2.0], u, c, [0.5], 4) == pytest.approx([2.0])


def test_predicted_gradient_all_forfeit_and_empty():
    u = np.zeros((5, 2))
    c = np.full((5, 2, 2), 0.5)
    assert predicted_gradient([0.1, 0.1], u, c, [0.5, 0.25], 8) == pytest.approx([4.0, 2.0])
    assert np.array_equal(predicted_gradient([0.1], np.zeros((0, 2)), np.zeros((0, 2, 1)), [0.5], 8), [0.0])


archives = st.integers(1, 3).flatmap(lambda d: st.tuples(
    st.integers(0, 2 ** 31), st.just(d), st.integers(1, 40), st.integers(1, 4)))


@given(archives, st.integers(1, 64))
def test_predicted_gradient_matches_loop_and_is_bounded(inst, epoch_len):
    seed, d, n, K = inst
    rng = np.random.default_rng(seed)
    u, c, rho = rng.random((n, K)), rng.random((n, K, d)), rng.uniform(0.1, 1, d)
    lam = rng.random(d) / rho
    g = predicted_gradient(lam, u, c, rho, epoch_len)
    assert np.allclose(g, predicted_gradient_loop(lam, u, c, rho, epoch_len), atol=1e-9)
    assert np.max(np.abs(g)) <= epoch_len + 1e-9


def test_predicted_gradient_piecewise_constant():
    rng = np.random.default_rng(3)
    u, c, rho = rng.random((30, 3)), rng.random((30, 3, 1)), np.array([0.5])
    # breakpoints of every archived argmax in lam
    bps = sorted({float((u[t, i] - u[t, j]) / (c[t, i, 0] - c[t, j, 0]))
                  for t in range(30) for i in range(3) for j in range(3) if i != j and c[t, i, 0] != c[t, j, 0]}
                 | {float(u[t, i] / c[t, i, 0]) for t in range(30) for i in range(3)})
    bps = [b for b in bps if 0 < b < 2]
    a, b = bps[3], bps[4]
    g1 = predicted_gradient([a + (b - a) * 0.25], u, c, rho, 10)
    g2 = predicted_gradient([a + (b - a) * 0.75], u, c, rho, 10)
    assert np.array_equal(g1, g2)


def _history(seed, n=20, K=3, d=1, G=None):
    rng = np.random.default_rng(seed)
    rho = np.full(d, 0.5)
    h = LossHistory(rho, K)
    u, c = rng.random((n, K)), rng.random((n, K, d))
    g = np.asarray(G if G is not None else rng.uniform(-n, n, d) * 0.5)
    h.add_epoch(g, u, c)
    return h, u, c, g


def test_residual_trivial_cases():
    h = LossHistory([0.5], 2)
    assert oftrlfp_residual([0.0], h, 0.1, 4) == 0.0
    h.add_epoch(np.array([-3.0]), np.zeros((0, 2)), np.zeros((0, 2, 1)))
    lam = ftrl_dual(h, 0.1, h.rho)
    assert oftrlfp_residual(lam, h, 0.1, 4) == 0.0


def test_residual_matches_grid_reimplementation():
    h, u, c, g = _history(11)
    for lam in np.linspace(0, 2, 100_001)[::97]:
        ours = oftrlfp_residual([lam], h, 0.05, 8)
        ref = residual_loop([lam], g, u, c, h.rho, 0.05, 8)
        assert abs(ours - ref) <= 1e-9


def test_first_epoch_solution_is_zero():
    h = LossHistory([0.5], 3)
    for mode in ("exact", "approx"):
        r = solve_oftrlfp(h, UpdaterParams(fp_mode=mode), 1, 0.1)
        assert np.array_equal(r.lam, [0.0]) and r.residual == 0.0


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("d", [1, 2])
def test_exact_residual_never_worse_than_approx(seed, d):
    h, *_ = _history(seed, n=30, d=d)
    eta = 0.02
    ex = solve_oftrlfp(h, UpdaterParams(fp_mode="exact"), 16, eta)
    ap = solve_oftrlfp(h, UpdaterParams(fp_mode="approx"), 16, eta)
    assert ex.residual <= ap.residual
    assert ex.residual == pytest.approx(oftrlfp_residual(ex.lam, h, eta, 16))
    assert in_dual_region(ex.lam, h.rho) and in_dual_region(ap.lam, h.rho)


def test_coarse_grid_flags_but_returns():
    h, *_ = _history(2, n=40, G=[-15.0])
    r = solve_oftrlfp(h, UpdaterParams(fp_grid=2, fp_refine=0, fp_tolerance=1e-12), 64, 0.3)
    assert in_dual_region(r.lam, h.rho)
    assert r.flagged == (r.residual > 1e-12)


def test_updater_params_validation():
    for bad in (dict(fp_mode="newton"), dict(fp_grid=1), dict(fp_tolerance=0), dict(eta_scale=-1)):
        with pytest.raises(ValueError):
            UpdaterParams(**bad)


def test_vanilla_step_examples():
    assert vanilla_dual_step([0.5], [0.9], [0.5], 0.1) == pytest.approx([0.54])
    assert np.array_equal(vanilla_dual_step([0.7], [0.5], [0.5], 0.1), [0.7])
    assert np.array_equal(vanilla_dual_step([0.0], [0.0], [0.5], 0.1), [0.0])


def test_regret_bound_examples():
    assert ftrl_regret_bound([0.0, 0.0], [0.5, 0.25], 3.0) == pytest.approx(3.0 / 0.25)
    assert ftrl_regret_bound([4.0], [1.0], 2.0) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        ftrl_regret_bound([1.0, 1.0], [0.1, 0.2], 1.0)


def test_learning_rate_schedules():
    s = build_epoch_schedule(9, "uniform", 3)
    eta = ftrl_etas(s, [0.5])
    assert eta[0] == pytest.approx(2.0 / math.sqrt(2) / 3.0)
    assert eta[2] == pytest.approx(2.0 / math.sqrt(2) / math.sqrt(27.0))
    d = build_epoch_schedule(10, "doubling")
    eo = oftrl_etas(d, [0.5], 3)
    assert eo[1] == pytest.approx(2.0 / (math.sqrt(112) * 9) / math.sqrt(3.0))
    assert np.all(np.diff(eta) < 0) and np.all(np.diff(eo) < 0)


def test_updaters_report_eta_and_stay_in_box():
    s = build_epoch_schedule(64, "doubling")
    h, *_ = _history(5, n=30, G=[-25.0])
    f = FTRLUpdater(ftrl_etas(s, [0.5]), [0.5]).update(h, 2, 2)
    assert f.eta == pytest.approx(ftrl_etas(s, [0.5])[1])
    o = OFTRLFPUpdater(oftrl_etas(s, [0.5], 3), diagnose=True).update(h, 2, 2)
    assert set(o.extra) >= {"lam_exact", "lam_approx", "lam_ftrl", "residual_exact", "residual_approx"}
    assert o.extra["residual_exact"] <= o.extra["residual_approx"]
    for lam in (f.lam, o.lam):
        assert in_dual_region(lam, [0.5])


def test_history_rejects_oversized_gradient():
    h = LossHistory([0.5], 1)
    with pytest.raises(ValueError):
        h.add_epoch(np.array([3.0]), np.zeros((2, 1)), np.zeros((2, 1, 1)))


def test_history_can_drop_exploration_rounds():
    h = LossHistory([0.5], 1, include_exploration=False)
    h.add_epoch(np.array([0.0]), np.ones((3, 1)), np.ones((3, 1, 1)), np.array([True, False, True]))
    assert h.archive[0].shape == (1, 1)
