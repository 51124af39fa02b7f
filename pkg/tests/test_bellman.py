from __future__ import annotations

import numpy as np
import pytest

from pclindex import bellman
from pclindex.engine import IndexCurve, compute_index, compute_metrics, threshold_grid
from pclindex.errors import NoConvergenceError
from pclindex.model import ExtendedThreshold
from pclindex.models import ChannelParams, channel_project

E = ExtendedThreshold
GRID = np.linspace(0, 1, 41)


@pytest.fixture(scope="module")
def curve(channel, k_fine):
    return compute_index(channel, GRID, k_fine)


@pytest.fixture(scope="module")
def sols(channel):
    return {s.lam: s for s in bellman.value_iteration_sweep(channel, [-1.0, 2.0], GRID)}


def test_high_price_is_passive(sols):
    s = sols[2.0]
    assert np.max(np.abs(s.values)) <= 1e-10
    sets = bellman.optimal_action_sets(s, 1e-9)
    assert len(sets.passive) == len(GRID) and np.all(s.action_gap < 0)


def test_negative_price_is_active(channel, sols):
    s = sols[-1.0]
    t = compute_metrics(channel, GRID, [E.below()], 150, marginals=False)
    assert np.allclose(s.values, t.F[:, 0] + t.G[:, 0], atol=1e-8)
    assert len(bellman.optimal_action_sets(s, 1e-9).active) == len(GRID)


def test_myopic_when_undiscounted():
    proj = channel_project(ChannelParams(0.2, 0.3, 0.0))
    s = bellman.value_iteration(proj, 0.4, GRID)
    assert np.allclose(s.values, np.maximum(0.0, GRID - 0.4), atol=1e-15)


def test_contraction_checked(sols):
    assert all(s.contraction_ok for s in sols.values())


def test_iteration_cap(channel):
    with pytest.raises(NoConvergenceError):
        bellman.value_iteration(channel, 0.5, GRID, max_iter=3)


def test_break_even_state_is_indifferent(channel, curve):
    x0 = float(GRID[28])  # about 0.7
    lam = float(curve.lookup(x0)[0])
    s = bellman.value_iteration(channel, lam, GRID)
    eps = 10 * 2 * channel.discount * max(s.fixed_point_error, s.residual) + 1e-8
    sets = bellman.optimal_action_sets(s, eps)
    assert x0 in sets.indifferent.tolist()


def test_action_sets_partition(sols):
    sets = bellman.optimal_action_sets(sols[-1.0], 1e-3)
    allx = np.sort(np.r_[sets.active, sets.passive, sets.indifferent])
    assert np.array_equal(allx, GRID)


class TestCrossCheck:
    def test_agreement(self, channel, curve):
        lams = np.round(np.arange(0.1, 0.91, 0.1), 10)
        rep = bellman.indexability_crosscheck(curve, channel, lams, epsilon=1e-4)
        assert rep.passed and set(rep.agreements) == {1.0}

    def test_above_max(self, channel, curve):
        rep = bellman.indexability_crosscheck(curve, channel, [1.2])
        assert rep.passed and rep.checked == (len(GRID),)

    def test_negated_curve_disagrees(self, channel, curve):
        neg = IndexCurve(curve.states, -curve.values + 1.0, curve.error_bounds, curve.g_lower)
        rep = bellman.indexability_crosscheck(neg, channel, [0.25, 0.5, 0.75])
        assert not rep.passed
        assert max(rep.agreements) < 0.5

    def test_monotone_structure(self, channel, curve):
        s = bellman.value_iteration_sweep(channel, bellman.default_lambda_sweep(curve, 9), GRID)
        assert bellman.monotone_policy_structure(s, 1e-8)


@pytest.fixture(scope="module")
def table(channel, k_fine):
    return compute_metrics(channel, GRID, threshold_grid(GRID, left=False), k_fine)


class TestThresholdSets:
    def test_interior_half(self, channel, k_fine, table, curve):
        index_fn = lambda z: float(compute_index(channel, [z], k_fine).values[0])  # noqa: E731
        ts = bellman.optimal_threshold_set(0.5, table, curve, index_fn, 0.0, 1.0)
        assert ts.case == bellman.INTERIOR and ts.consistent
        z = ts.representative.z
        assert 0.3 <= z < 0.6  # inside the second case region
        assert index_fn(z) == pytest.approx(0.5, abs=1e-8)

    def test_high_price(self, table, curve):
        ts = bellman.optimal_threshold_set(1.2, table, curve)
        assert ts.case == bellman.NEVER_ACTIVE and ts.representative == E.above()
        assert E.above() in ts.members

    def test_low_price(self, table, curve):
        ts = bellman.optimal_threshold_set(-0.2, table, curve)
        assert ts.case == bellman.ALWAYS_ACTIVE and ts.representative == E.below()
        assert ts.members == (E.below(),)

    def test_value_matches(self, channel, k_fine, table, curve):
        index_fn = lambda z: float(compute_index(channel, [z], k_fine).values[0])  # noqa: E731
        for lam in (0.2, 0.5, 0.9):
            ts = bellman.optimal_threshold_set(lam, table, curve, index_fn)
            t = compute_metrics(channel, GRID, [ts.representative], k_fine, marginals=False)
            s = bellman.value_iteration(channel, lam, GRID)
            assert np.max(np.abs(t.F[:, 0] - lam * t.G[:, 0] - s.values)) <= (1 + lam) * 1e-8
