from __future__ import annotations

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from pclindex.engine import (
    build_closure,
    compute_index,
    compute_metrics,
    diagonal_metrics,
    error_bounds,
    horizon_for_tolerance,
    left_limit_metrics,
    mp_index,
    threshold_grid,
    write_table_csv,
)
from pclindex.errors import NoConvergenceError, ResourceLimitError
from pclindex.model import DiscountedProject, ExtendedThreshold, FiniteSupportKernel, ThresholdPolicy
from pclindex.models import ChannelParams, channel_project

E = ExtendedThreshold


def test_horizon_zero_is_one_period(channel):
    xs = [0.2, 0.5, 0.9]
    t = compute_metrics(channel, xs, [E.at(0.5)], 0)
    assert t.F[:, 0].tolist() == [0.0, 0.0, 0.9]
    assert t.G[:, 0].tolist() == [0.0, 0.0, 1.0]
    assert t.f[:, 0].tolist() == xs
    assert t.g[:, 0].tolist() == [1.0, 1.0, 1.0]


def test_case_one_limit(channel):
    t = compute_metrics(channel, [0.4], [E.at(0.1)], 150)
    assert t.G[0, 0] == pytest.approx(5.0, abs=1e-12)
    assert t.f[0, 0] == pytest.approx(0.4, abs=1e-12)
    assert t.g[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_case_three_marginal_limit(channel):
    t = compute_metrics(channel, [0.5], [E.at(0.65)], 150)
    assert t.g[0, 0] == pytest.approx(0.76 / 0.36, abs=1e-10)


@pytest.mark.parametrize("k", [0, 1, 4, 9])
@pytest.mark.parametrize("left", [False, True])
def test_matches_tree_enumeration(channel, k, left):
    rng = np.random.default_rng(k + 10 * left)
    xs = rng.uniform(0, 1, 6)
    zs = rng.uniform(0, 1, 6)
    ts = [E.at_left(z) if left else E.at(z) for z in zs]
    table = compute_metrics(channel, xs, ts, k, marginals=False)
    for i, x in enumerate(table.states):
        for t in ts:
            F, G = oracles.tree_metrics(0.2, 0.3, 0.8, x, t.z, k, left)
            j = table.column(t)
            assert table.F[i, j] == pytest.approx(F, abs=1e-12)
            assert table.G[i, j] == pytest.approx(G, abs=1e-12)


def test_randomized_policy_mixes(channel):
    pol = ThresholdPolicy(E.at(0.5), alpha=0.3)
    t = compute_metrics(channel, [0.5], [pol, E.at(0.5), E.at_left(0.5)], 0)
    assert t.F[0, t.column(pol)] == pytest.approx(0.7 * 0.5)


def test_monotone_in_threshold(channel):
    zs = np.linspace(0, 1, 51)
    t = compute_metrics(channel, np.linspace(0, 1, 21), [E.at(z) for z in zs], 60)
    assert np.all(np.diff(t.G, axis=1) <= 2 * t.error_FG)


def test_bounded_by_weight(channel):
    t = compute_metrics(channel, np.linspace(0, 1, 11), threshold_grid(np.linspace(0, 1, 11)), 80)
    assert np.all(np.abs(t.F) <= channel.bound_Mgamma + 1e-12)
    assert np.all(np.abs(t.G) <= channel.bound_Mgamma + 1e-12)


def test_error_bounds(channel):
    assert error_bounds(channel, 10) == pytest.approx((5 * 0.8**10, 10 * 0.8**10))


class TestIndex:
    @pytest.mark.parametrize("x, expected", [(0.9, 0.9), (0.7, 0.7 / 0.92), (0.2, 0.2)])
    def test_values(self, channel, x, expected):
        curve = compute_index(channel, [x], 120)
        assert curve.values[0] == pytest.approx(expected, abs=1e-9)
        assert curve.error_bounds[0] < 1e-9

    def test_beta_zero(self):
        proj = channel_project(ChannelParams(0.2, 0.3, 0.0))
        xs = np.linspace(0, 1, 11)
        assert np.allclose(compute_index(proj, xs, 0).values, xs, atol=1e-15)

    def test_mp_index_from_table_agrees(self, channel):
        xs = np.linspace(0, 1, 21)
        table = compute_metrics(channel, xs, [E.at(x) for x in xs], 40)
        a = mp_index(table, channel)
        b = compute_index(channel, xs, 40)
        assert np.allclose(a.values, b.values, atol=1e-14)

    def test_undefined_flag(self):
        proj = DiscountedProject(
            lower=0.0, upper=1.0,
            reward=lambda x, a: a * x, cost=lambda x, a: 0.0,
            kernel0=FiniteSupportKernel(lambda x: [(x, 1.0)]),
            kernel1=FiniteSupportKernel(lambda x: [(x, 1.0)]),
            discount=0.5,
        )
        curve = compute_index(proj, [0.5], 3)
        assert curve.undefined.all() and math.isnan(curve.values[0])

    def test_lookup_requires_exact_state(self, channel):
        curve = compute_index(channel, [0.1, 0.2], 10)
        assert curve.lookup(0.2)[0] == pytest.approx(0.2)
        with pytest.raises(KeyError):
            curve.lookup(0.15)


class TestLeftLimits:
    def test_below_grid_equals_always_active(self, channel):
        xs = np.linspace(0.1, 1, 10)
        ll = left_limit_metrics(channel, xs, 0.05, 50)
        t = compute_metrics(channel, xs, [E.below()], 50)
        assert np.array_equal(ll.F, t.F[:, 0]) and np.array_equal(ll.G, t.G[:, 0])

    def test_jump_at_point_six(self, channel):
        k = 104
        xs = np.linspace(0, 1, 21)
        ll = left_limit_metrics(channel, xs, 0.6, k)
        st = compute_metrics(channel, xs, [E.at(0.6)], k)
        m = compute_index(channel, [0.6], k).values[0]
        _, efg = error_bounds(channel, k)
        assert np.all(np.abs((ll.F - st.F[:, 0]) - m * (ll.G - st.G[:, 0])) <= 2 * efg)

    def test_diagonal_left_consistency(self, channel):
        xs = np.linspace(0.05, 0.95, 10)
        d = diagonal_metrics(channel, xs, 30, left=True)
        t = compute_metrics(channel, xs, [E.at_left(x) for x in xs], 30)
        for i, x in enumerate(xs):
            assert d.F[i] == pytest.approx(t.F[i, t.column(E.at_left(x))], abs=1e-14)


class TestHorizon:
    def test_documented_example(self, channel):
        # smallest k with 2*5*0.8^k*2/0.2 <= 1e-6, by direct search
        k = horizon_for_tolerance(channel, 1e-6, 0.2, 1.0)
        brute = next(j for j in range(1000) if 100 * 0.8**j <= 1e-6)
        assert k == brute == 83

    def test_large_tolerance_gives_zero(self, channel):
        scale = 2 * channel.bound_Mgamma * 2 / 0.2  # 1/(1-0.8) rounds just above 5
        assert horizon_for_tolerance(channel, scale, 0.2, 1.0) == 0
        assert horizon_for_tolerance(channel, 2 * scale, 0.2, 1.0) == 0
        assert horizon_for_tolerance(channel, 0.99 * scale, 0.2, 1.0) == 1

    @settings(max_examples=40)
    @given(tol=st.floats(1e-12, 1e-1))
    def test_halving(self, channel, tol):
        a = horizon_for_tolerance(channel, tol, 0.2, 1.0)
        b = horizon_for_tolerance(channel, tol / 2, 0.2, 1.0)
        assert a <= b <= a + math.ceil(math.log(2) / math.log(1 / 0.8)) + 1

    def test_no_contraction(self):
        proj = DiscountedProject(
            lower=0.0, upper=1.0, reward=lambda x, a: 0.0, cost=lambda x, a: float(a),
            kernel0=FiniteSupportKernel(lambda x: [(x, 1.0)]),
            kernel1=FiniteSupportKernel(lambda x: [(x, 1.0)]),
            discount=0.5, rate_gamma=0.5,
        )
        object.__setattr__(proj, "rate_gamma", 1.0)
        with pytest.raises(NoConvergenceError):
            horizon_for_tolerance(proj, 1e-3, 0.1, 1.0)


def test_node_budget(channel):
    with pytest.raises(ResourceLimitError):
        build_closure(channel, np.linspace(0, 1, 50), 60, node_budget=100)


def test_table_csv(channel, tmp_path):
    t = compute_metrics(channel, [0.2, 0.7], threshold_grid([0.5]), 5)
    path = tmp_path / "table.csv"
    write_table_csv(t, path)
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 2 * 4
    assert rows[0].keys() == {"x", "z", "z_kind", "F", "G", "f", "g", "k", "err_FG", "err_fg"}
    assert {r["z_kind"] for r in rows} == {"below", "z", "zminus", "above"}
