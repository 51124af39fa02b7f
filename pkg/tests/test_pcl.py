from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pclindex import pcl
from pclindex.engine import IndexCurve, compute_index, compute_metrics, threshold_grid
from pclindex.errors import UnsupportedStructureError
from pclindex.model import DiscountedProject, ExtendedThreshold, FiniteSupportKernel, QuadratureKernel
from pclindex.models import StoppingSpec, channel_closed_form_index, stopping_project

E = ExtendedThreshold


@pytest.fixture(scope="module")
def tables(channel, k_fine):
    return pcl.state_tables(channel, [0.1, 0.4, 0.5, 0.9], k_fine, extra=[0.1, 0.2, 0.7, 0.85, 0.95])


@pytest.fixture(scope="module")
def curve(channel, tables, k_fine):
    return pcl.curve_for_tables(channel, tables, k_fine)


class TestLSIntegral:
    def test_constant_integrand(self):
        t = [0.0, 0.2, 0.5, 1.0]
        I = [3.0, 2.0, 1.5, 0.25]
        assert pcl.ls_integral(t, lambda s: np.full(len(s), 2.0), I, (0.2, 1.0)) == pytest.approx(2.0 * (0.25 - 2.0))

    def test_constant_integrator(self):
        assert pcl.ls_integral([0, 1, 2], [5, 6, 7], [1, 1, 1], (0.0, 2.0)) == 0.0

    def test_jump_isolated_with_left_limits(self):
        t = [0.85, 0.9, 0.95]
        total, jumps = pcl.ls_integral_parts(t, [0.85, 0.9, 0.95], [1.0, 0.0, 0.0], (0.85, 0.95),
                                             left_limits=[1.0, 1.0, 0.0])
        assert total == jumps == pytest.approx(-0.9)

    def test_endpoints_must_be_breakpoints(self):
        with pytest.raises(pcl.ArgumentError):
            pcl.ls_integral([0, 1, 2], [1, 1, 1], [0, 1, 2], (0.5, 2.0))

    @settings(max_examples=60)
    @given(
        data=st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=3, max_size=20),
        cut=st.integers(0, 100),
        s=st.floats(-3, 3),
    )
    def test_additive_and_linear(self, data, cut, s):
        n = len(data)
        t = np.arange(n, dtype=float)
        m = np.array([a for a, _ in data])
        I = np.array([b for _, b in data])
        mid = float(cut % n)
        whole = pcl.ls_integral(t, m, I, (0.0, n - 1.0))
        parts = pcl.ls_integral(t, m, I, (0.0, mid)) + pcl.ls_integral(t, m, I, (mid, n - 1.0))
        assert parts == pytest.approx(whole, abs=1e-9)
        scaled = pcl.ls_integral(t, s * m + 1.0, I, (0.0, n - 1.0))
        assert scaled == pytest.approx(s * whole + (I[-1] - I[0]), abs=1e-9)


class TestPcli1:
    def test_channel_floor(self, channel, k_fine):
        zs = np.linspace(0, 1, 41)
        t = compute_metrics(channel, np.linspace(0, 1, 41), threshold_grid(zs), k_fine)
        v = pcl.check_pcli1(t, certified_floor=0.2)
        assert v.passed and v.min_g >= 0.2 - 1e-8 and v.floor_margin >= -1e-8

    def test_stopping_floor(self, params):
        spec = StoppingSpec(lambda x: x, lambda x: 0.5,
                            FiniteSupportKernel(lambda x: [(0.8, x), (0.3, 1 - x)]), beta=0.8)
        proj = stopping_project(spec)
        xs = np.linspace(0, 1, 21)
        t = compute_metrics(proj, xs, [E.at(z) for z in xs], 104)
        v = pcl.check_pcli1(t)
        assert v.passed
        above = t.states[:, None] > np.array([tt.z for tt in t.thresholds])[None, :]
        assert np.all(t.g[above] >= 0.2 * 0.5 - 1e-8)

    def test_equal_costs_fail(self):
        proj = DiscountedProject(
            lower=0.0, upper=1.0, reward=lambda x, a: a * x, cost=lambda x, a: 1.0,
            kernel0=FiniteSupportKernel(lambda x: [(x, 1.0)]),
            kernel1=FiniteSupportKernel(lambda x: [(x, 1.0)]), discount=0.5,
        )
        t = compute_metrics(proj, [0.2, 0.8], [E.at(0.5)], 20)
        assert not pcl.check_pcli1(t).passed


class TestPcli2:
    def test_closed_form_curve(self, params):
        xs = np.linspace(0, 1, 201)
        v = np.array([channel_closed_form_index(params, x) for x in xs])
        verdict = pcl.check_pcli2(IndexCurve(xs, v, np.zeros_like(xs), 0.2))
        assert verdict.passed and verdict.max_decrease == 0.0

    def test_constant_curve(self):
        xs = np.linspace(0, 1, 5)
        verdict = pcl.check_pcli2(IndexCurve(xs, np.ones(5), np.zeros(5), 1.0))
        assert verdict.passed and verdict.max_decrease == 0.0 and verdict.max_jump_estimate == 0.0

    def test_injected_dip(self):
        xs = np.linspace(0, 1, 11)
        v = xs.copy()
        v[5] -= 0.05 + 0.1
        verdict = pcl.check_pcli2(IndexCurve(xs, v, np.full(11, 1e-6), 1.0))
        assert not verdict.passed and verdict.worst_state == pytest.approx(0.4)

    def test_undefined_states_fail(self):
        xs = np.linspace(0, 1, 4)
        verdict = pcl.check_pcli2(IndexCurve(xs, np.array([0, np.nan, 1, 2.0]), np.zeros(4), 1.0))
        assert not verdict.passed and verdict.undefined_states == (pytest.approx(1 / 3),)

    def test_gap_budget_reported(self):
        xs = np.linspace(0, 1, 4)
        verdict = pcl.check_pcli2(IndexCurve(xs, xs, np.zeros(4), 1.0), gap_budget=0.1)
        assert verdict.passed and verdict.gap_within_budget is False


class TestPcli3:
    def test_case_four_interval(self, channel, tables, curve):
        v = pcl.check_pcli3(channel, tables[0.9], curve, [(0.85, 0.95)])
        (case,) = v.cases
        assert case.residual <= 1e-12
        F = tables[0.9].F[0]
        assert F[tables[0.9].column(E.at(0.95))] - F[tables[0.9].column(E.at(0.85))] == pytest.approx(-0.9)

    def test_middle_interval(self, channel, tables, curve):
        v = pcl.check_pcli3(channel, tables[0.5], curve, [(0.2, 0.7)])
        assert v.passed and v.max_residual <= 1e-6

    def test_constant_G_interval(self, channel, tables, curve):
        # from 0.9 nothing is reachable strictly inside (0.85, 0.9)
        bps = tables[0.9].finite_breakpoints()
        inside = bps[(bps > 0.85) & (bps < 0.9)]
        assert len(inside) == 0
        v = pcl.check_pcli3(channel, tables[0.9], curve, [(0.8, 0.85)])
        assert v.cases[0].residual == 0.0

    def test_endpoint_not_breakpoint(self, channel, tables, curve):
        with pytest.raises(pcl.ArgumentError):
            pcl.check_pcli3(channel, tables[0.5], curve, [(0.2, 0.7001)])


class TestVolterra:
    def test_diagonal_is_zero(self, tables, curve):
        assert pcl.volterra_residual(0.5, E.at(0.5), tables[0.5], curve, 0.0, 1.0) <= 1e-15

    def test_case_one_region(self, tables, curve):
        r, tol = pcl.volterra_check(0.4, E.at(0.1), tables[0.4], curve, 0.0, 1.0)
        assert r <= 1e-8 and r <= tol

    @pytest.mark.parametrize("x", [0.1, 0.4, 0.9])
    def test_extremes(self, tables, curve, x):
        for t in (E.below(), E.above()):
            r, tol = pcl.volterra_check(x, t, tables[x], curve, 0.0, 1.0)
            assert r <= tol


class TestSignConsistency:
    def test_diagonal(self, tables, curve):
        assert pcl.sign_consistency(0.5, E.at(0.5), tables[0.5], curve) == pcl.Verdict.PASS

    def test_high_state_low_threshold(self, channel, k_fine):
        tabs = pcl.state_tables(channel, [0.9], k_fine, extra=[0.3])
        cur = pcl.curve_for_tables(channel, tabs, k_fine)
        t = tabs[0.9]
        i, j = t.row(0.9), t.column(E.at(0.3))
        assert t.f[i, j] / t.g[i, j] > cur.lookup(0.3)[0]
        assert pcl.sign_consistency(0.9, E.at(0.3), t, cur) == pcl.Verdict.PASS

    def test_strict_turns_indeterminate_into_fail(self, tables, curve):
        # nudge the curve so exactly one side lands in its zero band
        t = tables[0.4]
        z = 0.3
        assert pcl.sign_consistency(0.4, E.at(z), t, curve) == pcl.Verdict.PASS
        vals = curve.values.copy()
        vals[np.searchsorted(curve.states, 0.4)] = curve.lookup(z)[0]
        flat = IndexCurve(curve.states, vals, curve.error_bounds, curve.g_lower)
        assert pcl.sign_consistency(0.4, E.at(z), t, flat) == pcl.Verdict.INDETERMINATE
        assert pcl.sign_consistency(0.4, E.at(z), t, flat, strict=True) == pcl.Verdict.FAIL


class TestDualWitness:
    @pytest.mark.parametrize("lam", [0.25, 0.5, 0.75])
    def test_interior_feasible(self, tables, curve, lam):
        d = pcl.dual_witness_check(lam, list(tables), tables, curve, 0.0, 1.0)
        assert d.regime == "interior" and d.min_margin >= -1e-6 and d.passed

    def test_equality_above(self, tables, curve):
        d = pcl.dual_witness_check(1.5, list(tables), tables, curve, 0.0, 1.0)
        assert d.regime == "above"
        assert np.max(np.abs(d.margins)) <= 1e-12

    def test_below_regime_margin(self, tables, curve):
        lam = -0.5
        d = pcl.dual_witness_check(lam, list(tables), tables, curve, 0.0, 1.0)
        assert d.regime == "below"
        for y, margin in zip(d.states, d.margins):
            t = tables[float(y)]
            j = t.column(E.below())
            assert margin == pytest.approx(t.f[0, j] - lam * t.g[0, j], abs=1e-12)
            assert margin > 0


class TestPiecewiseConstant:
    def test_case_four_single_jump(self, channel):
        r = pcl.detect_piecewise_constant_G(channel, 0.9, np.linspace(0.85, 0.95, 11), 60)
        assert r.breakpoints == (0.9,)

    def test_orbit_breakpoints(self, channel, params):
        r = pcl.detect_piecewise_constant_G(channel, 0.4, np.linspace(0.3, 0.6, 31), 60)
        orbit = {0.4, 0.5, 0.55, 0.575}
        assert orbit <= {round(b, 12) for b in r.breakpoints}
        rho, h = params.rho, params.h_inf
        allowed = [h - (h - s) * rho**t for s in (0.4, params.q) for t in range(80)] + [h, params.q, params.good]
        for b in r.breakpoints:
            assert min(abs(b - a) for a in allowed) < 1e-12

    def test_unreachable_interval(self, channel):
        # from 0.9 the interval (0.85, 0.88) is never visited
        r = pcl.detect_piecewise_constant_G(channel, 0.9, [0.85, 0.86, 0.88], 60)
        assert r.breakpoints == () and r.constant_intervals == ((0.85, 0.88),)

    def test_quadrature_unsupported(self):
        nodes = np.linspace(0, 1, 3)
        k = QuadratureKernel(nodes, lambda x, ys: np.full(3, 1 / 3))
        proj = DiscountedProject(0.0, 1.0, lambda x, a: a * x, lambda x, a: float(a), k, k, 0.5)
        with pytest.raises(UnsupportedStructureError):
            pcl.detect_piecewise_constant_G(proj, 0.5, nodes, 5)


class TestIdentities:
    def test_jump_and_bound(self, channel, k_fine):
        xs = np.linspace(0, 1, 41)
        t = compute_metrics(channel, xs, threshold_grid(xs), k_fine)
        c = compute_index(channel, xs, k_fine)
        assert pcl.jump_identity(t, c).passed
        assert pcl.bound_identity(t, c).passed

    def test_report_schema(self, channel, tables, curve):
        xs = np.linspace(0, 1, 11)
        t = compute_metrics(channel, xs, threshold_grid(xs), 40)
        c = compute_index(channel, xs, 40)
        rep = pcl.PCLReport(pcl.check_pcli1(t), pcl.check_pcli2(c),
                            pcl.check_pcli3(channel, tables[0.5], curve, [(0.2, 0.7)]), (), {})
        d = rep.to_dict()
        assert d["schema"] == 1 and d["pass"] is True
