from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pclindex.engine import compute_index, compute_metrics, error_bounds
from pclindex.errors import InvalidModelError, InvalidParameterError
from pclindex.model import ExtendedThreshold, FiniteSupportKernel
from pclindex.models import (
    ChannelParams,
    StoppingSpec,
    backward_iterate,
    channel_case,
    channel_closed_form_index,
    channel_closed_form_metrics,
    channel_orbit,
    forward_iterate,
    stopping_project,
)


def test_derived_parameters(params):
    assert params.rho == pytest.approx(0.5)
    assert params.h_inf == pytest.approx(0.6)
    assert params.good == pytest.approx(0.8)


@pytest.mark.parametrize("p, q, beta", [(0.5, 0.5, 0.8), (0.6, 0.5, 0.8), (0.0, 0.3, 0.8), (0.2, 0.3, 1.0)])
def test_invalid_parameters(p, q, beta):
    with pytest.raises(InvalidParameterError):
        ChannelParams(p, q, beta)


def test_active_kernel_at_one(channel, params):
    assert channel.kernel1.support(1.0) == [(params.good, 1.0)]


def test_forward_iterate(params):
    assert forward_iterate(params, 0.2, 1) == pytest.approx(0.4)
    assert forward_iterate(params, 0.37, 0) == 0.37


@given(x=st.floats(0, 1), t=st.integers(0, 20))
def test_backward_inverts_forward(x, t):
    params = ChannelParams(0.2, 0.3, 0.8)
    back, _ = backward_iterate(params, forward_iterate(params, x, t), t)
    assert back == pytest.approx(x, abs=1e-12 * 2.0**t)


def test_backward_flags_range(params):
    assert backward_iterate(params, 0.55, 1) == (pytest.approx(0.5), True)
    assert backward_iterate(params, 0.1, 2)[1] is False


def test_orbit_contains_idle_iterates(params):
    pts = channel_orbit(params, 0.4, 0.3, 0.6)
    for v in (0.4, 0.5, 0.55, 0.575, 0.3, 0.45, 0.525, 0.6):
        assert any(abs(v - p) < 1e-15 for p in pts)


@pytest.mark.parametrize("z, case", [(0.1, 1), (0.3, 2), (0.59, 2), (0.6, 3), (0.79, 3), (0.8, 4), (1.0, 4)])
def test_case_dispatch(params, z, case):
    assert channel_case(params, z) == case


class TestClosedForms:
    def test_case_one(self, params):
        m = channel_closed_form_metrics(params, 0.4, 0.1)
        assert (m.G, m.f, m.g) == (pytest.approx(5.0), 0.4, 1.0)

    def test_case_four(self, params):
        m = channel_closed_form_metrics(params, 0.9, 0.85)
        assert (m.F, m.G, m.f, m.g) == (0.9, 1.0, 0.9, 1.0)

    def test_case_three_marginal(self, params):
        m = channel_closed_form_metrics(params, 0.5, 0.65)
        assert m.g == pytest.approx(0.76 / 0.36, abs=1e-12)

    @pytest.mark.parametrize("x, expected", [(0.2, 0.2), (0.7, 0.7 / 0.92), (0.9, 0.9), (0.8, 0.8)])
    def test_index_values(self, params, x, expected):
        assert channel_closed_form_index(params, x) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("boundary", [0.3, 0.6, 0.8])
    def test_index_continuous_at_case_boundaries(self, params, boundary):
        eps = 1e-9
        lo = channel_closed_form_index(params, boundary - eps)
        hi = channel_closed_form_index(params, boundary)
        assert abs(hi - lo) < 1e-7

    def test_index_monotone_dense(self, params):
        xs = np.linspace(0, 1, 10_001)
        v = np.array([channel_closed_form_index(params, x) for x in xs])
        assert np.all(np.diff(v) >= -1e-12)

    def test_beta_zero_index_is_state(self):
        p0 = ChannelParams(0.2, 0.3, 0.0)
        for x in np.linspace(0, 1, 21):
            assert channel_closed_form_index(p0, x) == pytest.approx(x, abs=1e-15)

    def test_match_engine_all_cases(self, channel, params):
        k = 120
        xs = np.linspace(0, 1, 41)
        zs = np.r_[np.linspace(0, 1, 41), 0.35, 0.45, 0.55, 0.58]
        table = compute_metrics(channel, xs, [ExtendedThreshold.at(z) for z in zs], k)
        eFG, efg = error_bounds(channel, k)
        for i, x in enumerate(xs):
            for z in zs:
                j = table.column(ExtendedThreshold.at(z))
                cf = channel_closed_form_metrics(params, x, z)
                assert abs(table.F[i, j] - cf.F) <= eFG
                assert abs(table.G[i, j] - cf.G) <= eFG
                assert abs(table.f[i, j] - cf.f) <= efg
                assert abs(table.g[i, j] - cf.g) <= efg


class TestStopping:
    def _spec(self, beta=0.8, cost=lambda x: 1.0):
        p = ChannelParams(0.2, 0.3, max(beta, 0.0))
        return StoppingSpec(
            active_reward=lambda x: x,
            active_cost=cost,
            active_kernel=FiniteSupportKernel(lambda x: [(p.good, x), (p.q, 1 - x)]),
            beta=beta,
        )

    def test_idle_below_threshold(self):
        proj = stopping_project(self._spec())
        t = compute_metrics(proj, [0.1, 0.4, 0.6], [ExtendedThreshold.at(0.4)], 30)
        assert t.F[:2, 0].tolist() == [0.0, 0.0]
        assert t.G[:2, 0].tolist() == [0.0, 0.0]
        assert t.G[2, 0] > 0

    def test_beta_zero_ratio(self):
        proj = stopping_project(self._spec(beta=0.0, cost=lambda x: 2.0))
        curve = compute_index(proj, [0.2, 0.6], 0)
        assert curve.values.tolist() == [0.1, 0.3]

    def test_nonpositive_cost_rejected(self):
        with pytest.raises(InvalidModelError):
            stopping_project(self._spec(cost=lambda x: x))
