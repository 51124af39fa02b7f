"""Numerical checks of the three PCL-indexability conditions and the identities
that follow from them.

All integrals against the threshold variable are Lebesgue-Stieltjes sums over
a breakpoint partition. For finite-support kernels the finite-horizon metrics
are step functions of the threshold that change only at reachable states. So
when the partition holds every reachable state, the sums are exact.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .engine import (
    G_FLOOR,
    IndexCurve,
    MetricsTable,
    NODE_BUDGET,
    compute_index,
    compute_metrics,
    reachable_states,
    threshold_grid,
)
from .errors import PCLIndexError, UndefinedMetricError, UnsupportedStructureError
from .model import DiscountedProject, ExtendedThreshold, FiniteSupportKernel

SCHEMA_VERSION = 1
TOLERANCE_FACTOR = 10.0


class ArgumentError(PCLIndexError, ValueError):
    """Inputs violate a documented precondition."""


class Verdict(str, enum.Enum):
    PASS = "pass"
    FAIL = "fail"
    INDETERMINATE = "indeterminate"


def ls_integral(
    breakpoints: Sequence[float],
    integrand,
    integrator,
    interval: tuple[float, float],
    left_limits=None,
) -> float:
    """Stieltjes sum of ``integrand`` against a step ``integrator`` over ``(z1, z2]``.

    ``integrand`` and ``integrator`` are arrays aligned with ``breakpoints`` or
    callables on them; ``left_limits`` optionally gives the integrator's left
    limits so jumps are isolated. At a jump point ``t`` the contribution is
    ``integrand(t) * (I(t) - I(t-))``; between breakpoints it is the
    right-endpoint sum.
    """
    return ls_integral_parts(breakpoints, integrand, integrator, interval, left_limits)[0]


def ls_integral_parts(breakpoints, integrand, integrator, interval, left_limits=None) -> tuple[float, float]:
    """Like :func:`ls_integral` but returns ``(total, jump_part)``."""
    t = np.asarray(breakpoints, dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ArgumentError("breakpoints must be strictly increasing")
    z1, z2 = interval
    a, b = np.searchsorted(t, z1), np.searchsorted(t, z2)
    if a >= len(t) or b >= len(t) or t[a] != z1 or t[b] != z2:
        raise ArgumentError(f"interval endpoints ({z1}, {z2}] must be breakpoints")
    if b < a:
        raise ArgumentError("interval must satisfy z1 <= z2")
    m = np.asarray(integrand(t) if callable(integrand) else integrand, dtype=float)
    I = np.asarray(integrator(t) if callable(integrator) else integrator, dtype=float)
    idx = np.arange(a + 1, b + 1)
    if left_limits is None:
        total = float(np.sum(m[idx] * (I[idx] - I[idx - 1])))
        return total, 0.0
    L = np.asarray(left_limits(t) if callable(left_limits) else left_limits, dtype=float)
    jumps = float(np.sum(m[idx] * (I[idx] - L[idx])))
    smooth = float(np.sum(m[idx] * (L[idx] - I[idx - 1])))
    return jumps + smooth, jumps


@dataclass(frozen=True)
class Pcli1Verdict:
    min_g: float
    bound: float
    margin: float
    passed: bool
    certified_floor: float | None = None
    floor_margin: float | None = None

    def to_dict(self) -> dict:
        return {
            "min_g": self.min_g,
            "bound": self.bound,
            "margin": self.margin,
            "certified_floor": self.certified_floor,
            "floor_margin": self.floor_margin,
            "pass": self.passed,
        }


def check_pcli1(table: MetricsTable, certified_floor: float | None = None) -> Pcli1Verdict:
    """Positivity of the marginal resource metric on the evaluated grid.

    The margin subtracts the certified error of ``g_k``. ``certified_floor`` is
    a known analytic lower bound (for the channel, ``1 - beta``); it is
    compared and reported but does not change the verdict.
    """
    if table.g is None:
        raise ArgumentError("table has no marginal metrics")
    slack = table.error_fg * table.weights[:, None]
    min_g = float(np.min(table.g))
    margin = float(np.min(table.g - slack))
    floor_margin = None if certified_floor is None else min_g - certified_floor
    return Pcli1Verdict(min_g, table.error_fg, margin, margin > 0.0, certified_floor, floor_margin)


@dataclass(frozen=True)
class Pcli2Verdict:
    max_decrease: float
    max_jump_estimate: float
    max_error_bound: float
    passed: bool
    gap_budget: float | None = None
    gap_within_budget: bool | None = None
    undefined_states: tuple[float, ...] = ()
    worst_state: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "max_decrease": self.max_decrease,
            "max_jump_estimate": self.max_jump_estimate,
            "max_error_bound": self.max_error_bound,
            "continuity_evidence": {
                "max_adjacent_gap": self.max_jump_estimate,
                "budget": self.gap_budget,
                "within_budget": self.gap_within_budget,
            },
            "undefined_states": list(self.undefined_states),
            "worst_state": self.worst_state,
            "pass": self.passed,
        }


def check_pcli2(curve: IndexCurve, gap_budget: float | None = None) -> Pcli2Verdict:
    """Monotonicity of the sampled index, within the per-point error bounds.

    An adjacent decrease counts as a violation only if it exceeds the sum of
    the two error bounds. The largest adjacent gap is reported as continuity
    evidence against an optional budget; it never decides the verdict.
    """
    if len(curve.states) < 3:
        raise ArgumentError("need at least 3 states")
    undefined = tuple(float(x) for x in curve.states[curve.undefined])
    v, e = curve.values, curve.error_bounds
    dec = np.maximum(v[:-1] - v[1:], 0.0)
    gaps = np.abs(np.diff(v))
    allowed = e[:-1] + e[1:]
    with np.errstate(invalid="ignore"):
        bad = ~(dec <= allowed)
    i = int(np.nanargmax(dec)) if np.any(np.isfinite(dec)) else 0
    max_gap = float(np.nanmax(gaps)) if np.any(np.isfinite(gaps)) else float("nan")
    within = None if gap_budget is None else bool(max_gap <= gap_budget)
    return Pcli2Verdict(
        max_decrease=float(np.nanmax(dec)) if np.any(np.isfinite(dec)) else float("nan"),
        max_jump_estimate=max_gap,
        max_error_bound=float(np.max(e)),
        passed=not undefined and not bool(np.any(bad)),
        gap_budget=gap_budget,
        gap_within_budget=within,
        undefined_states=undefined,
        worst_state=float(curve.states[i]),
    )


@dataclass(frozen=True)
class Pcli3Case:
    x: float
    z1: float
    z2: float
    residual: float
    coarse_residual: float
    refinement: float
    tolerance: float
    float_floor: float
    n_breakpoints: int = 2

    @property
    def refinable(self) -> bool:
        """Whether dropping every other interior breakpoint changes the partition."""
        return self.n_breakpoints > 2

    @property
    def passed(self) -> bool:
        return self.residual <= self.tolerance

    @property
    def refinement_improves(self) -> bool:
        return self.residual < self.coarse_residual or self.residual <= self.float_floor


@dataclass(frozen=True)
class Pcli3Verdict:
    max_residual: float
    partitions: int
    passed: bool
    c1: float
    c2: float
    cases: tuple[Pcli3Case, ...] = field(default=(), repr=False)

    @property
    def refinement_fraction(self) -> float:
        """Share of refinable cases whose residual is lower on the full partition."""
        cases = [c for c in self.cases if c.refinable]
        if not cases:
            return float("nan")
        return sum(c.refinement_improves for c in cases) / len(cases)

    def to_dict(self) -> dict:
        return {
            "max_residual": self.max_residual,
            "partitions": self.partitions,
            "c1": self.c1,
            "c2": self.c2,
            "refinement_fraction": self.refinement_fraction,
            "refinable_cases": sum(c.refinable for c in self.cases),
            "max_tolerance": max((c.tolerance for c in self.cases), default=float("nan")),
            "pass": self.passed,
        }


def _strict_row(table: MetricsTable, i: int, zs: np.ndarray, which: str) -> np.ndarray:
    mat = getattr(table, which)
    return np.array([mat[i, table.column(ExtendedThreshold.at(z))] for z in zs])


def _left_row(table: MetricsTable, i: int, zs: np.ndarray, which: str) -> np.ndarray | None:
    mat = getattr(table, which)
    try:
        return np.array([mat[i, table.column(ExtendedThreshold.at_left(z))] for z in zs])
    except KeyError:
        return None


def _total_variation(v: np.ndarray) -> float:
    return float(np.sum(np.abs(np.diff(v)))) if len(v) > 1 else 0.0


def check_pcli3(
    project: DiscountedProject,
    table: MetricsTable,
    curve: IndexCurve,
    intervals: Iterable[tuple[float, float]],
    c1: float = TOLERANCE_FACTOR,
    c2: float = 0.0,
    states: Sequence[float] | None = None,
) -> Pcli3Verdict:
    """Residual of ``F(x, z2) - F(x, z1) = int_(z1, z2] m* G(x, dz)`` per state and interval.

    The tolerance for each case is ``c1`` times the certified bound on the
    residual of the horizon-k metrics, plus ``c2`` times the refinement estimate.
    The refinement estimate is the gap between the full breakpoint partition and
    one that keeps every other breakpoint.
    """
    bps = table.finite_breakpoints()
    rows = range(len(table.states)) if states is None else [table.row(x) for x in states]
    cases = []
    for z1, z2 in intervals:
        for z in (z1, z2):
            i = np.searchsorted(bps, z)
            if i >= len(bps) or bps[i] != z:
                raise ArgumentError(f"interval endpoint {z} is not a breakpoint of the table")
        a, b = np.searchsorted(bps, z1), np.searchsorted(bps, z2)
        t = bps[a : b + 1]
        mstar = curve.lookup(t)
        for i in rows:
            x = float(table.states[i])
            G = _strict_row(table, i, t, "G")
            GL = _left_row(table, i, t, "G")
            F = _strict_row(table, i, t, "F")
            fine = ls_integral(t, mstar, G, (z1, z2), GL)
            keep = np.unique(np.r_[0, np.arange(0, len(t), 2), len(t) - 1])
            coarse = ls_integral(t[keep], mstar[keep], G[keep], (z1, z2))
            dF = F[-1] - F[0]
            resid = abs(dF - fine)
            w = table.weights[i]
            e_idx = float(np.max(curve.bound_at(t)))
            cert = table.error_FG * w * (2.0 + 2.0 * np.max(np.abs(mstar)) + _total_variation(mstar))
            cert += e_idx * _total_variation(G if GL is None else np.ravel(np.column_stack([GL, G])))
            scale = abs(F[0]) + abs(F[-1]) + float(np.sum(np.abs(mstar[1:] * np.diff(G))))
            cases.append(
                Pcli3Case(
                    x=x,
                    z1=float(z1),
                    z2=float(z2),
                    residual=resid,
                    coarse_residual=abs(dF - coarse),
                    refinement=abs(fine - coarse),
                    tolerance=c1 * cert + c2 * abs(fine - coarse),
                    float_floor=64 * np.finfo(float).eps * max(scale, 1.0),
                    n_breakpoints=len(t),
                )
            )
    max_res = max((c.residual for c in cases), default=0.0)
    return Pcli3Verdict(
        max_residual=max_res,
        partitions=len(cases),
        passed=all(c.passed for c in cases),
        c1=c1,
        c2=c2,
        cases=tuple(cases),
    )


def _metric_ratio(table: MetricsTable, i: int, j: int, g_floor: float) -> tuple[float, float, float]:
    f, g = table.f[i, j], table.g[i, j]
    if not g > g_floor:
        raise UndefinedMetricError(f"g = {g} at state {table.states[i]} is not above {g_floor}")
    return f / g, f, g


def _piecewise_sum(table: MetricsTable, i: int, points: np.ndarray, integrator: np.ndarray) -> float:
    """Sum of ``g(x, P_j) * (v(P_{j+1}) - v(P_j))`` over consecutive points."""
    if len(points) < 2:
        return 0.0
    g = _strict_row(table, i, points[:-1], "g")
    return float(np.sum(g * np.diff(integrator)))


def _interior(bps: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return bps[(bps > lo) & (bps < hi)]


def _volterra(x, z, table, curve, lower, upper, g_floor):
    i = table.row(x)
    j = table.column(z)
    bps = table.finite_breakpoints()
    lower = bps[0] if lower is None else lower
    upper = bps[-1] if upper is None else upper
    m_xz, _, g_xz = _metric_ratio(table, i, j, g_floor)
    if z.kind == "below":
        pts = np.r_[lower, _interior(bps, lower, x), x] if x > lower else np.array([lower])
        ref_state, sign = lower, 1.0
    elif z.kind == "above":
        pts = np.r_[x, _interior(bps, x, upper), upper] if x < upper else np.array([x])
        ref_state, sign = upper, -1.0
    elif x > z.z:
        pts = np.r_[z.z, _interior(bps, z.z, x), x]
        ref_state, sign = z.z, 1.0
    else:
        pts = np.r_[x, _interior(bps, x, z.z), z.z] if x < z.z else np.array([x])
        ref_state, sign = z.z, -1.0
    ref = float(curve.lookup(ref_state)[0])
    integral = sign * _piecewise_sum(table, i, pts, curve.lookup(pts)) / g_xz
    return i, j, m_xz, ref, ref_state, integral, g_xz, pts


def volterra_terms(
    x: float,
    z: ExtendedThreshold,
    table: MetricsTable,
    curve: IndexCurve,
    lower: float | None = None,
    upper: float | None = None,
    g_floor: float = G_FLOOR,
) -> tuple[float, float, float, float]:
    """Return ``(m(x, z), m*(z), scaled integral, g(x, z))`` of the Volterra identity.

    The identity holds when ``m(x, z) - m*(z)`` equals the scaled integral.
    """
    _, _, m_xz, ref, _, integral, g_xz, _ = _volterra(x, z, table, curve, lower, upper, g_floor)
    return m_xz, ref, integral, g_xz


def volterra_residual(
    x: float,
    z: ExtendedThreshold,
    table: MetricsTable,
    curve: IndexCurve,
    lower: float | None = None,
    upper: float | None = None,
    g_floor: float = G_FLOOR,
) -> float:
    """Residual of the Volterra identity linking ``m(x, z) - m*(z)`` to an
    integral of ``m*`` weighted by ``g(x, .) / g(x, z)``.

    The table row at ``x`` needs strict-threshold columns at every reachable
    state in the integration range, so that ``g(x, .)`` is constant between
    consecutive breakpoints.
    """
    m_xz, ref, integral, _ = volterra_terms(x, z, table, curve, lower, upper, g_floor)
    return abs(m_xz - ref - integral)


def volterra_check(
    x: float,
    z: ExtendedThreshold,
    table: MetricsTable,
    curve: IndexCurve,
    lower: float | None = None,
    upper: float | None = None,
    factor: float = TOLERANCE_FACTOR,
    g_floor: float = G_FLOOR,
) -> tuple[float, float]:
    """Volterra residual together with ``factor`` times its certified error bound."""
    i, j, m_xz, ref, ref_state, integral, g_xz, pts = _volterra(x, z, table, curve, lower, upper, g_floor)
    e_pts = curve.bound_at(pts)
    g_row = _strict_row(table, i, pts, "g")
    cert = metric_ratio_bound(table, i, j) + float(curve.bound_at(ref_state)[0])
    cert += float(np.max(e_pts)) * (2.0 * float(np.max(np.abs(g_row))) + _total_variation(g_row)) / g_xz
    cert += table.error_fg * table.weights[i] * _total_variation(curve.lookup(pts)) / max(g_xz - table.error_fg, 1e-300)
    return abs(m_xz - ref - integral), factor * cert


def metric_ratio_bound(table: MetricsTable, i: int, j: int) -> float:
    """Certified error of ``m_k(x, z)`` from the errors of ``f_k`` and ``g_k``."""
    f, g = table.f[i, j], table.g[i, j]
    e = table.error_fg * table.weights[i]
    g_low = g - e
    if not g_low > 0:
        return float("inf")
    return e * (1.0 + abs(f / g)) / g_low


def sign_consistency(
    x: float, z: ExtendedThreshold, table: MetricsTable, curve: IndexCurve, strict: bool = False
) -> Verdict:
    """Compare the sign of ``m(x, z) - m*(z)`` with that of ``m*(x) - m*(z)``.

    Values within their combined error bound count as zero. If both are zero
    the signs agree. If only one is, the result is indeterminate, or a failure
    when ``strict``.
    """
    if not z.is_finite:
        raise ArgumentError("sign consistency needs a finite threshold")
    i, j = table.row(x), table.column(z)
    m_xz = table.f[i, j] / table.g[i, j]
    mz, mx = curve.lookup([z.z, x])
    ez, ex = curve.bound_at([z.z, x])
    a, ea = m_xz - mz, metric_ratio_bound(table, i, j) + ez
    b, eb = mx - mz, ex + ez
    a_zero, b_zero = abs(a) <= ea, abs(b) <= eb
    if a_zero and b_zero:
        return Verdict.PASS
    if a_zero or b_zero:
        return Verdict.FAIL if strict else Verdict.INDETERMINATE
    return Verdict.PASS if np.sign(a) == np.sign(b) else Verdict.FAIL


@dataclass(frozen=True, eq=False)
class DualWitnessResult:
    lam: float
    regime: str
    states: np.ndarray
    margins: np.ndarray
    tolerances: np.ndarray
    eta: float
    xi: float

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margins))

    @property
    def passed(self) -> bool:
        return bool(np.all(self.margins >= -self.tolerances))

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "regime": self.regime,
            "min_margin": self.min_margin,
            "max_abs_margin": float(np.max(np.abs(self.margins))),
            "tolerance": float(np.max(self.tolerances)),
            "eta": self.eta,
            "xi": self.xi,
            "pass": self.passed,
        }


def dual_witness_check(
    lam: float,
    states: Sequence[float],
    tables: MetricsTable | dict,
    curve: IndexCurve,
    lower: float,
    upper: float,
    factor: float = TOLERANCE_FACTOR,
) -> DualWitnessResult:
    """Feasibility margins of the dual witness built from ``psi = min(m*, lam)``.

    ``margin(y) = f(y, always) - int_[lower, y) g(y, b) psi(db) - g(y, always) * psi(lower)``

    ``tables`` is one table holding every state, or a mapping from state to its
    own table. Each needs the always-active column and strict columns at the
    reachable states below ``y``.
    """
    m_low, m_up = curve.lookup([lower, upper])
    regime = "below" if lam < m_low else ("above" if lam > m_up else "interior")
    eta = min(float(m_low), lam)
    xi = max(lam - float(m_up), 0.0)
    below = ExtendedThreshold.below()
    margins, tols = [], []
    for y in np.asarray(states, dtype=float):
        table = tables[float(y)] if isinstance(tables, dict) else tables
        i, j = table.row(y), table.column(below)
        bps = table.finite_breakpoints()
        pts = np.r_[lower, _interior(bps, lower, y), y] if y > lower else np.array([lower])
        psi = np.minimum(curve.lookup(pts), lam)
        integral = _piecewise_sum(table, i, pts, psi)
        margin = table.f[i, j] - integral - table.g[i, j] * eta
        g_row = _strict_row(table, i, pts, "g") if len(pts) else np.zeros(1)
        e_idx = float(np.max(curve.bound_at(pts)))
        cert = table.error_fg * table.weights[i] * (1.0 + 2.0 * np.max(np.abs(psi)) + _total_variation(psi))
        cert += e_idx * (2.0 * max(np.max(np.abs(g_row)), abs(table.g[i, j])) + _total_variation(g_row))
        margins.append(margin)
        tols.append(factor * cert)
    return DualWitnessResult(lam, regime, np.asarray(states, float), np.array(margins), np.array(tols), eta, xi)


@dataclass(frozen=True)
class PiecewiseConstantG:
    x: float
    breakpoints: tuple[float, ...]
    constant_intervals: tuple[tuple[float, float], ...]
    candidates: int


def detect_piecewise_constant_G(
    project: DiscountedProject,
    x: float,
    z_grid: Sequence[float],
    horizon: int,
    node_budget: int = NODE_BUDGET,
) -> PiecewiseConstantG:
    """Jump points of ``G(x, .)`` inside the span of ``z_grid``.

    Candidates are the states reachable from ``x``; a candidate ``t`` is a
    breakpoint when ``G(x, t-)`` and ``G(x, t)`` differ by more than twice the
    certified error. The grid is then split into maximal constant pieces.
    """
    for k in (project.kernel0, project.kernel1):
        if not isinstance(k, FiniteSupportKernel):
            raise UnsupportedStructureError("piecewise-constant analysis needs finite-support kernels")
    grid = np.unique(np.asarray(z_grid, dtype=float))
    lo, hi = grid[0], grid[-1]
    reach = reachable_states(project, x, horizon, node_budget)
    cand = reach[(reach >= lo) & (reach <= hi)]
    bps: list[float] = []
    if len(cand):
        table = compute_metrics(project, [x], threshold_grid(cand, extremes=False), horizon, node_budget)
        jumps = _left_row(table, 0, cand, "G") - _strict_row(table, 0, cand, "G")
        bps = [float(t) for t, d in zip(cand, jumps) if abs(d) > 2.0 * table.error_FG * table.weights[0]]
    pieces = []
    edges = [lo, *[b for b in bps if lo < b <= hi], hi]
    for a, b in zip(edges[:-1], edges[1:]):
        if b > a:
            pieces.append((float(a), float(b)))
    return PiecewiseConstantG(float(x), tuple(bps), tuple(pieces), len(cand))


def state_breakpoints(
    project: DiscountedProject, x: float, horizon: int, extra: Sequence[float] = ()
) -> np.ndarray:
    """Reachable states of ``x`` plus the interval ends, model breakpoints and ``extra``."""
    reach = reachable_states(project, x, horizon)
    pts = np.concatenate([reach, [project.lower, project.upper], project.breakpoints, np.asarray(extra, float)])
    pts = pts[(pts >= project.lower) & (pts <= project.upper)]
    return np.unique(pts)


def state_tables(
    project: DiscountedProject, xs: Sequence[float], horizon: int, extra: Sequence[float] = ()
) -> dict[float, MetricsTable]:
    """One single-row table per state with both threshold variants at all of its breakpoints."""
    out = {}
    for x in np.unique(np.asarray(xs, dtype=float)):
        bps = state_breakpoints(project, float(x), horizon, extra)
        out[float(x)] = compute_metrics(project, [x], threshold_grid(bps), horizon)
    return out


def curve_for_tables(project: DiscountedProject, tables: dict[float, MetricsTable], horizon: int, extra=()) -> IndexCurve:
    """Index curve on the union of the tables' breakpoints."""
    pts = [t.finite_breakpoints() for t in tables.values()] + [np.asarray(extra, float)]
    return compute_index(project, np.unique(np.concatenate(pts)), horizon)


@dataclass(frozen=True)
class IdentityResult:
    name: str
    max_residual: float
    tolerance: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "max_residual": self.max_residual,
            "tolerance": self.tolerance,
            "pass": self.passed,
            **self.detail,
        }


def jump_identity(table: MetricsTable, curve: IndexCurve, factor: float = TOLERANCE_FACTOR) -> IdentityResult:
    """Check ``F(x, z-) - F(x, z) = m*(z) (G(x, z-) - G(x, z))`` at every breakpoint with both columns."""
    worst, worst_excess = 0.0, -np.inf
    for z in table.finite_breakpoints():
        try:
            jl, js = table.column(ExtendedThreshold.at_left(z)), table.column(ExtendedThreshold.at(z))
        except KeyError:
            continue
        mz, ez = float(curve.lookup(z)[0]), float(curve.bound_at(z)[0])
        dF = table.F[:, jl] - table.F[:, js]
        dG = table.G[:, jl] - table.G[:, js]
        r = np.abs(dF - mz * dG)
        tol = factor * (2.0 * table.error_FG * table.weights * (1.0 + abs(mz)) + ez * np.abs(dG))
        worst = max(worst, float(np.max(r)))
        worst_excess = max(worst_excess, float(np.max(r - tol)))
    tol_rep = factor * 2.0 * table.error_FG
    return IdentityResult("jump_identity", worst, tol_rep, worst_excess <= 0.0)


def bound_identity(table: MetricsTable, curve: IndexCurve) -> IdentityResult:
    """Check ``max_{x <= z} m(x, z) <= m*(z) <= min_{x > z} m(x, z)`` within error bounds."""
    worst = 0.0
    ok = True
    m = table.m()
    for z in table.finite_breakpoints():
        try:
            mz, ez = float(curve.lookup(z)[0]), float(curve.bound_at(z)[0])
        except KeyError:
            continue
        j = table.column(ExtendedThreshold.at(z))
        errs = np.array([metric_ratio_bound(table, i, j) for i in range(len(table.states))])
        le, gt = table.states <= z, table.states > z
        if np.any(le):
            v = float(np.max(m[le, j] - errs[le])) - (mz + ez)
            worst = max(worst, v)
            ok &= v <= 0.0
        if np.any(gt):
            v = (mz - ez) - float(np.min(m[gt, j] + errs[gt]))
            worst = max(worst, v)
            ok &= v <= 0.0
    return IdentityResult("bound_identity", max(worst, 0.0), 0.0, bool(ok))


@dataclass(frozen=True)
class PCLReport:
    pcli1: Pcli1Verdict
    pcli2: Pcli2Verdict
    pcli3: Pcli3Verdict
    identities: tuple[IdentityResult, ...]
    grid_meta: dict

    @property
    def passed(self) -> bool:
        return (
            self.pcli1.passed
            and self.pcli2.passed
            and self.pcli3.passed
            and all(r.passed for r in self.identities)
        )

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "pcli1": self.pcli1.to_dict(),
            "pcli2": self.pcli2.to_dict(),
            "pcli3": self.pcli3.to_dict(),
            "identities": [r.to_dict() for r in self.identities],
            "grid_meta": self.grid_meta,
            "pass": self.passed,
        }
