"""Resource-reward frontier of threshold policies for an initial distribution.

Each threshold ``z`` gives two points ``(G(p, z), F(p, z))`` and
``(G(p, z-), F(p, z-))``. Randomizing between them traces the segment joining
them, so the achievable upper boundary is the concave upper hull of the cloud.
Its slope over the segment at ``z`` is the index value there.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._io import atomic_write
from .engine import IndexCurve, compute_index, compute_metrics, threshold_grid
from .model import DiscountedProject, ExtendedThreshold, ThresholdPolicy

COLLINEAR_TOL = 1e-12


@dataclass(frozen=True)
class FrontierPoint:
    threshold: ExtendedThreshold
    G: float
    F: float


@dataclass(frozen=True, eq=False)
class Distribution:
    """Discrete initial distribution on states."""

    states: np.ndarray
    probs: np.ndarray

    def __post_init__(self) -> None:
        if len(self.states) != len(self.probs) or len(self.states) == 0:
            raise ValueError("states and probs must be nonempty and of equal length")
        if np.any(self.probs < 0) or abs(float(np.sum(self.probs)) - 1.0) > 1e-12:
            raise ValueError("probabilities must be nonnegative and sum to 1")

    @classmethod
    def uniform(cls, states) -> Distribution:
        states = np.unique(np.asarray(states, dtype=float))
        return cls(states, np.full(len(states), 1.0 / len(states)))

    @classmethod
    def point_mass(cls, x: float) -> Distribution:
        return cls(np.array([float(x)]), np.array([1.0]))

    @property
    def full_support(self) -> bool:
        return bool(np.all(self.probs > 0))


def _mixture_table(project, dist: Distribution, thresholds, horizon: int):
    if np.any(dist.states < project.lower) or np.any(dist.states > project.upper):
        raise ValueError("distribution support lies outside the state interval")
    table = compute_metrics(project, dist.states, thresholds, horizon, marginals=False)
    weights = np.zeros(len(table.states))
    weights[np.searchsorted(table.states, dist.states)] += dist.probs
    return table, weights


def performance_points(
    project: DiscountedProject,
    dist: Distribution,
    thresholds: Sequence[ExtendedThreshold] | None = None,
    horizon: int = 100,
) -> list[FrontierPoint]:
    """Mixture metrics ``(G(p, t), F(p, t))`` for every threshold ``t``.

    Default thresholds are both variants at each support state, plus both
    extremes.
    """
    thresholds = threshold_grid(dist.states) if thresholds is None else list(thresholds)
    table, w = _mixture_table(project, dist, thresholds, horizon)
    G = w @ table.G
    F = w @ table.F
    return [FrontierPoint(t, float(g), float(f)) for t, g, f in zip(table.thresholds, G, F)]


def randomized_point(
    project: DiscountedProject, dist: Distribution, policy: ThresholdPolicy, horizon: int = 100
) -> tuple[float, float]:
    """``(G, F)`` of a threshold policy randomized at its threshold state."""
    table, w = _mixture_table(project, dist, [policy], horizon)
    return float(w @ table.G[:, 0]), float(w @ table.F[:, 0])


def _cross(o: FrontierPoint, a: FrontierPoint, b: FrontierPoint) -> float:
    return (a.G - o.G) * (b.F - o.F) - (a.F - o.F) * (b.G - o.G)


def upper_hull(points: Sequence[FrontierPoint]) -> list[FrontierPoint]:
    """Vertices of the concave upper envelope, sorted by ``G``.

    A middle point at most ``1e-12`` times the ``F`` span above the chord of its
    neighbours counts as collinear and is dropped.
    """
    if len(points) < 2:
        raise ValueError("need at least two points")
    pts = sorted(points, key=lambda p: (p.G, p.F))
    # keep only the highest point for each G
    by_g: list[FrontierPoint] = []
    for p in pts:
        if by_g and by_g[-1].G == p.G:
            by_g[-1] = p
        else:
            by_g.append(p)
    span_f = max(p.F for p in pts) - min(p.F for p in pts)
    eps = COLLINEAR_TOL * span_f
    hull: list[FrontierPoint] = []
    for p in by_g:
        while len(hull) >= 2:
            o, a = hull[-2], hull[-1]
            # height of a above the chord from o to p
            if -_cross(o, a, p) / (p.G - o.G) > eps:
                break
            hull.pop()
        hull.append(p)
    return hull


def hull_slopes(hull: Sequence[FrontierPoint]) -> np.ndarray:
    G = np.array([p.G for p in hull])
    F = np.array([p.F for p in hull])
    return np.diff(F) / np.diff(G)


def hull_value(hull: Sequence[FrontierPoint], g) -> np.ndarray:
    """Upper-boundary height at resource levels ``g`` (linear between vertices)."""
    return np.interp(g, [p.G for p in hull], [p.F for p in hull])


def on_hull(point: FrontierPoint, hull: Sequence[FrontierPoint], tol: float = 1e-9) -> bool:
    G0, G1 = hull[0].G, hull[-1].G
    if point.G < G0 - tol or point.G > G1 + tol:
        return False
    return abs(float(hull_value(hull, point.G)) - point.F) <= tol * max(1.0, abs(point.F))


@dataclass(frozen=True)
class ShadowPriceRow:
    z: float
    slope: float
    index: float
    deviation: float
    dG: float


@dataclass(frozen=True)
class ShadowPriceResult:
    rows: tuple[ShadowPriceRow, ...]
    skipped: int

    @property
    def max_deviation(self) -> float:
        return max((r.deviation for r in self.rows), default=0.0)


def shadow_price_check(
    hull: Sequence[FrontierPoint],
    curve: IndexCurve,
    points: Sequence[FrontierPoint] | None = None,
    min_dG: float = 1e-6,
) -> ShadowPriceResult:
    """Compare the boundary slope across each breakpoint's pair of points with the index there.

    With ``points`` given, every pair whose two points both lie on the hull is
    checked, including pairs inside merged collinear edges. Otherwise only
    consecutive hull vertices sharing a breakpoint are used. Pairs whose
    resource gap is below ``min_dG`` are skipped.
    """
    pairs: dict[float, dict[bool, FrontierPoint]] = {}
    source = hull if points is None else [p for p in points if on_hull(p, hull)]
    for p in source:
        if p.threshold.is_finite:
            pairs.setdefault(p.threshold.z, {})[p.threshold.left] = p
    if points is None:
        consecutive = set()
        for a, b in zip(hull[:-1], hull[1:]):
            if a.threshold.is_finite and b.threshold.is_finite and a.threshold.z == b.threshold.z:
                consecutive.add(a.threshold.z)
        pairs = {z: v for z, v in pairs.items() if z in consecutive}
    rows, skipped = [], 0
    for z, pair in sorted(pairs.items()):
        if len(pair) != 2:
            continue
        left, strict = pair[True], pair[False]
        dG = left.G - strict.G
        if dG <= min_dG:
            skipped += 1
            continue
        slope = (left.F - strict.F) / dG
        m = float(curve.lookup(z)[0])
        rows.append(ShadowPriceRow(float(z), slope, m, abs(slope - m), dG))
    return ShadowPriceResult(tuple(rows), skipped)


@dataclass(frozen=True)
class RatioRow:
    delta: float
    ratio: float
    error: float
    skipped: bool


@dataclass(frozen=True)
class RatioConvergence:
    z0: float
    index: float
    rows: tuple[RatioRow, ...]

    @property
    def monotone(self) -> bool:
        errs = [r.error for r in self.rows if not r.skipped]
        return all(b <= a * (1 + 1e-9) + 1e-15 for a, b in zip(errs[:-1], errs[1:]))

    @property
    def conclusive(self) -> bool:
        return any(not r.skipped for r in self.rows)


def rn_derivative_check(
    project: DiscountedProject,
    dist: Distribution,
    z0: float,
    deltas: Sequence[float],
    horizon: int = 100,
    noise: float = 1e-12,
) -> RatioConvergence:
    """Ratios ``(F(p, z) - F(p, z0)) / (G(p, z) - G(p, z0))`` as ``z = z0 + delta`` approaches ``z0``."""
    zs = [z0, *(z0 + d for d in deltas)]
    pts = performance_points(project, dist, [ExtendedThreshold.at(z) for z in zs], horizon)
    by_z = {p.threshold.z: p for p in pts}
    base = by_z[float(z0)]
    m = float(compute_index(project, [z0], horizon).values[0])
    rows = []
    for d in deltas:
        p = by_z[float(z0 + d)]
        dG = p.G - base.G
        if abs(dG) <= noise:
            rows.append(RatioRow(float(d), float("nan"), float("nan"), True))
            continue
        r = (p.F - base.F) / dG
        rows.append(RatioRow(float(d), r, abs(r - m), False))
    return RatioConvergence(float(z0), m, tuple(rows))


def _z_text(t: ExtendedThreshold) -> str:
    if t.kind == "below":
        return "-inf"
    if t.kind == "above":
        return "inf"
    return repr(float(t.z))


def frontier_csv(hull: Sequence[FrontierPoint], points: Sequence[FrontierPoint]) -> str:
    vertices = {(p.threshold, p.G, p.F) for p in hull}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["z", "kind", "G", "F", "on_hull"])
    for p in points:
        w.writerow(
            [_z_text(p.threshold), p.threshold.label, repr(p.G), repr(p.F),
             "true" if (p.threshold, p.G, p.F) in vertices else "false"]
        )
    return buf.getvalue()


def frontier_svg(hull: Sequence[FrontierPoint], points: Sequence[FrontierPoint]) -> str:
    import matplotlib

    from matplotlib.backends.backend_svg import FigureCanvasSVG
    from matplotlib.figure import Figure

    with matplotlib.rc_context({"svg.hashsalt": "frontier", "svg.fonttype": "none"}):
        fig = Figure(figsize=(6, 4.5))
        FigureCanvasSVG(fig)
        ax = fig.add_subplot()
        ax.plot([p.G for p in points], [p.F for p in points], ".", ms=3, color="0.55", label="threshold policies")
        ax.plot([p.G for p in hull], [p.F for p in hull], "-", lw=1.5, color="C0", label="upper boundary")
        ax.set_xlabel("G(z)")
        ax.set_ylabel("F(z)")
        ax.legend(loc="lower right", frameon=False)
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()


def emit_frontier(hull: Sequence[FrontierPoint], points: Sequence[FrontierPoint], path, fmt: str = "csv"):
    """Write the frontier as CSV (``z, kind, G, F, on_hull``) or as an SVG figure."""
    if not hull:
        raise ValueError("empty hull")
    if fmt == "csv":
        text = frontier_csv(hull, points)
    elif fmt == "svg":
        text = frontier_svg(hull, points)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    try:
        return atomic_write(path, text)
    except OSError as exc:
        raise OSError(f"could not write frontier to {path}: {exc}") from exc


def read_frontier_csv(path) -> list[tuple[FrontierPoint, bool]]:
    """Parse a frontier CSV back into points with their hull flags."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kind = row["kind"]
            if kind == "below":
                t = ExtendedThreshold.below()
            elif kind == "above":
                t = ExtendedThreshold.above()
            elif kind == "zminus":
                t = ExtendedThreshold.at_left(float(row["z"]))
            else:
                t = ExtendedThreshold.at(float(row["z"]))
            out.append((FrontierPoint(t, float(row["G"]), float(row["F"])), row["on_hull"] == "true"))
    return out
