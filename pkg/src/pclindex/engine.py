"""Finite-horizon threshold-policy metrics on the exact reachable state graph.

For finite-support kernels, the metrics at a state depend only on the states
reachable from it. The engine builds that graph layer by layer, then runs the
horizon-``k`` recursions with sparse matrix products:

    F_{j+1} = r_A + beta * (A * P1 F_j + (1 - A) * P0 F_j)

Here ``A`` holds per-node active probabilities, with one column per threshold.
The marginal metrics look one step ahead from ``F_{k-1}``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NoConvergenceError, ResourceLimitError
from .model import (
    DiscountedProject,
    ExtendedThreshold,
    ThresholdPolicy,
    active_probability,
    as_policy,
)

NODE_BUDGET = 200_000
G_FLOOR = 1e-9
_COLUMN_CHUNK = 64
_GROUP_CHUNK = 512


@dataclass(frozen=True, eq=False)
class Closure:
    """Reachable state graph. Nodes are (group, state) pairs; groups keep
    independent sub-problems apart when batching."""

    states: np.ndarray
    groups: np.ndarray
    depth: np.ndarray
    P0: sp.csr_matrix
    P1: sp.csr_matrix
    roots: np.ndarray

    @property
    def size(self) -> int:
        return len(self.states)

    def transition(self, action: int) -> sp.csr_matrix:
        return self.P1 if action else self.P0


def build_closure(
    project: DiscountedProject,
    roots,
    depth: int,
    groups=None,
    node_budget: int = NODE_BUDGET,
) -> Closure:
    """Nodes reachable from ``roots`` in at most ``depth`` steps under either action.

    Nodes at maximal depth get no outgoing edges; their values are only needed
    at horizon 0.
    """
    roots = np.asarray(roots, dtype=float).ravel()
    groups = np.zeros(len(roots)) if groups is None else np.asarray(groups, dtype=float).ravel()
    # a complex key sorts by group, then by state
    root_keys = groups + 1j * roots
    known = np.unique(root_keys)
    depth_of = {0: known}
    frontier = known
    edges: list[tuple[int, np.ndarray, np.ndarray, np.ndarray]] = []
    for d in range(depth):
        if len(frontier) == 0:
            break
        xs, gs = frontier.imag.copy(), frontier.real
        found = []
        for a in (0, 1):
            ys, ps = project.kernel(a).support_many(xs)
            mask = ps > 0.0
            src = np.broadcast_to(frontier[:, None], ys.shape)[mask]
            dst = (gs[:, None] + 1j * ys)[mask]
            edges.append((a, src, dst, ps[mask]))
            found.append(dst)
        candidates = np.unique(np.concatenate(found))
        frontier = np.setdiff1d(candidates, known, assume_unique=True)
        known = np.union1d(known, frontier)
        depth_of[d + 1] = frontier
        if len(known) > node_budget:
            raise ResourceLimitError(len(known), node_budget)
    n = len(known)
    node_depth = np.empty(n, dtype=int)
    for d, keys in depth_of.items():
        node_depth[np.searchsorted(known, keys)] = d
    mats = []
    for a in (0, 1):
        parts = [e for e in edges if e[0] == a]
        if parts:
            src = np.concatenate([np.searchsorted(known, e[1]) for e in parts])
            dst = np.concatenate([np.searchsorted(known, e[2]) for e in parts])
            val = np.concatenate([e[3] for e in parts])
        else:
            src = dst = np.zeros(0, dtype=int)
            val = np.zeros(0)
        mats.append(sp.csr_matrix((val, (src, dst)), shape=(n, n)))
    return Closure(
        states=known.imag.copy(),
        groups=known.real.copy(),
        depth=node_depth,
        P0=mats[0],
        P1=mats[1],
        roots=np.searchsorted(known, root_keys),
    )


def _recursion(
    project: DiscountedProject,
    closure: Closure,
    active: np.ndarray,
    horizon: int,
    rows: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Run the horizon recursion for per-node active probabilities ``active``
    (nodes x columns); return F, G, f, g at ``rows``."""
    xs = closure.states
    beta = project.discount
    r0, r1 = project.rewards(xs, 0), project.rewards(xs, 1)
    c0, c1 = project.costs(xs, 0), project.costs(xs, 1)
    A = np.hstack([active, active])
    ncol = active.shape[1]
    base = np.hstack(
        [
            active * r1[:, None] + (1.0 - active) * r0[:, None],
            active * c1[:, None] + (1.0 - active) * c0[:, None],
        ]
    )
    X = base
    prev = None
    for _ in range(horizon):
        prev = X
        X = base + beta * (A * (closure.P1 @ X) + (1.0 - A) * (closure.P0 @ X))
    dr = (r1 - r0)[rows][:, None]
    dc = (c1 - c0)[rows][:, None]
    marg = np.hstack([np.repeat(dr, ncol, axis=1), np.repeat(dc, ncol, axis=1)])
    if prev is not None:
        marg = marg + beta * (closure.P1[rows] @ prev - closure.P0[rows] @ prev)
    out = X[rows]
    return out[:, :ncol], out[:, ncol:], marg[:, :ncol], marg[:, ncol:]


def error_bounds(project: DiscountedProject, horizon: int) -> tuple[float, float]:
    """Certified w-norm errors of (F_k, G_k) and of (f_k, g_k)."""
    e = project.bound_Mgamma * project.rate_gamma**horizon
    return e, 2.0 * e


@dataclass(frozen=True, eq=False)
class MetricsTable:
    """Horizon-k metrics on a state x threshold grid.

    Rows follow ``states``. Columns follow ``thresholds``, sorted with the
    left-limit variant before the strict one at each breakpoint.
    """

    states: np.ndarray
    thresholds: tuple
    horizon: int
    F: np.ndarray
    G: np.ndarray
    f: np.ndarray | None
    g: np.ndarray | None
    weights: np.ndarray
    bound_Mgamma: float
    error_FG: float
    error_fg: float

    def column(self, threshold: ExtendedThreshold | ThresholdPolicy) -> int:
        try:
            return self._column_index[threshold]
        except KeyError:
            raise KeyError(f"threshold {threshold} not in table") from None

    def row(self, x: float) -> int:
        i = int(np.searchsorted(self.states, x))
        if i >= len(self.states) or self.states[i] != x:
            raise KeyError(f"state {x!r} not in table")
        return i

    @property
    def _column_index(self) -> dict:
        cache = self.__dict__.get("_colcache")
        if cache is None:
            cache = {t: j for j, t in enumerate(self.thresholds)}
            object.__setattr__(self, "_colcache", cache)
        return cache

    def finite_breakpoints(self) -> np.ndarray:
        """Sorted finite threshold values that have a strict-variant column."""
        zs = {t.z for t in self.thresholds if isinstance(t, ExtendedThreshold) and t.is_finite and not t.left}
        return np.array(sorted(zs))

    def m(self) -> np.ndarray:
        """Marginal productivity metric f/g (nan where g is not positive)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.g > G_FLOOR, self.f / self.g, np.nan)

    def to_csv(self, path) -> None:
        write_table_csv(self, path)


def _sorted_thresholds(thresholds) -> tuple:
    uniq = list(dict.fromkeys(thresholds))
    return tuple(sorted(uniq, key=lambda t: as_policy(t).sort_key()))


def compute_metrics(
    project: DiscountedProject,
    states,
    thresholds: Sequence[ExtendedThreshold | ThresholdPolicy],
    horizon: int,
    node_budget: int = NODE_BUDGET,
    marginals: bool = True,
) -> MetricsTable:
    """Horizon-``horizon`` metrics of every listed threshold policy at every state."""
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    states = np.unique(np.asarray(states, dtype=float))
    thresholds = _sorted_thresholds(thresholds)
    for t in thresholds:
        as_policy(t).threshold.check_in(project)
    closure = build_closure(project, states, horizon, node_budget=node_budget)
    rows = closure.roots
    shape = (len(states), len(thresholds))
    F, G, f, g = (np.empty(shape) for _ in range(4))
    for lo in range(0, len(thresholds), _COLUMN_CHUNK):
        chunk = thresholds[lo : lo + _COLUMN_CHUNK]
        active = np.stack([active_probability(t, closure.states) for t in chunk], axis=1)
        cols = slice(lo, lo + len(chunk))
        F[:, cols], G[:, cols], f[:, cols], g[:, cols] = _recursion(
            project, closure, active, horizon, rows
        )
    e_FG, e_fg = error_bounds(project, horizon)
    return MetricsTable(
        states=states,
        thresholds=thresholds,
        horizon=horizon,
        F=F,
        G=G,
        f=f if marginals else None,
        g=g if marginals else None,
        weights=project.weights(states),
        bound_Mgamma=project.bound_Mgamma,
        error_FG=e_FG,
        error_fg=e_fg,
    )


def marginal_metrics(project: DiscountedProject, table: MetricsTable) -> MetricsTable:
    """Table with the marginal metrics filled in (recomputed if absent)."""
    if table.f is not None and table.g is not None:
        return table
    return compute_metrics(project, table.states, table.thresholds, table.horizon, marginals=True)


@dataclass(frozen=True, eq=False)
class DiagonalMetrics:
    """Metrics of per-state policies: row ``i`` uses the policy built at ``states[i]``."""

    states: np.ndarray
    F: np.ndarray
    G: np.ndarray
    f: np.ndarray
    g: np.ndarray
    horizon: int


def diagonal_metrics(
    project: DiscountedProject,
    states,
    horizon: int,
    left: bool = False,
    shift: Sequence[float] | None = None,
    node_budget: int = NODE_BUDGET,
) -> DiagonalMetrics:
    """Metrics at ``(x, policy(x + shift))`` for each state, batched independently.

    With ``left=False`` and no shift this gives the diagonal ``f(x, x)``,
    ``g(x, x)`` used by the index. Thresholds are ``x + shift`` (default 0).
    """
    states = np.asarray(states, dtype=float).ravel()
    zs = states if shift is None else states + np.asarray(shift, dtype=float)
    out = {k: np.empty(len(states)) for k in "FGfg"}
    for lo in range(0, len(states), _GROUP_CHUNK):
        xs = states[lo : lo + _GROUP_CHUNK]
        z = zs[lo : lo + _GROUP_CHUNK]
        gid = np.arange(len(xs), dtype=float)
        closure = build_closure(project, xs, horizon, groups=gid, node_budget=node_budget)
        zn = z[closure.groups.astype(int)]
        xn = closure.states
        active = (xn > zn).astype(float)
        if left:
            active[xn == zn] = 1.0
        F, G, f, g = _recursion(project, closure, active[:, None], horizon, closure.roots)
        sl = slice(lo, lo + len(xs))
        out["F"][sl], out["G"][sl], out["f"][sl], out["g"][sl] = F[:, 0], G[:, 0], f[:, 0], g[:, 0]
    return DiagonalMetrics(states, out["F"], out["G"], out["f"], out["g"], horizon)


@dataclass(frozen=True, eq=False)
class IndexCurve:
    """Sampled index values with per-point certified error bounds."""

    states: np.ndarray
    values: np.ndarray
    error_bounds: np.ndarray
    g_lower: float
    horizon: int = -1
    undefined: np.ndarray | None = None

    def __post_init__(self) -> None:
        if len(self.states) > 1 and np.any(np.diff(self.states) <= 0):
            raise ValueError("index curve states must be strictly increasing")
        if self.undefined is None:
            object.__setattr__(self, "undefined", ~np.isfinite(self.values))

    def lookup(self, xs) -> np.ndarray:
        """Index values at states that are on the curve (exact match required)."""
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        i = np.clip(np.searchsorted(self.states, xs), 0, len(self.states) - 1)
        if np.any(self.states[i] != xs):
            missing = xs[self.states[i] != xs][0]
            raise KeyError(f"state {missing!r} not on the index curve")
        return self.values[i]

    def bound_at(self, xs) -> np.ndarray:
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        self.lookup(xs)
        return self.error_bounds[np.searchsorted(self.states, xs)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "m_star", "err_bound"])
            for x, m, e in zip(self.states, self.values, self.error_bounds):
                w.writerow([repr(float(x)), repr(float(m)), repr(float(e))])


def _index_bounds(project, horizon, weights, values, g_lower) -> np.ndarray:
    _, e_fg = error_bounds(project, horizon)
    if not g_lower > 0:
        return np.full(len(values), np.inf)
    return e_fg * weights * (1.0 + np.abs(values)) / g_lower


def mp_index(table: MetricsTable, project: DiscountedProject | None = None, g_floor: float = G_FLOOR) -> IndexCurve:
    """Index curve ``f(x, x) / g(x, x)`` read off the diagonal of a table.

    Every state needs its strict threshold column. States where ``g(x, x)`` is
    at or below ``g_floor`` are flagged as undefined.
    """
    table = table if project is None else marginal_metrics(project, table)
    cols = np.array([table.column(ExtendedThreshold.at(x)) for x in table.states])
    rows = np.arange(len(table.states))
    fd, gd = table.f[rows, cols], table.g[rows, cols]
    undefined = gd <= g_floor
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(undefined, np.nan, fd / gd)
    g_lower = float(np.min(table.g - table.error_fg * table.weights[:, None]))
    e = table.error_fg * table.weights * (1.0 + np.abs(values)) / g_lower if g_lower > 0 else np.full(len(values), np.inf)
    return IndexCurve(table.states, values, e, g_lower, table.horizon, undefined)


def compute_index(
    project: DiscountedProject,
    states,
    horizon: int,
    g_floor: float = G_FLOOR,
    g_lower: float | None = None,
    node_budget: int = NODE_BUDGET,
) -> IndexCurve:
    """Index curve on ``states`` via batched per-state closures.

    Without an explicit ``g_lower`` the bound uses the smallest diagonal
    ``g(x, x)`` minus its error.
    """
    states = np.unique(np.asarray(states, dtype=float))
    d = diagonal_metrics(project, states, horizon, node_budget=node_budget)
    undefined = d.g <= g_floor
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(undefined, np.nan, d.f / d.g)
    w = project.weights(states)
    if g_lower is None:
        _, e_fg = error_bounds(project, horizon)
        g_lower = float(np.min(d.g - e_fg * w))
    bounds = _index_bounds(project, horizon, w, values, g_lower)
    return IndexCurve(states, values, bounds, g_lower, horizon, undefined)


@dataclass(frozen=True, eq=False)
class LeftLimitMetrics:
    states: np.ndarray
    F: np.ndarray
    G: np.ndarray
    f: np.ndarray
    g: np.ndarray


def left_limit_metrics(project: DiscountedProject, states, z: float, horizon: int) -> LeftLimitMetrics:
    """Metrics of the policy active on ``[z, upper]``."""
    t = ExtendedThreshold.at_left(z)
    table = compute_metrics(project, states, [t], horizon)
    return LeftLimitMetrics(table.states, table.F[:, 0], table.G[:, 0], table.f[:, 0], table.g[:, 0])


def horizon_for_tolerance(
    project: DiscountedProject,
    tol: float,
    g_lower: float,
    m_cap: float,
    w_max: float = 1.0,
) -> int:
    """Smallest horizon whose certified index error is at most ``tol``."""
    if not tol > 0 or not g_lower > 0:
        raise ValueError("tol and g_lower must be positive")
    gamma = project.rate_gamma
    if gamma >= 1.0:
        raise NoConvergenceError(f"rate_gamma = {gamma} gives no geometric convergence")
    scale = 2.0 * project.bound_Mgamma * w_max * (1.0 + m_cap) / g_lower

    def bound(k: int) -> float:
        return scale * gamma**k

    if bound(0) <= tol:
        return 0
    if gamma == 0.0:
        return 1
    k = max(0, math.ceil(math.log(tol / scale) / math.log(gamma)))
    while k > 0 and bound(k - 1) <= tol:
        k -= 1
    while bound(k) > tol:
        k += 1
    return k


def reachable_states(project: DiscountedProject, x: float, horizon: int, node_budget: int = NODE_BUDGET) -> np.ndarray:
    """Sorted states reachable from ``x`` within ``horizon`` steps under any actions."""
    return build_closure(project, [x], horizon, node_budget=node_budget).states


def threshold_grid(breakpoints, left: bool = True, strict: bool = True, extremes: bool = True) -> list:
    """Sorted thresholds at every breakpoint, optionally with both extremes."""
    out = []
    for z in np.unique(np.asarray(breakpoints, dtype=float)):
        if left:
            out.append(ExtendedThreshold.at_left(z))
        if strict:
            out.append(ExtendedThreshold.at(z))
    if extremes:
        out = [ExtendedThreshold.below(), *out, ExtendedThreshold.above()]
    return out


def _threshold_z(t) -> str:
    t = as_policy(t).threshold
    if t.kind == "below":
        return "-inf"
    if t.kind == "above":
        return "inf"
    return repr(float(t.z))


def write_table_csv(table: MetricsTable, path) -> None:
    """Write one row per (state, threshold) cell to a path or an open text stream."""
    if hasattr(path, "write"):
        _table_rows(table, path)
    else:
        with open(path, "w", newline="") as fh:
            _table_rows(table, fh)


def _table_rows(table: MetricsTable, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["x", "z", "z_kind", "F", "G", "f", "g", "k", "err_FG", "err_fg"])
    for i, x in enumerate(table.states):
        for j, t in enumerate(table.thresholds):
            w.writerow(
                [
                    repr(float(x)),
                    _threshold_z(t),
                    as_policy(t).threshold.label,
                    repr(float(table.F[i, j])),
                    repr(float(table.G[i, j])),
                    "" if table.f is None else repr(float(table.f[i, j])),
                    "" if table.g is None else repr(float(table.g[i, j])),
                    table.horizon,
                    repr(table.error_FG),
                    repr(table.error_fg),
                ]
            )
