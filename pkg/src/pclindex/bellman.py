"""Value iteration for the price-lambda problem and the indexability cross-check.

This path shares only the project and the reachable-graph plumbing with the
metrics engine. It never reads metric tables, so agreement between the two is
real evidence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .engine import NODE_BUDGET, IndexCurve, MetricsTable, build_closure
from .errors import NoConvergenceError
from .model import DiscountedProject, ExtendedThreshold
from .pcl import metric_ratio_bound


@dataclass(frozen=True, eq=False)
class LambdaSolution:
    """Approximate optimal values of the price-``lam`` problem on a state grid.

    ``action_gap`` is the one-step advantage of the active action over the
    passive one, evaluated with the final iterate.
    """

    lam: float
    states: np.ndarray
    values: np.ndarray
    residual: float
    action_gap: np.ndarray
    iterations: int
    discount: float
    rate_gamma: float
    contraction_ok: bool = True

    @property
    def fixed_point_error(self) -> float:
        return self.residual * self.rate_gamma / (1.0 - self.rate_gamma)


def _iterations_needed(project: DiscountedProject, lam_max: float, tol: float, w_max: float) -> int:
    # successive differences are at most gamma^(n-1) (1 + |lam|) M w
    scale = (1.0 + lam_max) * project.bound_M * w_max
    gamma = project.rate_gamma
    if scale <= tol or gamma == 0.0:
        return 1
    return 1 + max(0, math.ceil(math.log(tol / scale) / math.log(gamma)))


def value_iteration_sweep(
    project: DiscountedProject,
    lambdas: Sequence[float],
    states: Sequence[float],
    tol: float = 1e-10,
    max_iter: int | None = None,
    node_budget: int = NODE_BUDGET,
) -> list[LambdaSolution]:
    """Run value iteration for several prices at once, starting from zero.

    Stops when the sup-norm change (in weighted norm) at every grid state drops to
    ``tol``; raises :class:`NoConvergenceError` if ``max_iter`` comes first.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    lams = np.asarray(lambdas, dtype=float)
    states = np.unique(np.asarray(states, dtype=float))
    w_root = project.weights(states)
    n_star = _iterations_needed(project, float(np.max(np.abs(lams))), tol, float(np.max(w_root)))
    cap = n_star + 1 if max_iter is None else max_iter
    depth = min(cap, n_star) + 1
    closure = build_closure(project, states, depth, node_budget=node_budget)
    xs, rows = closure.states, closure.roots
    beta = project.discount
    r0, r1 = project.rewards(xs, 0), project.rewards(xs, 1)
    c0, c1 = project.costs(xs, 0), project.costs(xs, 1)
    w_all = project.weights(xs)[:, None]
    u0 = r0[:, None] - lams[None, :] * c0[:, None]
    u1 = r1[:, None] - lams[None, :] * c1[:, None]
    V = np.zeros((len(xs), len(lams)))
    residuals = np.full(len(lams), np.inf)
    # sup-norm changes over the nodes whose iterates are still exact
    history: list[np.ndarray] = []
    n = 0
    while np.any(residuals > tol):
        if n >= cap:
            raise NoConvergenceError(
                f"value iteration stopped after {n} sweeps with residual {residuals.max():.3e}",
                float(residuals.max()),
            )
        V_new = np.maximum(u0 + beta * (closure.P0 @ V), u1 + beta * (closure.P1 @ V))
        diff = np.abs(V_new - V) / w_all
        residuals = np.max(diff[rows], axis=0)
        exact = closure.depth <= depth - n - 1
        history.append(np.max(diff[exact], axis=0) if np.any(exact) else residuals)
        V = V_new
        n += 1
    gap = (u1 - u0)[rows] + beta * (closure.P1[rows] @ V - closure.P0[rows] @ V)
    gamma = project.rate_gamma
    out = []
    for j, lam in enumerate(lams):
        seq = [h[j] for h in history]
        # allow rounding noise once differences reach the last few bits of V
        noise = 64 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(V[rows, j]))))
        ok = all(b <= gamma * a + noise for a, b in zip(seq[:-1], seq[1:]))
        out.append(
            LambdaSolution(
                lam=float(lam),
                states=states,
                values=V[rows, j].copy(),
                residual=float(residuals[j]),
                action_gap=gap[:, j].copy(),
                iterations=n,
                discount=beta,
                rate_gamma=gamma,
                contraction_ok=ok,
            )
        )
    return out


def value_iteration(
    project: DiscountedProject, lam: float, states: Sequence[float], tol: float = 1e-10, max_iter: int | None = None
) -> LambdaSolution:
    """Approximate the optimal value of the price-``lam`` problem on ``states``."""
    return value_iteration_sweep(project, [lam], states, tol, max_iter)[0]


@dataclass(frozen=True, eq=False)
class ActionSets:
    active: np.ndarray
    passive: np.ndarray
    indifferent: np.ndarray


def optimal_action_sets(solution: LambdaSolution, epsilon: float) -> ActionSets:
    """Split the grid by the sign of the action gap, with a band of half-width ``epsilon``."""
    gap = solution.action_gap
    return ActionSets(
        active=solution.states[gap > epsilon],
        passive=solution.states[gap < -epsilon],
        indifferent=solution.states[np.abs(gap) <= epsilon],
    )


def default_lambda_sweep(curve: IndexCurve, n: int = 33) -> np.ndarray:
    """Evenly spaced prices covering the index range, padded by 10% on each side."""
    v = curve.values[np.isfinite(curve.values)]
    lo, hi = float(v.min()), float(v.max())
    pad = 0.1 * (hi - lo) if hi > lo else 0.1 * max(abs(hi), 1.0)
    return np.linspace(lo - pad, hi + pad, n)


@dataclass(frozen=True)
class CrossCheckReport:
    lambdas: tuple[float, ...]
    agreements: tuple[float, ...]
    indifference_band: float
    failures: tuple[tuple[float, float, int, int], ...]
    checked: tuple[int, ...] = ()
    gap_epsilon: float = 0.0

    @property
    def passed(self) -> bool:
        return all(a == 1.0 for a in self.agreements)

    def to_dict(self) -> dict:
        return {
            "lambdas": list(self.lambdas),
            "agreements": list(self.agreements),
            "checked_states": list(self.checked),
            "indifference_band": self.indifference_band,
            "gap_epsilon": self.gap_epsilon,
            "failures": [
                {"lambda": lam, "x": x, "expected_action": e, "got_action": g}
                for lam, x, e, g in self.failures
            ],
            "pass": self.passed,
        }


def indexability_crosscheck(
    curve: IndexCurve,
    project: DiscountedProject,
    lambdas: Sequence[float] | None = None,
    epsilon: float = 1e-4,
    tol: float = 1e-10,
    solutions: Sequence[LambdaSolution] | None = None,
) -> CrossCheckReport:
    """Compare the index-predicted action with the value-iteration action.

    For each price and each curve state with ``|m*(x) - lam| > epsilon``, the
    active action must be strictly optimal iff ``m*(x) > lam``. Indifference
    reported by value iteration counts as a mismatch there.
    """
    lams = default_lambda_sweep(curve) if lambdas is None else np.asarray(lambdas, dtype=float)
    if solutions is None:
        solutions = value_iteration_sweep(project, lams, curve.states, tol)
    agreements, failures, checked = [], [], []
    max_eps = 0.0
    for lam, sol in zip(lams, solutions):
        if not np.array_equal(sol.states, curve.states):
            raise ValueError("solutions and curve must share the state grid")
        gap_eps = 10.0 * 2.0 * project.discount * max(sol.fixed_point_error, sol.residual)
        max_eps = max(max_eps, gap_eps)
        outside = np.abs(curve.values - lam) > epsilon
        expected = (curve.values > lam).astype(int)
        got = np.where(sol.action_gap > gap_eps, 1, np.where(sol.action_gap < -gap_eps, 0, -1))
        match = (got == expected) & outside
        n = int(np.sum(outside))
        agreements.append(1.0 if n == 0 else float(np.sum(match)) / n)
        checked.append(n)
        for i in np.flatnonzero(outside & ~match):
            failures.append((float(lam), float(curve.states[i]), int(expected[i]), int(got[i])))
    return CrossCheckReport(
        lambdas=tuple(float(v) for v in lams),
        agreements=tuple(agreements),
        indifference_band=epsilon,
        failures=tuple(failures),
        checked=tuple(checked),
        gap_epsilon=float(max_eps),
    )


def monotone_policy_structure(solutions: Sequence[LambdaSolution], epsilon: float) -> bool:
    """Whether the strictly-active set shrinks as the price grows."""
    ordered = sorted(solutions, key=lambda s: s.lam)
    sets = [set(optimal_action_sets(s, epsilon).active.tolist()) for s in ordered]
    return all(b <= a for a, b in zip(sets[:-1], sets[1:]))


ALWAYS_ACTIVE = "always_active"
NEVER_ACTIVE = "never_active"
INTERIOR = "interior"


@dataclass(frozen=True)
class ThresholdSet:
    """Thresholds optimal for price ``lam``: the grid members satisfying the
    sup/inf condition, the case label and one representative threshold."""

    lam: float
    case: str
    members: tuple[ExtendedThreshold, ...]
    representative: ExtendedThreshold
    consistent: bool
    epsilon: float = 0.0
    bracket: tuple[float, float] | None = field(default=None)


def _condition_holds(table: MetricsTable, j: int, lam: float, below_mask: np.ndarray) -> tuple[bool, float]:
    m = table.m()[:, j]
    errs = np.array([metric_ratio_bound(table, i, j) for i in range(len(table.states))])
    ok = True
    if np.any(below_mask):
        ok &= bool(np.max(m[below_mask] - errs[below_mask]) <= lam)
    if np.any(~below_mask):
        ok &= bool(lam <= np.min(m[~below_mask] + errs[~below_mask]))
    return ok, float(np.max(errs))


def optimal_threshold_set(
    lam: float,
    table: MetricsTable,
    curve: IndexCurve,
    index_fn: Callable[[float], float] | None = None,
    lower: float | None = None,
    upper: float | None = None,
    xtol: float = 1e-13,
) -> ThresholdSet:
    """Thresholds ``z`` on the table grid with ``sup_{x<=z} m(x,z) <= lam <= inf_{x>z} m(x,z)``.

    The case label comes from comparing ``lam`` with the index at the interval
    ends. In the interior case the representative solves ``m*(z) = lam``. With
    ``index_fn`` it is found by bisection on that evaluator; without it, the
    last curve state with ``m*(z) <= lam`` is used.
    """
    lower = float(curve.states[0]) if lower is None else lower
    upper = float(curve.states[-1]) if upper is None else upper
    m_low, m_up = curve.lookup([lower, upper])
    members = []
    eps = 0.0
    for j, t in enumerate(table.thresholds):
        if not isinstance(t, ExtendedThreshold) or t.left:
            continue
        if t.kind == "below":
            mask = np.zeros(len(table.states), dtype=bool)
        elif t.kind == "above":
            mask = np.ones(len(table.states), dtype=bool)
        else:
            mask = table.states <= t.z
        ok, e = _condition_holds(table, j, lam, mask)
        eps = max(eps, e)
        if ok:
            members.append(t)
    bracket = None
    if lam < m_low:
        case, rep = ALWAYS_ACTIVE, ExtendedThreshold.below()
    elif lam > m_up:
        case, rep = NEVER_ACTIVE, ExtendedThreshold.above()
    else:
        case = INTERIOR
        v = curve.values
        le = np.flatnonzero(v <= lam)
        a = float(curve.states[le[-1]])
        gt = np.flatnonzero((v > lam) & (curve.states > a))
        b = float(curve.states[gt[0]]) if len(gt) else upper
        bracket = (a, b)
        if index_fn is not None and b > a:
            while b - a > xtol * max(1.0, abs(a)):
                mid = 0.5 * (a + b)
                if mid <= a or mid >= b:
                    break
                if index_fn(mid) <= lam:
                    a = mid
                else:
                    b = mid
        rep = ExtendedThreshold.at(a)
    return ThresholdSet(lam, case, tuple(members), rep, consistent=bool(members), epsilon=eps, bracket=bracket)
