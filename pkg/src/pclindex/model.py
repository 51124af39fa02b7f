"""Project abstraction: states, two actions, rewards, costs, transition kernels.

A project lives on a state interval ``[lower, upper]``. Action 1 is the active
action, action 0 the passive one. Transition kernels are either finite-support
(each state maps to a short list of atoms) or quadrature-based (a fixed node set
with state-dependent weights), so every expectation is a finite weighted sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import EvaluationError, InvalidModelError

StateFunction = Callable[..., object]

FINITE_SUPPORT_TOL = 1e-12
QUADRATURE_TOL = 1e-9
ASSUMPTION_SLACK = 1e-12


def _as_states(xs) -> np.ndarray:
    return np.atleast_1d(np.asarray(xs, dtype=float))


class TransitionKernel:
    """Common interface: ``support_many`` returns next states and probabilities.

    Both arrays have shape ``(len(xs), m)``; padded atoms carry probability 0.
    """

    def support_many(self, xs) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def support(self, x: float) -> list[tuple[float, float]]:
        ys, ps = self.support_many([x])
        return [(float(y), float(p)) for y, p in zip(ys[0], ps[0]) if p > 0.0]


class FiniteSupportKernel(TransitionKernel):
    """Kernel given by a map from a state to its atoms ``[(next_state, prob), ...]``.

    ``atoms`` may be a callable or a mapping keyed by state. ``batch`` is an
    optional vectorized version returning ``(next_states, probs)`` arrays.
    """

    def __init__(
        self,
        atoms: Callable[[float], Sequence[tuple[float, float]]]
        | Mapping[float, Sequence[tuple[float, float]]],
        batch: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None,
    ):
        if isinstance(atoms, Mapping):
            table = {float(k): [(float(y), float(p)) for y, p in v] for k, v in atoms.items()}

            def lookup(x: float) -> list[tuple[float, float]]:
                try:
                    return table[float(x)]
                except KeyError:
                    raise EvaluationError(f"no kernel row for state {x!r}") from None

            self._atoms = lookup
            self.table = table
        else:
            self._atoms = atoms
            self.table = None
        self._batch = batch

    def support_many(self, xs) -> tuple[np.ndarray, np.ndarray]:
        xs = _as_states(xs)
        if self._batch is not None:
            ys, ps = self._batch(xs)
            ys = np.asarray(ys, dtype=float).reshape(len(xs), -1)
            ps = np.asarray(ps, dtype=float).reshape(len(xs), -1)
        else:
            rows = [list(self._atoms(float(x))) for x in xs]
            width = max((len(r) for r in rows), default=1) or 1
            ys = np.repeat(xs[:, None], width, axis=1)
            ps = np.zeros((len(xs), width))
            for i, row in enumerate(rows):
                for j, (y, p) in enumerate(row):
                    ys[i, j] = y
                    ps[i, j] = p
        _check_rows(xs, ys, ps, FINITE_SUPPORT_TOL)
        return ys, ps


class QuadratureKernel(TransitionKernel):
    """Kernel supported on fixed ``nodes`` with weights ``weights(x, nodes)``.

    The weights function may be vectorized over the node array; otherwise it is
    called once per node.
    """

    def __init__(self, nodes: Sequence[float], weights: Callable[[float, object], object]):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim != 1 or len(nodes) == 0:
            raise InvalidModelError("quadrature nodes must be a nonempty 1-d list")
        if np.any(np.diff(nodes) <= 0):
            raise InvalidModelError("quadrature nodes must be strictly increasing")
        self.nodes = nodes
        self._weights = weights

    def _row(self, x: float) -> np.ndarray:
        try:
            row = np.asarray(self._weights(x, self.nodes), dtype=float)
            if row.shape != self.nodes.shape:
                raise ValueError
        except (TypeError, ValueError):
            row = np.array([float(self._weights(x, float(n))) for n in self.nodes])
        return row

    def support_many(self, xs) -> tuple[np.ndarray, np.ndarray]:
        xs = _as_states(xs)
        ps = np.array([self._row(float(x)) for x in xs]).reshape(len(xs), len(self.nodes))
        ys = np.broadcast_to(self.nodes, ps.shape).copy()
        _check_rows(xs, ys, ps, QUADRATURE_TOL)
        return ys, ps


def _check_rows(xs: np.ndarray, ys: np.ndarray, ps: np.ndarray, tol: float) -> None:
    if not (np.all(np.isfinite(ys)) and np.all(np.isfinite(ps))):
        bad = int(np.flatnonzero(~np.all(np.isfinite(ys) & np.isfinite(ps), axis=1))[0])
        raise InvalidModelError(f"kernel row at state {xs[bad]!r} is not finite")
    if np.any(ps < 0.0):
        bad = int(np.flatnonzero(np.any(ps < 0.0, axis=1))[0])
        raise InvalidModelError(f"negative transition probability at state {xs[bad]!r}")
    err = np.abs(ps.sum(axis=1) - 1.0)
    if np.any(err > tol):
        bad = int(np.argmax(err))
        raise InvalidModelError(
            f"transition probabilities at state {xs[bad]!r} sum to {ps[bad].sum()!r}"
        )


def kernel_expectation(kernel: TransitionKernel, x: float, values) -> float:
    """Expected value of ``values(X')`` for ``X'`` drawn from the kernel at ``x``.

    ``values`` is a callable or a mapping from state to value.
    """
    ys, ps = kernel.support_many([x])
    total = 0.0
    for y, p in zip(ys[0], ps[0]):
        if p == 0.0:
            continue
        try:
            v = values[float(y)] if isinstance(values, Mapping) else values(float(y))
        except (KeyError, IndexError) as exc:
            raise EvaluationError(f"values undefined at support point {y!r}") from exc
        v = float(v)
        if not math.isfinite(v):
            raise EvaluationError(f"values not finite at support point {y!r}")
        total += p * v
    return total


@dataclass(frozen=True)
class DiscountedProject:
    """A two-action discounted project.

    ``reward(x, a)`` and ``cost(x, a)`` give one-period reward and resource
    usage; ``kernel0``/``kernel1`` are the passive and active dynamics.
    ``weight``, ``bound_M`` and ``rate_gamma`` are the growth bounds used in the
    error certificates. Set ``vectorized`` when the callables accept arrays.
    ``breakpoints`` lists model-declared special states (added to threshold grids).
    """

    lower: float
    upper: float
    reward: StateFunction
    cost: StateFunction
    kernel0: TransitionKernel
    kernel1: TransitionKernel
    discount: float
    weight: StateFunction = field(default=lambda x: 1.0)
    bound_M: float = 1.0
    rate_gamma: float | None = None
    vectorized: bool = False
    name: str = "custom"
    breakpoints: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not self.lower < self.upper:
            raise InvalidModelError(f"empty state interval [{self.lower}, {self.upper}]")
        if self.rate_gamma is None:
            object.__setattr__(self, "rate_gamma", float(self.discount))
        for kernel in (self.kernel0, self.kernel1):
            if isinstance(kernel, QuadratureKernel):
                if kernel.nodes[0] < self.lower or kernel.nodes[-1] > self.upper:
                    raise InvalidModelError("quadrature nodes outside the state interval")

    @property
    def bound_Mgamma(self) -> float:
        """Bound on discounted totals: ``M / (1 - gamma)``."""
        return self.bound_M / (1.0 - self.rate_gamma)

    def kernel(self, action: int) -> TransitionKernel:
        return self.kernel1 if action else self.kernel0

    def _evaluate(self, fn: StateFunction, xs, *args) -> np.ndarray:
        xs = _as_states(xs)
        if self.vectorized:
            out = np.broadcast_to(np.asarray(fn(xs, *args), dtype=float), xs.shape).copy()
        else:
            out = np.array([float(fn(float(x), *args)) for x in xs])
        if not np.all(np.isfinite(out)):
            bad = xs[np.flatnonzero(~np.isfinite(out))[0]]
            raise InvalidModelError(f"{getattr(fn, '__name__', 'function')} not finite at state {bad!r}")
        return out

    def rewards(self, xs, action: int) -> np.ndarray:
        return self._evaluate(self.reward, xs, action)

    def costs(self, xs, action: int) -> np.ndarray:
        return self._evaluate(self.cost, xs, action)

    def weights(self, xs) -> np.ndarray:
        return self._evaluate(self.weight, xs)


# Threshold kinds, in increasing order of the threshold they represent.
BELOW = "below"
FINITE = "finite"
ABOVE = "above"


@dataclass(frozen=True)
class ExtendedThreshold:
    """A threshold in the extended reals.

    ``left=False`` is the policy active on ``(z, upper]``; ``left=True`` is the
    left-limit policy active on ``[z, upper]``. ``below`` is always active and
    ``above`` never active.
    """

    kind: str
    z: float = 0.0
    left: bool = False

    def __post_init__(self) -> None:
        if self.kind not in (BELOW, FINITE, ABOVE):
            raise ValueError(f"unknown threshold kind {self.kind!r}")
        if self.kind != FINITE:
            # extremes carry no threshold value; normalize so equality is by kind
            object.__setattr__(self, "z", 0.0)
            object.__setattr__(self, "left", False)
        if self.kind == FINITE and not math.isfinite(self.z):
            raise ValueError("finite threshold needs a finite z")

    @classmethod
    def below(cls) -> ExtendedThreshold:
        return cls(BELOW)

    @classmethod
    def above(cls) -> ExtendedThreshold:
        return cls(ABOVE)

    @classmethod
    def at(cls, z: float) -> ExtendedThreshold:
        return cls(FINITE, float(z), False)

    @classmethod
    def at_left(cls, z: float) -> ExtendedThreshold:
        return cls(FINITE, float(z), True)

    @property
    def is_finite(self) -> bool:
        return self.kind == FINITE

    @property
    def label(self) -> str:
        """Short kind label used in CSV output: z, zminus, below or above."""
        if self.kind == FINITE:
            return "zminus" if self.left else "z"
        return self.kind

    def sort_key(self) -> tuple:
        # z- comes before z: it is active on a larger set
        if self.kind == BELOW:
            return (0, 0.0, 0)
        if self.kind == ABOVE:
            return (2, 0.0, 0)
        return (1, self.z, 0 if self.left else 1)

    def __lt__(self, other: ExtendedThreshold) -> bool:
        return self.sort_key() < other.sort_key()

    def check_in(self, project: DiscountedProject) -> None:
        if self.kind == FINITE and not project.lower <= self.z <= project.upper:
            raise ValueError(f"threshold {self.z} outside [{project.lower}, {project.upper}]")


@dataclass(frozen=True)
class ThresholdPolicy:
    """Threshold policy randomized at the threshold state.

    ``alpha`` is the probability of following the strict branch (passive at
    ``x == z``). When omitted it is 1 for ``at(z)`` and 0 for ``at_left(z)``.
    """

    threshold: ExtendedThreshold
    alpha: float | None = None

    def __post_init__(self) -> None:
        if self.alpha is None:
            object.__setattr__(self, "alpha", 0.0 if self.threshold.left else 1.0)
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    def sort_key(self) -> tuple:
        return self.threshold.sort_key()[:2] + (self.alpha,)


def as_policy(item: ExtendedThreshold | ThresholdPolicy) -> ThresholdPolicy:
    return item if isinstance(item, ThresholdPolicy) else ThresholdPolicy(item)


def active_probability(policy: ThresholdPolicy | ExtendedThreshold, xs) -> np.ndarray:
    """Vectorized probability of the active action under a threshold policy."""
    policy = as_policy(policy)
    xs = _as_states(xs)
    kind = policy.threshold.kind
    if kind == BELOW:
        return np.ones_like(xs)
    if kind == ABOVE:
        return np.zeros_like(xs)
    z = policy.threshold.z
    out = (xs > z).astype(float)
    out[xs == z] = 1.0 - policy.alpha
    return out


def policy_action_probability(policy: ThresholdPolicy | ExtendedThreshold, x: float) -> float:
    """Probability that the policy takes the active action at state ``x``."""
    return float(active_probability(policy, [x])[0])


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    margin: float
    worst_state: float
    passed: bool


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[AssumptionCheck, ...]
    n_points: int

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def describe(self) -> str:
        return f"sampled at {self.n_points} points"

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "coverage": self.describe(),
            "checks": [
                {"name": c.name, "margin": c.margin, "worst_state": c.worst_state, "pass": c.passed}
                for c in self.checks
            ],
        }


def validate_assumptions(project: DiscountedProject, states) -> ValidationReport:
    """Check the growth and cost assumptions at every sampled state.

    Each check reports its worst margin over the grid. The cost-gap check is a
    strict inequality and needs a positive margin; the others pass when the
    margin is at least ``-1e-12``.
    """
    xs = _as_states(states)
    if len(xs) == 0:
        raise ValueError("states must be nonempty")
    if np.any(xs < project.lower) or np.any(xs > project.upper):
        raise ValueError("states must lie inside the state interval")
    for fn in (project.reward, project.cost):
        for a in (0, 1):
            project._evaluate(fn, xs, a)
    w = project.weights(xs)
    beta, gamma, M = project.discount, project.rate_gamma, project.bound_M
    checks: list[AssumptionCheck] = []

    def add(name: str, margins: np.ndarray, strict: bool = False) -> None:
        margins = np.broadcast_to(np.asarray(margins, dtype=float), xs.shape)
        i = int(np.argmin(margins))
        m = float(margins[i])
        ok = m > 0.0 if strict else m >= -ASSUMPTION_SLACK
        checks.append(AssumptionCheck(name, m, float(xs[i]), ok))

    checks.append(
        AssumptionCheck("discount_range", min(beta, 1.0 - beta), float("nan"), 0.0 <= beta < 1.0)
    )
    checks.append(
        AssumptionCheck("rate_gamma_range", min(gamma - beta, 1.0 - gamma), float("nan"),
                        beta <= gamma < 1.0)
    )
    checks.append(AssumptionCheck("bound_M_positive", M, float("nan"), M > 0.0))
    add("weight_at_least_one", w - 1.0)
    c0, c1 = project.costs(xs, 0), project.costs(xs, 1)
    add("passive_cost_nonnegative", c0)
    add("cost_gap", c1 - c0, strict=True)
    growth = np.full(xs.shape, np.inf)
    drift = np.full(xs.shape, np.inf)
    for a in (0, 1):
        r, c = project.rewards(xs, a), project.costs(xs, a)
        growth = np.minimum(growth, M * w - np.maximum(np.abs(r), c))
        ys, ps = project.kernel(a).support_many(xs)
        ew = (project.weights(ys.ravel()).reshape(ys.shape) * ps).sum(axis=1)
        drift = np.minimum(drift, gamma * w - beta * ew)
    add("reward_cost_growth", growth)
    add("weight_drift", drift)
    return ValidationReport(tuple(checks), len(xs))
