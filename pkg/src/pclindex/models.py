"""Built-in projects: the two-state channel with belief state, and optimal stopping.

Channel: the hidden channel flips good to bad with probability ``p`` and bad to
good with probability ``q``. The state is the belief that the channel is good.
Transmitting (active) earns the belief and reveals the channel, so the next
belief is ``q + rho`` or ``q``. Staying idle moves the belief to
``h(x) = q + rho * x``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidModelError, InvalidParameterError, UndefinedMetricError
from .model import DiscountedProject, FiniteSupportKernel, TransitionKernel

G_FLOOR = 1e-9
# Cap on passive steps when locating the first up-crossing of a threshold.
_MAX_PASSIVE_STEPS = 100_000


@dataclass(frozen=True)
class ChannelParams:
    p: float
    q: float
    beta: float

    def __post_init__(self) -> None:
        if not (0.0 < self.p < 1.0 and 0.0 < self.q < 1.0):
            raise InvalidParameterError(f"p and q must lie in (0, 1), got p={self.p}, q={self.q}")
        if not self.rho > 0.0:
            raise InvalidParameterError(f"rho = 1 - p - q must be positive, got {self.rho}")
        if not 0.0 <= self.beta < 1.0:
            raise InvalidParameterError(f"beta must lie in [0, 1), got {self.beta}")

    @property
    def rho(self) -> float:
        return 1.0 - self.p - self.q

    @property
    def h_inf(self) -> float:
        return self.q / (1.0 - self.rho)

    @property
    def good(self) -> float:
        """Belief after observing a good channel."""
        return self.q + self.rho

    def passive_step(self, x):
        return self.q + self.rho * x


def channel_project(params: ChannelParams) -> DiscountedProject:
    """The channel project on ``[0, 1]`` with ``r(x, a) = a x`` and ``c(x, a) = a``."""
    q, good = params.q, params.good

    def active_batch(xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ys = np.empty((len(xs), 2))
        ys[:, 0] = good
        ys[:, 1] = q
        return ys, np.stack([xs, 1.0 - xs], axis=1)

    def passive_batch(xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return params.passive_step(xs)[:, None], np.ones((len(xs), 1))

    def reward(x, a):
        return a * x

    def cost(x, a):
        return np.zeros_like(x) + a

    def weight(x):
        return np.ones_like(x)

    return DiscountedProject(
        lower=0.0,
        upper=1.0,
        reward=reward,
        cost=cost,
        kernel0=FiniteSupportKernel(lambda x: [(params.passive_step(x), 1.0)], batch=passive_batch),
        kernel1=FiniteSupportKernel(lambda x: [(good, x), (q, 1.0 - x)], batch=active_batch),
        discount=params.beta,
        weight=weight,
        bound_M=1.0,
        rate_gamma=params.beta,
        vectorized=True,
        name="channel",
        breakpoints=(q, params.h_inf, good),
    )


def forward_iterate(params: ChannelParams, x: float, t: int) -> float:
    """Belief after ``t`` idle steps from ``x``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return params.h_inf - (params.h_inf - x) * params.rho**t


def backward_iterate(params: ChannelParams, z: float, t: int) -> tuple[float, bool]:
    """Belief ``t`` idle steps before ``z``, with a flag for whether it lies in ``[0, 1]``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    value = params.h_inf - (params.h_inf - z) * params.rho ** (-t)
    return value, 0.0 <= value <= 1.0


def channel_orbit(params: ChannelParams, x: float, lo: float, hi: float, tol: float = 1e-15) -> list[float]:
    """Orbit points of ``x`` inside ``[lo, hi]``: idle iterates of ``x`` and ``q``
    plus ``h_inf``, ``q`` and ``q + rho``."""
    pts = {params.h_inf, params.q, params.good}
    for start in (x, params.q):
        y = float(start)
        for _ in range(_MAX_PASSIVE_STEPS):
            pts.add(y)
            nxt = float(params.passive_step(y))
            if abs(nxt - y) <= tol:
                break
            y = nxt
    return sorted(v for v in pts if lo <= v <= hi)


def _idle_steps_to_exceed(params: ChannelParams, y: float, z: float) -> int | None:
    """Number of idle steps before the belief first exceeds ``z`` (0 if ``y > z``).

    Iterates ``q + rho * y`` with the same floating-point operations as the
    project's passive kernel, so orbit points compare exactly.
    """
    steps = 0
    while y <= z:
        y = params.q + params.rho * y
        steps += 1
        if steps > _MAX_PASSIVE_STEPS:
            return None
    return steps


def channel_case(params: ChannelParams, z: float) -> int:
    """Case label 1..4 of threshold ``z``."""
    if z < params.q:
        return 1
    if z < params.h_inf:
        return 2
    if z < params.good:
        return 3
    return 4


@dataclass(frozen=True)
class ChannelMetrics:
    F: float
    G: float
    f: float
    g: float


def _case2_anchor_values(params: ChannelParams, z: float) -> tuple[float, float, float, float]:
    """Reward and resource metrics at ``q`` and ``q + rho`` for a case-2 threshold.

    From ``q`` the belief idles ``t`` steps, then transmits at ``h_t(q)``; from
    ``q + rho`` it transmits at once. Each metric pair solves a 2x2 system.
    """
    beta, q, good = params.beta, params.q, params.good
    t = _idle_steps_to_exceed(params, q, z)
    ht = forward_iterate(params, q, t)
    bt = beta**t
    # unknowns (value at q, value at q + rho)
    A = np.array(
        [
            [1.0 - bt * beta * (1.0 - ht), -bt * beta * ht],
            [-beta * (1.0 - good), 1.0 - beta * good],
        ]
    )
    Fq, Fg = np.linalg.solve(A, [bt * ht, good])
    Gq, Gg = np.linalg.solve(A, [bt, 1.0])
    return float(Fq), float(Fg), float(Gq), float(Gg)


def channel_closed_form_metrics(params: ChannelParams, x: float, z: float) -> ChannelMetrics:
    """Infinite-horizon metrics of the ``z``-threshold policy from belief ``x``."""
    beta, q, rho, good = params.beta, params.q, params.rho, params.good
    h = q + rho * x
    active = 1.0 if x > z else 0.0
    case = channel_case(params, z)
    if case == 1:
        den = (1.0 - beta) * (1.0 - beta * rho)
        F = (beta * (q + (1.0 - beta) * rho * x) + (1.0 - beta) * (1.0 - beta * rho) * x * active) / den
        G = (beta + (1.0 - beta) * active) / (1.0 - beta)
        return ChannelMetrics(F, G, x, 1.0)
    if case == 3:
        den = 1.0 - beta * good
        F = x / den * active
        G = (1.0 - beta * (good - x)) / den * active
        if h <= z:
            f = x / den
            g = (1.0 - beta * (good - x)) / den
        else:
            f = ((1.0 - beta * rho) * x - beta * q) / den
            g = 1.0 - beta + beta * f
        return ChannelMetrics(F, G, f, g)
    if case == 4:
        return ChannelMetrics(x * active, active, x, 1.0)

    Fq, Fg, Gq, Gg = _case2_anchor_values(params, z)
    F_on = lambda v: v + beta * (v * Fg + (1.0 - v) * Fq)  # noqa: E731
    G_on = lambda v: 1.0 + beta * (v * Gg + (1.0 - v) * Gq)  # noqa: E731
    if x > z:
        # h(x) > z too, so the next idle belief transmits at once
        F, G = F_on(x), G_on(x)
        f = x - beta * (h + beta * h * Fg + beta * (1.0 - h) * Fq - x * Fg - (1.0 - x) * Fq)
        g = 1.0 - beta * (1.0 + beta * h * Gg + beta * (1.0 - h) * Gq - x * Gg - (1.0 - x) * Gq)
        return ChannelMetrics(F, G, f, g)
    s = _idle_steps_to_exceed(params, x, z)
    hs = forward_iterate(params, x, s)
    F = beta**s * F_on(hs)
    G = beta**s * G_on(hs)
    f = x - beta * (beta ** (s - 1) * F_on(hs) - x * Fg - (1.0 - x) * Fq)
    g = 1.0 - beta * (beta ** (s - 1) * G_on(hs) - x * Gg - (1.0 - x) * Gq)
    return ChannelMetrics(F, G, f, g)


def channel_closed_form_index(params: ChannelParams, x: float, g_floor: float = G_FLOOR) -> float:
    """Marginal productivity index of the channel at belief ``x``."""
    beta, good = params.beta, params.good
    if x < params.q or x >= good:
        return float(x)
    if x >= params.h_inf:
        return float(x / (1.0 - beta * (good - x)))
    m = channel_closed_form_metrics(params, x, x)
    if m.g <= g_floor:
        raise UndefinedMetricError(f"marginal resource {m.g} at x={x} is below the floor")
    return m.f / m.g


@dataclass(frozen=True)
class StoppingSpec:
    """Stopping project: the active action pays ``active_reward``, costs
    ``active_cost`` and moves by ``active_kernel``; idling does nothing."""

    active_reward: Callable
    active_cost: Callable
    active_kernel: TransitionKernel
    beta: float
    lower: float = 0.0
    upper: float = 1.0
    bound_M: float = 1.0
    vectorized: bool = False


def stopping_project(spec: StoppingSpec, states=None) -> DiscountedProject:
    """Project with zero passive reward and cost and a frozen passive state.

    The active cost must be positive; it is checked on ``states`` (default: 101
    evenly spaced points of the state interval).
    """
    grid = np.linspace(spec.lower, spec.upper, 101) if states is None else np.asarray(states, float)
    costs = (
        np.asarray(spec.active_cost(grid), dtype=float)
        if spec.vectorized
        else np.array([float(spec.active_cost(float(x))) for x in grid])
    )
    costs = np.broadcast_to(costs, grid.shape)
    if np.any(~np.isfinite(costs)) or np.any(costs <= 0.0):
        bad = grid[np.flatnonzero(~(costs > 0.0))[0]]
        raise InvalidModelError(f"active cost must be positive, fails at state {bad!r}")

    r1, c1 = spec.active_reward, spec.active_cost

    def reward(x, a):
        return a * r1(x) if a else (np.zeros_like(x) if spec.vectorized else 0.0)

    def cost(x, a):
        return a * c1(x) if a else (np.zeros_like(x) if spec.vectorized else 0.0)

    def identity_batch(xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return xs[:, None].copy(), np.ones((len(xs), 1))

    return DiscountedProject(
        lower=spec.lower,
        upper=spec.upper,
        reward=reward,
        cost=cost,
        kernel0=FiniteSupportKernel(lambda x: [(x, 1.0)], batch=identity_batch),
        kernel1=spec.active_kernel,
        discount=spec.beta,
        weight=(lambda x: np.ones_like(x)) if spec.vectorized else (lambda x: 1.0),
        bound_M=spec.bound_M,
        rate_gamma=spec.beta,
        vectorized=spec.vectorized,
        name="stopping",
    )


def channel_stopping_spec(params: ChannelParams) -> StoppingSpec:
    """Stopping spec using the channel's active dynamics, reward ``x`` and unit cost."""
    proj = channel_project(params)
    return StoppingSpec(
        active_reward=lambda x: x,
        active_cost=lambda x: np.ones_like(x),
        active_kernel=proj.kernel1,
        beta=params.beta,
        vectorized=True,
    )

