"""Run configuration: JSON loading, validation, defaults and model construction."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError, InvalidModelError
from .model import DiscountedProject, FiniteSupportKernel
from .models import ChannelParams, channel_project, channel_stopping_spec, stopping_project

MODELS = ("channel", "stopping", "custom")


@dataclass(frozen=True)
class RunConfig:
    model: str = "channel"
    p: float | None = None
    q: float | None = None
    beta: float | None = None
    spec: Any = None
    custom: dict | None = None
    grid: int = 201
    tol: float = 1e-8
    horizon: int | None = None
    lambdas: Any = 33
    band: float = 1e-4
    vi_tol: float = 1e-10
    dist: str = "uniform"
    out: str | None = None
    svg: str | None = None
    csv: str | None = None
    strict: bool = False
    seed: int = 0
    pcli3_states: int = 9
    pcli3_intervals: int = 20
    gap_budget: float | None = None
    node_budget: int = 200_000

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> RunConfig:
        return validate_config(dataclasses.replace(self, **changes))


FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def _fail(field_name: str, message: str) -> ConfigError:
    return ConfigError(f"config field '{field_name}': {message}")


def validate_config(cfg: RunConfig) -> RunConfig:
    if cfg.model not in MODELS:
        raise _fail("model", f"must be one of {', '.join(MODELS)}, got {cfg.model!r}")
    if cfg.model == "channel":
        for name in ("p", "q", "beta"):
            if getattr(cfg, name) is None:
                raise _fail(name, "required for the channel model")
    if cfg.model == "stopping" and cfg.spec is None:
        raise _fail("spec", "required for the stopping model")
    if cfg.model == "custom" and not isinstance(cfg.custom, dict):
        raise _fail("custom", "required (an object) for the custom model")
    if cfg.beta is not None and not 0.0 <= cfg.beta < 1.0:
        raise _fail("beta", f"must satisfy 0 <= beta < 1, got {cfg.beta}")
    for name in ("p", "q"):
        v = getattr(cfg, name)
        if v is not None and not 0.0 < v < 1.0:
            raise _fail(name, f"must lie in (0, 1), got {v}")
    if not (isinstance(cfg.grid, int) and cfg.grid >= 3):
        raise _fail("grid", f"must be an integer >= 3, got {cfg.grid!r}")
    for name in ("tol", "band", "vi_tol"):
        v = getattr(cfg, name)
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise _fail(name, f"must be a positive number, got {v!r}")
    if cfg.horizon is not None and not (isinstance(cfg.horizon, int) and cfg.horizon >= 0):
        raise _fail("horizon", f"must be a nonnegative integer, got {cfg.horizon!r}")
    if isinstance(cfg.lambdas, bool) or not (
        (isinstance(cfg.lambdas, int) and cfg.lambdas >= 1)
        or (isinstance(cfg.lambdas, list) and all(isinstance(v, (int, float)) for v in cfg.lambdas))
    ):
        raise _fail("lambdas", "must be a positive count or a list of numbers")
    if not (cfg.dist in ("uniform",) or cfg.dist.startswith("pointmass:") or cfg.dist.endswith(".json")):
        raise _fail("dist", f"must be uniform, pointmass:X or a .json file, got {cfg.dist!r}")
    for name in ("pcli3_states", "pcli3_intervals", "node_budget"):
        v = getattr(cfg, name)
        if not (isinstance(v, int) and v >= 1):
            raise _fail(name, f"must be a positive integer, got {v!r}")
    return cfg


def config_from_dict(data: dict, source: str = "config") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    unknown = sorted(set(data) - FIELDS)
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) {', '.join(unknown)}")
    try:
        cfg = RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return validate_config(cfg)


def load_config(path) -> RunConfig:
    """Read a JSON run configuration, apply defaults and reject unknown keys."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return config_from_dict(data, str(path))


def _lookup(table: dict[float, Any], name: str):
    def fn(x, *args):
        try:
            row = table[float(x)]
        except KeyError:
            raise InvalidModelError(f"{name} not tabulated at state {x!r}") from None
        return row[args[0]] if args else row

    fn.__name__ = name
    return fn


def custom_project(spec: dict) -> DiscountedProject:
    """Project from tabulated data.

    Keys: ``states``; ``reward`` and ``cost`` as per-state ``[passive, active]``
    pairs; ``kernel0`` and ``kernel1`` as per-state lists of ``[next_state,
    probability]``; ``discount``; optional ``weight``, ``bound_M``,
    ``rate_gamma``, ``lower``, ``upper``.
    """
    allowed = {"states", "reward", "cost", "kernel0", "kernel1", "discount", "weight",
               "bound_M", "rate_gamma", "lower", "upper"}
    unknown = sorted(set(spec) - allowed)
    if unknown:
        raise ConfigError(f"custom model: unknown key(s) {', '.join(unknown)}")
    try:
        states = [float(x) for x in spec["states"]]
        n = len(states)
        for key in ("reward", "cost", "kernel0", "kernel1"):
            if len(spec[key]) != n:
                raise ConfigError(f"custom model: '{key}' needs one entry per state")
        reward = {x: (float(r[0]), float(r[1])) for x, r in zip(states, spec["reward"])}
        cost = {x: (float(c[0]), float(c[1])) for x, c in zip(states, spec["cost"])}
        weight = {x: float(w) for x, w in zip(states, spec.get("weight", [1.0] * n))}
        k0 = {x: [(float(y), float(p)) for y, p in row] for x, row in zip(states, spec["kernel0"])}
        k1 = {x: [(float(y), float(p)) for y, p in row] for x, row in zip(states, spec["kernel1"])}
        return DiscountedProject(
            lower=float(spec.get("lower", min(states))),
            upper=float(spec.get("upper", max(states))),
            reward=_lookup(reward, "reward"),
            cost=_lookup(cost, "cost"),
            kernel0=FiniteSupportKernel(k0),
            kernel1=FiniteSupportKernel(k1),
            discount=float(spec["discount"]),
            weight=_lookup(weight, "weight"),
            bound_M=float(spec.get("bound_M", 1.0)),
            rate_gamma=float(spec["rate_gamma"]) if "rate_gamma" in spec else None,
            name="custom",
        )
    except KeyError as exc:
        raise ConfigError(f"custom model: missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"custom model: {exc}") from None


def _stopping_from_spec(spec: Any, beta: float | None) -> DiscountedProject:
    if isinstance(spec, str):
        try:
            spec = json.loads(Path(spec).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"stopping spec {spec}: {exc}") from None
    if not isinstance(spec, dict):
        raise ConfigError("stopping spec must be an object")
    spec = dict(spec)
    b = spec.pop("beta", beta)
    if b is None:
        raise ConfigError("stopping spec: 'beta' is required")
    if "states" in spec:
        # tabulated active dynamics with a frozen passive state
        states = [float(x) for x in spec["states"]]
        table = {
            "states": states,
            "reward": [[0.0, r] for r in spec["reward"]],
            "cost": [[0.0, c] for c in spec["cost"]],
            "kernel0": [[[x, 1.0]] for x in states],
            "kernel1": spec["kernel"],
            "discount": b,
            "bound_M": spec.get("bound_M", 1.0),
        }
        if any(float(c) <= 0 for c in spec["cost"]):
            raise InvalidModelError("active cost must be positive")
        return custom_project(table)
    unknown = sorted(set(spec) - {"p", "q"})
    if unknown:
        raise ConfigError(f"stopping spec: unknown key(s) {', '.join(unknown)}")
    params = ChannelParams(float(spec["p"]), float(spec["q"]), float(b))
    return stopping_project(channel_stopping_spec(params))


def build_project(cfg: RunConfig) -> DiscountedProject:
    if cfg.model == "channel":
        return channel_project(ChannelParams(cfg.p, cfg.q, cfg.beta))
    if cfg.model == "stopping":
        return _stopping_from_spec(cfg.spec, cfg.beta)
    return custom_project(cfg.custom)


def model_grid(cfg: RunConfig, project: DiscountedProject) -> np.ndarray:
    """Evaluation grid: the tabulated states for custom models, else an even grid."""
    if cfg.model == "custom":
        return np.unique(np.asarray(cfg.custom["states"], dtype=float))
    if cfg.model == "stopping" and isinstance(cfg.spec, dict) and "states" in cfg.spec:
        return np.unique(np.asarray(cfg.spec["states"], dtype=float))
    return np.linspace(project.lower, project.upper, cfg.grid)


def certified_g_floor(cfg: RunConfig) -> float | None:
    """Known analytic lower bound on the marginal resource metric, if any."""
    if cfg.model == "channel":
        return 1.0 - cfg.beta
    return None


__all__ = [
    "RunConfig",
    "build_project",
    "certified_g_floor",
    "config_from_dict",
    "custom_project",
    "load_config",
    "model_grid",
    "validate_config",
]
