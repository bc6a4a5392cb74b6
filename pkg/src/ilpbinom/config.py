"""JSON run configuration for the command-line driver."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import jsonschema

from .core import Design, Outcome, Theta
from .knapsack import RegionCache, default_levels, reduced_levels
from .evaluate import TestContext
from .objectives import BetaPrior


class ConfigError(ValueError):
    pass


_PAIR_INT = {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2}
_PAIR_PROB = {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}, "minItems": 2, "maxItems": 2}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "designs": {"type": "array", "items": _PAIR_INT},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "boundary": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["identity", "margin"]},
                "delta": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            },
        },
        "grid_num": {"type": ["integer", "null"], "minimum": 2},
        "tests": {"type": "array", "items": {"type": "string"}},
        "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
        "prior": {
            "type": ["array", "null"],
            "items": {"type": "integer", "minimum": 1},
            "minItems": 4,
            "maxItems": 4,
        },
        "mpk_shift": {"type": ["number", "null"], "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "observed": {"anyOf": [_PAIR_INT, {"type": "null"}]},
        "theta_points": {"type": "array", "items": _PAIR_PROB},
        "profile_step": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
        "compare_step": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
        "levels": {
            "anyOf": [
                {"enum": ["default", "reduced"]},
                {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    "minItems": 1,
                },
            ]
        },
        "output_dir": {"type": "string"},
        "cache_dir": {"type": ["string", "null"]},
        "figure_format": {"enum": ["svg", "png", "pdf", None]},
        "max_inline_size": {"type": "integer", "minimum": 1},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "abs_tol": {"type": "number", "exclusiveMinimum": 0},
                "time_limit": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "node_limit": {"type": ["integer", "null"], "minimum": 1},
            },
        },
    },
}


@dataclass
class RunConfig:
    designs: list = field(default_factory=lambda: [Design(10, 10)])
    alpha: float = 0.025
    boundary_kind: str = "identity"
    delta: float = 0.0
    grid_num: Optional[int] = None
    tests: list = field(default_factory=lambda: ["FE", "FMP*", "ZP*", "APK"])
    gamma: float = 0.0005
    prior: Optional[BetaPrior] = None
    mpk_shift: Optional[float] = None
    observed: Optional[Outcome] = None
    theta_points: list = field(default_factory=list)
    profile_step: float = 0.001
    compare_step: float = 0.01
    levels: object = "default"
    output_dir: str = "out"
    cache_dir: Optional[str] = ".ilpbinom-cache"
    figure_format: Optional[str] = None
    max_inline_size: int = 2000
    abs_tol: float = 2.5e-4
    time_limit: Optional[float] = None
    node_limit: Optional[int] = None

    def level_set(self):
        if isinstance(self.levels, str):
            return default_levels() if self.levels == "default" else reduced_levels(self.alpha)
        return sorted(set(float(v) for v in self.levels) | {self.alpha})

    def context(self) -> TestContext:
        return TestContext(
            alpha=self.alpha,
            delta=self.delta,
            gamma=self.gamma,
            prior=self.prior,
            mpk_shift=self.mpk_shift,
            observed=self.observed,
            grid_num=self.grid_num,
            cache=RegionCache(self.cache_dir) if self.cache_dir else None,
            abs_tol=self.abs_tol,
            time_limit=self.time_limit,
            node_limit=self.node_limit,
            max_inline_size=self.max_inline_size,
        )

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        cfg = replace(self, **kw)
        cfg.check()
        return cfg

    def check(self):
        if self.boundary_kind == "margin" and not self.delta > 0:
            raise ConfigError("margin boundary needs delta > 0")
        if self.boundary_kind == "identity" and self.delta != 0:
            raise ConfigError("identity boundary takes no delta")
        for d in self.designs:
            if self.observed is not None and not d.contains(self.observed):
                raise ConfigError(f"observed {self.observed} lies outside design {d}")


def config_from_dict(raw: dict) -> RunConfig:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    kw = {}
    try:
        if "designs" in raw:
            kw["designs"] = [Design(*d) for d in raw["designs"]]
        if "observed" in raw and raw["observed"] is not None:
            kw["observed"] = Outcome(*raw["observed"])
        if raw.get("prior") is not None:
            kw["prior"] = BetaPrior(*raw["prior"])
        if "theta_points" in raw:
            kw["theta_points"] = [Theta(*t) for t in raw["theta_points"]]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    b = raw.get("boundary", {})
    if "kind" in b:
        kw["boundary_kind"] = b["kind"]
    if "delta" in b:
        kw["delta"] = float(b["delta"])
    s = raw.get("solver", {})
    for key in ("abs_tol", "time_limit", "node_limit"):
        if key in s:
            kw[key] = s[key]
    for key in (
        "alpha",
        "grid_num",
        "tests",
        "gamma",
        "mpk_shift",
        "profile_step",
        "compare_step",
        "levels",
        "output_dir",
        "cache_dir",
        "figure_format",
        "max_inline_size",
    ):
        if key in raw:
            kw[key] = raw[key]
    cfg = RunConfig(**kw)
    cfg.check()
    return cfg


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_dict(raw)
