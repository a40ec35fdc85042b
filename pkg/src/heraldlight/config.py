"""Scenario configuration (JSON, schema-versioned, unknown fields rejected) and named presets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any

from .herald import HeraldTable
from .llm import EndpointSpec
from .microsim import WEATHER, FlowEntry, VehicleParams
from .netmodel import Network, build_grid_network, turn
from .prompts import PromptConfig

SCHEMA_VERSION = 1
CONTROLLER_KINDS = ("random", "fixed", "max-pressure", "herald-rule", "llm")


class ConfigError(ValueError):
    """Invalid scenario configuration; message names the offending field path."""


@dataclass(frozen=True)
class ControllerSpec:
    kind: str = "herald-rule"
    duration: float = 30  # fixed-time green
    green: float = 20  # max-pressure green


@dataclass(frozen=True)
class LLMSpec:
    endpoint: EndpointSpec = field(default_factory=EndpointSpec)
    critic: EndpointSpec | None = None
    replay: str | None = None
    critic_replay: str | None = None
    max_in_flight: int = 1


@dataclass(frozen=True)
class HeraldSpec:
    table: HeraldTable | None = None
    table_path: str | None = None
    forecast_horizon: float = 5.0


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    grid: tuple[int, int]
    flows: tuple[FlowEntry, ...]
    segment_length: float = 300.0
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    weather: str = "base"
    horizon: int = 3600
    seed: int = 0
    controller: ControllerSpec = field(default_factory=ControllerSpec)
    llm: LLMSpec | None = None
    herald: HeraldSpec = field(default_factory=HeraldSpec)
    prompt: PromptConfig = field(default_factory=PromptConfig)
    schema_version: int = SCHEMA_VERSION

    def network(self) -> Network:
        return build_grid_network(self.grid[0], self.grid[1], self.segment_length)

    def herald_table(self) -> HeraldTable:
        if self.herald.table is not None:
            return self.herald.table
        if self.herald.table_path:
            return HeraldTable.load(self.herald.table_path)
        return HeraldTable()

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "schema_version": self.schema_version,
            "name": self.name,
            "grid": list(self.grid),
            "segment_length": self.segment_length,
            "flows": [f.to_dict() for f in self.flows],
            "vehicle": asdict(self.vehicle),
            "weather": self.weather,
            "horizon": self.horizon,
            "seed": self.seed,
            "controller": asdict(self.controller),
            "herald": {
                "table": self.herald.table.to_dict() if self.herald.table else None,
                "table_path": self.herald.table_path,
                "forecast_horizon": self.herald.forecast_horizon,
            },
            "prompt": asdict(self.prompt),
        }
        if self.llm is not None:
            d["llm"] = {
                "endpoint": asdict(self.llm.endpoint),
                "critic": asdict(self.llm.critic) if self.llm.critic else None,
                "replay": self.llm.replay,
                "critic_replay": self.llm.critic_replay,
                "max_in_flight": self.llm.max_in_flight,
            }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _take(d: Any, cls, path: str) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"{path}: unknown field(s) {', '.join(unknown)}")
    return dict(d)


def _build(cls, d: Any, path: str):
    kw = _take(d, cls, path)
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def config_from_dict(d: dict) -> ScenarioConfig:
    kw = _take(d, ScenarioConfig, "$")
    version = kw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"$.schema_version: unsupported version {version!r}")
    for req in ("name", "grid", "flows"):
        if req not in kw:
            raise ConfigError(f"$.{req}: required field missing")
    grid = kw["grid"]
    if not (isinstance(grid, list) and len(grid) == 2 and all(isinstance(g, int) and g > 0 for g in grid)):
        raise ConfigError("$.grid: expected [rows, cols] positive integers")
    kw["grid"] = tuple(grid)
    if not isinstance(kw["flows"], list):
        raise ConfigError("$.flows: expected a list")
    flows = []
    for k, f in enumerate(kw["flows"]):
        try:
            flows.append(FlowEntry.from_dict(f))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"$.flows[{k}]: {exc}") from None
    kw["flows"] = tuple(flows)
    if "vehicle" in kw:
        kw["vehicle"] = _build(VehicleParams, kw["vehicle"], "$.vehicle")
    if kw.get("weather", "base") not in WEATHER:
        raise ConfigError(f"$.weather: expected one of {sorted(WEATHER)}")
    horizon = kw.get("horizon", 3600)
    if not isinstance(horizon, int) or horizon <= 0:
        raise ConfigError("$.horizon: expected a positive integer")
    if not isinstance(kw.get("seed", 0), int):
        raise ConfigError("$.seed: expected an integer")
    if "controller" in kw:
        kw["controller"] = _build(ControllerSpec, kw["controller"], "$.controller")
        if kw["controller"].kind not in CONTROLLER_KINDS:
            raise ConfigError(f"$.controller.kind: expected one of {', '.join(CONTROLLER_KINDS)}")
    if kw.get("llm") is not None:
        llm = _take(kw["llm"], LLMSpec, "$.llm")
        if "endpoint" in llm:
            llm["endpoint"] = _build(EndpointSpec, llm["endpoint"], "$.llm.endpoint")
        if llm.get("critic") is not None:
            llm["critic"] = _build(EndpointSpec, llm["critic"], "$.llm.critic")
        kw["llm"] = LLMSpec(**llm)
    if "herald" in kw:
        h = _take(kw["herald"], HeraldSpec, "$.herald")
        if h.get("table") is not None:
            try:
                h["table"] = HeraldTable.from_dict(h["table"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"$.herald.table: {exc}") from None
        kw["herald"] = HeraldSpec(**h)
    if "prompt" in kw:
        kw["prompt"] = _build(PromptConfig, kw["prompt"], "$.prompt")
    cfg = ScenarioConfig(**kw)
    net = cfg.network()
    for k, f in enumerate(cfg.flows):
        try:
            net.route_lanes(f.origin, list(f.turns))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"$.flows[{k}]: invalid route: {exc}") from None
        if not f.rate > 0:
            raise ConfigError(f"$.flows[{k}].rate: must be > 0")
    return cfg


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return config_from_dict(d)


# -- presets ----------------------------------------------------------------


def _straight_hops(net: Network, r: int, c: int, heading: tuple[int, int]) -> int:
    """Intersections crossed going straight from (r, c) until leaving the grid."""
    n = 0
    while net.at(r, c) is not None:
        n += 1
        r, c = r + heading[0], c + heading[1]
    return n


def grid_flows(
    net: Network,
    rate_per_source: float,
    straight: float = 0.6,
    left: float = 0.2,
    right: float = 0.2,
) -> list[FlowEntry]:
    """Through traffic from every boundary source plus single-turn routes spread along each corridor."""
    flows = []
    for iid, approach in net.sources():
        heading = turn(approach, "S")
        inter = net.intersection(iid)
        hops = _straight_hops(net, inter.row, inter.col, heading)
        flows.append(FlowEntry((iid, approach), ("S",) * hops, rate_per_source * straight))
        for mv, share in (("L", left), ("R", right)):
            if share <= 0:
                continue
            routes = []
            for k in range(hops):
                r, c = inter.row + heading[0] * k, inter.col + heading[1] * k
                after = turn(approach, mv)
                rest = _straight_hops(net, r + after[0], c + after[1], after)
                routes.append(("S",) * k + (mv,) + ("S",) * rest)
            for turns in routes:
                flows.append(FlowEntry((iid, approach), turns, rate_per_source * share / len(routes)))
    return flows


# (rows, cols, veh/s per boundary source); jn-like totals ~6295 veh/h
PRESETS = {
    "grid2x2": (2, 2, 0.12),
    "jn-like": (3, 4, 6295 / 3600 / 14),
    "hz-like": (4, 4, 0.10),
    "ny-like": (7, 28, 0.08),
}


def preset(name: str, horizon: int = 3600, seed: int = 0, demand_scale: float = 1.0, **kw) -> ScenarioConfig:
    try:
        rows, cols, rate = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    net = build_grid_network(rows, cols, kw.get("segment_length", 300.0))
    flows = tuple(grid_flows(net, rate * demand_scale))
    return ScenarioConfig(name=name, grid=(rows, cols), flows=flows, horizon=horizon, seed=seed, **kw)

