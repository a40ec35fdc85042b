"""Closed-loop episodes: simulator + controller + per-epoch decisions."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .config import ScenarioConfig
from .controllers import (
    Controller,
    DecisionContext,
    make_controller,
    schedule_decisions,
)
from .herald import HeraldTable, calibrate
from .metrics import MetricsReport, compute_metrics
from .microsim import WEATHER, Simulation, apply_weather
from .netmodel import InvalidArgument, SignalAction, validate_action

log = logging.getLogger(__name__)


@dataclass
class EpisodeResult:
    events: list[dict]
    metrics: MetricsReport
    actions: list[tuple[int, int, SignalAction]] = field(default_factory=list)
    records: list = field(default_factory=list)
    table: HeraldTable | None = None


def build_simulation(scenario: ScenarioConfig, seed_offset: int = 0) -> Simulation:
    params = apply_weather(scenario.vehicle, WEATHER[scenario.weather])
    return Simulation(scenario.network(), list(scenario.flows), params, scenario.horizon, scenario.seed + seed_offset)


def run_episode(
    scenario: ScenarioConfig,
    controller: Controller | None = None,
    table: HeraldTable | None = None,
    seed_offset: int = 0,
) -> EpisodeResult:
    """Run one horizon; decisions at an epoch are gathered, then applied in ascending id order."""
    sim = build_simulation(scenario, seed_offset)
    if controller is None:
        spec = scenario.controller
        controller = make_controller(spec.kind, seed=scenario.seed + seed_offset, duration=spec.duration, green=spec.green)
    table = table or scenario.herald_table()
    actions = []
    for t in range(scenario.horizon):
        due = schedule_decisions(sim, t)
        if due:
            ctxs = [
                DecisionContext(sim.observe(iid), table, scenario.herald.forecast_horizon, scenario.prompt)
                for iid in due
            ]
            for iid, action in zip(due, controller.decide_many(ctxs)):
                bad = validate_action(action)
                if bad is not None:
                    raise InvalidArgument(f"controller {controller.kind} issued {action}: {bad.message}")
                sim.apply_signal(iid, action)
                actions.append((t, iid, action))
        sim.step()
    events = sim.finalize()
    records = list(getattr(controller, "records", []))
    metrics = compute_metrics(events, scenario.horizon, scenario.vehicle.space, records if records else None)
    return EpisodeResult(events, metrics, actions, records, table)


def probe_calibrate(scenario: ScenarioConfig, episodes: int = 1, green: float = 30, delta: float = 1.0) -> HeraldTable:
    """Calibrate a HeraldTable from fixed-time probe runs on the scenario (weather applied)."""
    from .controllers import FixedTimeController

    events: list[dict] = []
    for k in range(episodes):
        res = run_episode(scenario, FixedTimeController(green), table=HeraldTable(), seed_offset=1000 + k)
        events.extend(res.events)
    return calibrate(events, delta=delta)
