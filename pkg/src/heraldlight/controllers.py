"""Signal controllers behind one interface, plus decision-epoch scheduling."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .critic import DecisionRecord, detect_hallucination
from .herald import Forecast, HeraldTable, forecast_queues, herald_duration
from .llm import ChatClient, LLMError
from .microsim import Observation, Simulation
from .netmodel import MAX_DURATION, Phase, SignalAction
from .prompts import (
    ParseFailure,
    PromptConfig,
    compose_prompt,
    lane_imbalance,
    parse_response,
    phase_demand,
    phase_durations,
    select_source,
)


def whole_seconds(d: float) -> int:
    """Controllers act at 1 s granularity."""
    return int(min(MAX_DURATION, max(1, math.ceil(d - 1e-9))))


@dataclass
class DecisionContext:
    obs: Observation
    table: HeraldTable
    forecast_horizon: float = 5.0
    prompt_config: PromptConfig = field(default_factory=PromptConfig)

    @cached_property
    def forecast(self) -> Forecast:
        return forecast_queues(self.obs, self.forecast_horizon)

    @cached_property
    def durations(self) -> dict[Phase, dict[str, float]]:
        return phase_durations(self.obs, self.table)

    @cached_property
    def prompt(self) -> str:
        return compose_prompt(self.obs, self.forecast, self.durations, self.prompt_config)


class Controller:
    kind = "base"

    def decide(self, ctx: DecisionContext) -> SignalAction:
        raise NotImplementedError

    def decide_many(self, ctxs: Sequence[DecisionContext]) -> list[SignalAction]:
        return [self.decide(c) for c in ctxs]


# -- fixed time -------------------------------------------------------------


def fixed_time_decide(cursor: Phase | None, duration: float = 30) -> SignalAction:
    """Next phase in P1..P4 order after `cursor` (P1 when fresh)."""
    nxt = Phase.P1 if cursor is None else Phase(cursor % 4 + 1)
    return SignalAction(nxt, duration)


class FixedTimeController(Controller):
    kind = "fixed"

    def __init__(self, duration: float = 30):
        self.duration = duration
        self.cursor: dict[int, Phase] = {}

    def decide(self, ctx: DecisionContext) -> SignalAction:
        iid = ctx.obs.intersection_id
        action = fixed_time_decide(self.cursor.get(iid), self.duration)
        self.cursor[iid] = action.phase
        return action


# -- random -----------------------------------------------------------------


class RandomController(Controller):
    kind = "random"

    def __init__(self, seed: int = 0, max_duration: int = 40):
        self.rng = np.random.default_rng([seed, 0xAC7])
        self.max_duration = max_duration

    def decide(self, ctx: DecisionContext) -> SignalAction:
        phase = Phase(int(self.rng.integers(1, 5)))
        return SignalAction(phase, int(self.rng.integers(1, self.max_duration + 1)))


# -- max pressure -----------------------------------------------------------


def pressures(obs: Observation, downstream: dict[str, float] | None = None) -> dict[Phase, float]:
    down = obs.downstream_queued if downstream is None else downstream
    return {
        ph: sum(obs.queued[lid] - down.get(lid, 0.0) for lid in obs.lane_pairs[ph])
        for ph in Phase
    }


def argmax_phase(scores: dict[Phase, float]) -> Phase:
    """Highest score, lowest phase index on ties."""
    best = None
    for ph in Phase:
        if best is None or scores[ph] > scores[best]:
            best = ph
    return best


def max_pressure_decide(obs: Observation, downstream: dict[str, float] | None = None, green: float = 20) -> SignalAction:
    return SignalAction(argmax_phase(pressures(obs, downstream)), green)


class MaxPressureController(Controller):
    kind = "max-pressure"

    def __init__(self, green: float = 20):
        self.green = green

    def decide(self, ctx: DecisionContext) -> SignalAction:
        return max_pressure_decide(ctx.obs, green=self.green)


# -- herald rule ------------------------------------------------------------


def priority_phase(queues: dict[Phase, tuple[float, float]]) -> Phase:
    """Largest demand; ties by larger lane imbalance, then lower index."""
    return max(
        Phase,
        key=lambda ph: (phase_demand(*queues[ph]), lane_imbalance(*queues[ph]), -int(ph)),
    )


def herald_rule_decide(
    obs: Observation,
    forecast: Forecast,
    table: HeraldTable,
    config: PromptConfig = PromptConfig(),
) -> SignalAction:
    measured = obs.phase_queues()
    source = select_source(forecast.queues, measured, table, config)
    queues = forecast.queues if source == "herald" else measured
    phase = priority_phase(queues)
    return SignalAction(phase, whole_seconds(herald_duration(obs, phase, table)))


class HeraldRuleController(Controller):
    kind = "herald-rule"

    def decide(self, ctx: DecisionContext) -> SignalAction:
        return herald_rule_decide(ctx.obs, ctx.forecast, ctx.table, ctx.prompt_config)


# -- llm --------------------------------------------------------------------


class LLMController(Controller):
    """Prompts a chat model; parse or transport failures fall back to the herald rule."""

    kind = "llm"

    def __init__(self, client: ChatClient, max_in_flight: int = 1):
        self.client = client
        self.max_in_flight = max(1, max_in_flight)
        self.records: list[DecisionRecord] = []

    def _ask(self, prompt: str) -> tuple[str, bool]:
        try:
            return self.client.complete(prompt), False
        except LLMError as exc:
            return f"<transport-failure: {exc}>", True

    def decide_many(self, ctxs: Sequence[DecisionContext]) -> list[SignalAction]:
        prompts = [c.prompt for c in ctxs]
        if self.max_in_flight == 1 or len(prompts) <= 1:
            replies = [self._ask(p) for p in prompts]
        else:
            with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
                replies = list(pool.map(self._ask, prompts))
        actions = []
        for ctx, prompt, (raw, failed) in zip(ctxs, prompts, replies):
            parsed = ParseFailure("transport-failure", raw) if failed else parse_response(raw)
            flags = detect_hallucination(prompt, raw, parsed)
            fallback = herald_rule_decide(ctx.obs, ctx.forecast, ctx.table, ctx.prompt_config)
            executed = parsed if isinstance(parsed, SignalAction) else fallback
            self.records.append(
                DecisionRecord(
                    prompt=prompt,
                    raw_response=raw,
                    parsed=parsed,
                    executed=executed,
                    hallucination_flags=flags,
                    sim_time=ctx.obs.sim_time,
                    intersection_id=ctx.obs.intersection_id,
                    fallback=fallback,
                )
            )
            actions.append(executed)
        return actions

    def decide(self, ctx: DecisionContext) -> SignalAction:
        return self.decide_many([ctx])[0]


def schedule_decisions(sim: Simulation, t: int) -> list[int]:
    """Intersections whose decision epoch falls on tick `t`, ascending."""
    return [iid for iid in range(len(sim.signals)) if sim.is_due(iid, t)]


def make_controller(kind: str, *, seed: int = 0, client: ChatClient | None = None, **kw) -> Controller:
    if kind == "random":
        return RandomController(seed)
    if kind == "fixed":
        return FixedTimeController(kw.get("duration", 30))
    if kind == "max-pressure":
        return MaxPressureController(kw.get("green", 20))
    if kind == "herald-rule":
        return HeraldRuleController()
    if kind == "llm":
        if client is None:
            raise ValueError("llm controller needs a client")
        return LLMController(client, kw.get("max_in_flight", 1))
    raise ValueError(f"unknown controller kind {kind!r}")
