"""Decision prompt rendering, phase demand arithmetic and response parsing."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .herald import (
    Forecast,
    HeraldTable,
    herald_duration,
    original_duration,
    piecewise_adjust,
    reference_duration,
)
from .microsim import Observation
from .netmodel import (
    MAX_DURATION,
    TOKEN_PHASES,
    InvalidArgument,
    Phase,
    SignalAction,
    validate_action,
)

BLOCK_TITLES = (
    "INTERSECTION",
    "TASK",
    "DETAILS",
    "REQUIREMENTS",
    "RULES",
    "IMPORTANT",
)
HERALD_HEADER = "Herald forecast queues"
ORIGINAL_HEADER = "Original measured queues"


def phase_demand(q1: float, q2: float) -> float:
    if q1 < 0 or q2 < 0:
        raise InvalidArgument("queues must be >= 0")
    if q1 > 0 and q2 > 0:
        return q1 + q2
    return max(q1, q2)


def lane_imbalance(q1: float, q2: float) -> float:
    if q1 < 0 or q2 < 0:
        raise InvalidArgument("queues must be >= 0")
    return abs(q1 - q2)


@dataclass(frozen=True)
class PromptConfig:
    imbalance_ratio: float = 2.0
    # measured imbalance below this is treated as this value when comparing
    imbalance_floor: float = 2.0
    duration_limit: float = MAX_DURATION


@dataclass(frozen=True)
class PhaseDemand:
    phase: Phase
    lanes: tuple[int, int]
    demand: float
    imbalance: float
    source: str


def demands(queues: dict[Phase, tuple[int, int]], source: str) -> dict[Phase, PhaseDemand]:
    return {
        ph: PhaseDemand(ph, (a, b), phase_demand(a, b), lane_imbalance(a, b), source)
        for ph, (a, b) in sorted(queues.items())
    }


def select_source(
    predicted: dict[Phase, tuple[int, int]],
    measured: dict[Phase, tuple[int, int]],
    table: HeraldTable,
    config: PromptConfig = PromptConfig(),
) -> str:
    """"herald" unless the prediction implies an over-long green or excessive imbalance."""
    for ph, (a, b) in predicted.items():
        implied = piecewise_adjust(reference_duration(a, b, table), table, clamp=False)
        if implied > config.duration_limit:
            return "original"
        i_pred = lane_imbalance(a, b)
        i_meas = lane_imbalance(*measured[ph])
        if i_pred > config.imbalance_ratio * max(i_meas, config.imbalance_floor):
            return "original"
    return "herald"


def phase_durations(obs: Observation, table: HeraldTable) -> dict[Phase, dict[str, float]]:
    """Both duration candidates per phase: forecast-extended and measured-only."""
    measured = obs.phase_queues()
    return {
        ph: {"herald": herald_duration(obs, ph, table), "original": original_duration(*measured[ph], table)}
        for ph in Phase
    }


def _fmt(x: float) -> str:
    return f"{x:.0f}" if float(x).is_integer() else f"{x:.1f}"


def _rows(queues: dict[Phase, tuple[int, int]], durations: dict[Phase, dict[str, float]], key: str) -> list[str]:
    rows = []
    for ph in Phase:
        a, b = queues[ph]
        rows.append(
            f"  {ph.token}: lanes [{a}, {b}] | demand Q={_fmt(phase_demand(a, b))}"
            f" | imbalance I={_fmt(lane_imbalance(a, b))} | duration {_fmt(durations[ph][key])} s"
        )
    return rows


def compose_prompt(
    obs: Observation,
    forecast: Forecast,
    durations: dict[Phase, dict[str, float]],
    config: PromptConfig = PromptConfig(),
) -> str:
    """Render the six-block decision prompt for one intersection."""
    for ph in Phase:
        if ph not in forecast.queues or ph not in durations or ph not in obs.lane_pairs:
            raise InvalidArgument(f"missing data for phase {ph.token}")
        if not {"herald", "original"} <= set(durations[ph]):
            raise InvalidArgument(f"phase {ph.token} needs herald and original durations")
    measured = obs.phase_queues()
    limit = _fmt(config.duration_limit)
    blocks = {
        "INTERSECTION": [
            f"Intersection {obs.intersection_id}, simulation time {obs.sim_time} s.",
            "Four approaches (N, E, S, W), each with a left, a straight and a right-turn lane.",
            "Right turns are always permitted and belong to no phase.",
            "Signal phases and the two lanes each one serves:",
            "  NTST: north and south straight lanes.",
            "  NLSL: north and south left-turn lanes.",
            "  ETWT: east and west straight lanes.",
            "  ELWL: east and west left-turn lanes.",
            "Every green is followed by 3 s yellow and 2 s all-red.",
        ],
        "TASK": [
            "1. Select the next phase to turn green.",
            f"2. Select its green duration in whole seconds, between 1 and {limit}.",
        ],
        "DETAILS": [
            "For a phase with lane queues [a, b]: demand Q = a + b, or the larger one if a lane is empty;"
            " imbalance I = |a - b|.",
            "Prefer the phase with the largest demand Q; on a tie prefer the larger imbalance I,"
            " then the earlier phase in the order NTST, NLSL, ETWT, ELWL.",
            "Durations are precomputed: a Herald duration clears the longer lane queue plus vehicles"
            " arriving in time to be served; an Original duration clears only the measured queue.",
            f"{HERALD_HEADER} ({_fmt(forecast.horizon)} s ahead):",
            *_rows(forecast.queues, durations, "herald"),
            f"{ORIGINAL_HEADER} (now):",
            *_rows(measured, durations, "original"),
        ],
        "REQUIREMENTS": [
            "Reason briefly, then give the final answer as exactly one tag pair:",
            "<signal>PHASE</signal><duration>SECONDS</duration>",
            "PHASE is one of NTST, NLSL, ETWT, ELWL; SECONDS is an integer.",
        ],
        "RULES": [
            "Use the Herald forecast queues by default.",
            f"Switch to the Original measured queues if a forecast duration would exceed {limit} s"
            f" before clamping, or a forecast imbalance exceeds {_fmt(config.imbalance_ratio)}x the measured"
            f" imbalance (measured imbalance below {_fmt(config.imbalance_floor)} counts as"
            f" {_fmt(config.imbalance_floor)}).",
            "If every phase has zero demand, choose NTST with its listed Herald duration.",
        ],
        "IMPORTANT": [
            "Never choose a phase with zero demand while another phase has demand.",
            f"The duration must be greater than 0 and at most {limit} seconds.",
            "Each tag appears once. Output nothing after the tags.",
        ],
    }
    out = []
    for title in BLOCK_TITLES:
        out.append(f"[{title}]")
        out.extend(blocks[title])
        out.append("")
    return "\n".join(out)


_ROW = re.compile(r"^\s+(NTST|NLSL|ETWT|ELWL): lanes \[(\d+), (\d+)\] \| demand Q=([\d.]+)", re.M)


def prompt_demands(prompt: str) -> dict[str, dict[Phase, float]]:
    """Recover per-source phase demands from a rendered prompt."""
    out: dict[str, dict[Phase, float]] = {}
    for source, header, end in (
        ("herald", HERALD_HEADER, ORIGINAL_HEADER),
        ("original", ORIGINAL_HEADER, "[REQUIREMENTS]"),
    ):
        i = prompt.find(header)
        if i < 0:
            continue
        j = prompt.find(end, i + len(header))
        section = prompt[i : j if j >= 0 else len(prompt)]
        out[source] = {TOKEN_PHASES[m[1]]: float(m[4]) for m in _ROW.finditer(section)}
    return out


@dataclass(frozen=True)
class ParseFailure:
    kind: str  # malformed | invalid-phase | constraint-violation
    message: str


_SIGNAL = re.compile(r"<signal>(.*?)</signal>", re.S)
_DURATION = re.compile(r"<duration>(.*?)</duration>", re.S)
_INT = re.compile(r"[+-]?\d+")


def parse_response(text: str) -> SignalAction | ParseFailure:
    """Extract the single (phase, duration) tag pair from an agent reply."""
    if not isinstance(text, str):
        return ParseFailure("malformed", "response is not text")
    signals = _SIGNAL.findall(text)
    durations = _DURATION.findall(text)
    if len(signals) != 1 or len(durations) != 1:
        return ParseFailure("malformed", f"expected one signal and one duration tag, got {len(signals)}/{len(durations)}")
    token = signals[0].strip()
    raw = durations[0].strip()
    if not _INT.fullmatch(raw):
        return ParseFailure("malformed", f"duration {raw!r} is not an integer")
    if token not in TOKEN_PHASES:
        return ParseFailure("invalid-phase", f"unknown phase token {token!r}")
    action = SignalAction(TOKEN_PHASES[token], int(raw))
    bad = validate_action(action)
    if bad is not None:
        return ParseFailure(bad.kind, bad.message)
    return action


def render(action: SignalAction) -> str:
    return action.render()

