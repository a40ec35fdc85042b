"""Queue-length to release-time knowledge, reference durations and short-horizon queue forecasts."""

from __future__ import annotations

import bisect
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .microsim import Observation
from .netmodel import MAX_DURATION, InvalidArgument, Phase

MIN_DURATION = 1.0
V_FLOOR = 1.0
FORECAST_LIMIT = 40.0


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class AdjustRule:
    """``t_ref >= threshold`` (op ">=") or ``t_ref == threshold`` (op "==") adds `gain`."""

    op: str
    threshold: float
    gain: float

    def matches(self, t_ref: float) -> bool:
        if self.op == ">=":
            return t_ref >= self.threshold
        if self.op == "==":
            return math.isclose(t_ref, self.threshold, abs_tol=1e-9)
        raise InvalidArgument(f"unknown rule op {self.op!r}")


DEFAULT_RULES = (AdjustRule(">=", 30.0, 4.0), AdjustRule("==", 1.0, 2.0))


@dataclass(frozen=True)
class HeraldTable:
    knots: tuple[tuple[float, float], ...] = ((0.0, 0.0), (1.0, 2.0))
    tau: float = 2.0
    delta: float = 1.0
    rules: tuple[AdjustRule, ...] = DEFAULT_RULES
    v_max_observed: float = 0.0

    def __post_init__(self) -> None:
        qs = [q for q, _ in self.knots]
        rs = [r for _, r in self.knots]
        if not self.knots:
            raise InvalidArgument("HeraldTable needs at least one knot")
        if any(b <= a for a, b in zip(qs, qs[1:])):
            raise InvalidArgument("knots must be strictly increasing in queue length")
        if any(b < a for a, b in zip(rs, rs[1:])):
            raise InvalidArgument("release times must be non-decreasing")
        if not self.tau > 0:
            raise InvalidArgument("tau must be > 0")

    def to_dict(self) -> dict:
        return {
            "knots": [list(k) for k in self.knots],
            "tau": self.tau,
            "delta": self.delta,
            "rules": [{"op": r.op, "threshold": r.threshold, "gain": r.gain} for r in self.rules],
            "v_max_observed": self.v_max_observed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HeraldTable":
        unknown = set(d) - {"knots", "tau", "delta", "rules", "v_max_observed"}
        if unknown:
            raise InvalidArgument(f"unknown HeraldTable fields {sorted(unknown)}")
        rules = d.get("rules")
        return cls(
            knots=tuple((float(q), float(r)) for q, r in d["knots"]),
            tau=float(d["tau"]),
            delta=float(d.get("delta", 1.0)),
            rules=DEFAULT_RULES if rules is None else tuple(AdjustRule(r["op"], r["threshold"], r["gain"]) for r in rules),
            v_max_observed=float(d.get("v_max_observed", 0.0)),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "HeraldTable":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def release_time(table: HeraldTable, queue_length: float) -> float:
    """Piecewise-linear interpolation over the knots; last-segment slope beyond them."""
    if queue_length < 0:
        raise InvalidArgument("queue_length must be >= 0")
    if queue_length == 0:
        return 0.0
    knots = table.knots
    if knots[0][0] != 0.0:
        knots = ((0.0, 0.0),) + knots
    if len(knots) < 2:
        return 0.0
    qs = [q for q, _ in knots]
    k = bisect.bisect_right(qs, queue_length)
    if k >= len(knots):
        (q0, r0), (q1, r1) = knots[-2], knots[-1]
    else:
        (q0, r0), (q1, r1) = knots[k - 1], knots[k]
    return r0 + (r1 - r0) * (queue_length - q0) / (q1 - q0)


def reference_duration(q1: float, q2: float, table: HeraldTable) -> float:
    """Longer lane queue times the per-vehicle egress time plus the tail correction."""
    if q1 < 0 or q2 < 0:
        raise InvalidArgument("queues must be >= 0")
    a = max(q1, q2)
    if a == 0:
        return MIN_DURATION
    return a * table.tau + table.delta


def piecewise_adjust(t_ref: float, table: HeraldTable, clamp: bool = True) -> float:
    """Apply the first matching adjustment rule, then clamp into (0, 40]."""
    out = t_ref
    for rule in table.rules:
        if rule.matches(t_ref):
            out = t_ref + rule.gain
            break
    if clamp:
        out = min(out, MAX_DURATION) if out > 0 else MIN_DURATION
    return out


def time_to_line(distance: float, speed: float, v_floor: float = V_FLOOR) -> float:
    if distance < 0:
        raise InvalidArgument(f"distance must be >= 0, got {distance}")
    return distance / max(speed, v_floor)


def admitted_set(running: Iterable[tuple[float, float]], t_ref: float) -> list[tuple[float, float]]:
    """Approaching vehicles that reach the stop line within `t_ref` seconds."""
    return [v for v in running if time_to_line(v[0], v[1]) <= t_ref]


@dataclass(frozen=True)
class Forecast:
    queues: dict[Phase, tuple[int, int]]
    horizon: float
    source: str  # herald | original
    lanes: dict[str, int] = field(default_factory=dict)


def forecast_queues(obs: Observation, horizon: float) -> Forecast:
    """Queued vehicles plus those arriving within `horizon`; no discharge is assumed."""
    if not 0 <= horizon <= FORECAST_LIMIT:
        raise InvalidArgument(f"horizon {horizon} outside [0, {FORECAST_LIMIT:g}]")
    if horizon == 0:
        lanes = dict(obs.queued)
        source = "original"
    else:
        lanes = {lid: q + len(admitted_set(obs.running.get(lid, ()), horizon)) for lid, q in obs.queued.items()}
        source = "herald"
    queues = {ph: (lanes[a], lanes[b]) for ph, (a, b) in obs.lane_pairs.items()}
    return Forecast(queues, float(horizon), source, lanes)


def original_duration(q1: float, q2: float, table: HeraldTable) -> float:
    return piecewise_adjust(reference_duration(q1, q2, table), table)


def herald_duration(obs: Observation, phase: Phase, table: HeraldTable) -> float:
    """Reference duration for `phase`, extended to serve admitted approaching vehicles."""
    phase = Phase.parse(phase)
    a, b = obs.lane_pairs[phase]
    t_ref = original_duration(obs.queued[a], obs.queued[b], table)
    running = list(obs.running.get(a, ())) + list(obs.running.get(b, ()))
    admitted = admitted_set(running, t_ref)
    d = t_ref
    if admitted:
        d = max(t_ref, max(time_to_line(*v) for v in admitted) + table.tau)
    return min(max(d, MIN_DURATION), MAX_DURATION)


# -- calibration ----------------------------------------------------------


def isotonic_fit(xs: Sequence[float], ys: Sequence[float], weights: Sequence[float] | None = None) -> list[float]:
    """Pool-adjacent-violators: non-decreasing least-squares fit of ys ordered by xs."""
    order = sorted(range(len(xs)), key=lambda i: xs[i])
    w = [1.0] * len(xs) if weights is None else list(weights)
    blocks: list[list[float]] = []  # [mean, weight, count]
    for i in order:
        blocks.append([ys[i], w[i], 1])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            m2, w2, c2 = blocks.pop()
            m1, w1, c1 = blocks.pop()
            tw = w1 + w2
            blocks.append([(m1 * w1 + m2 * w2) / tw, tw, c1 + c2])
    fitted_sorted = [m for m, _, c in blocks for _ in range(c)]
    out = [0.0] * len(xs)
    for rank, i in enumerate(order):
        out[i] = fitted_sorted[rank]
    return out


@dataclass(frozen=True)
class ReleaseEpisode:
    iid: int
    lane: str
    green_time: float
    queue_length: int
    release_time: float
    first_departure: float


def split_runs(events: Iterable[dict]) -> list[list[dict]]:
    """Split a concatenation of event logs at their ``meta`` headers."""
    runs: list[list[dict]] = []
    for ev in events:
        if ev.get("type") == "meta" or not runs:
            runs.append([])
        runs[-1].append(ev)
    return runs


def release_episodes(events: Iterable[dict]) -> list[ReleaseEpisode]:
    """Complete discharge episodes: every vehicle queued at green onset crossed in that green/yellow."""
    runs = split_runs(events)
    if len(runs) > 1:
        return [ep for run in runs for ep in release_episodes(run)]
    events = runs[0] if runs else []
    crossings: dict[tuple[int, str], tuple[float, float, int]] = {}
    for ev in events:
        if ev.get("type") == "cross":
            crossings[(ev["vid"], ev["lane"])] = (ev["time"], ev["clear"], ev["t"])
    out = []
    for ev in events:
        if ev.get("type") != "signal" or ev.get("mode") != "green":
            continue
        for lane, vids in sorted(ev.get("queues", {}).items()):
            if not vids:
                continue
            got = [crossings.get((vid, lane)) for vid in vids]
            if any(c is None or not ev["t"] <= c[2] < ev["yellow_end"] for c in got):
                continue
            first = min(c[0] for c in got)
            last_clear = max(c[1] for c in got)
            out.append(ReleaseEpisode(ev["iid"], lane, ev["t"], len(vids), last_clear - first, first))
    return out


def calibrate(
    events: Iterable[dict],
    delta: float = 1.0,
    rules: tuple[AdjustRule, ...] = DEFAULT_RULES,
) -> HeraldTable:
    """Fit the monotone release-time map and mean egress time from an event log."""
    events = list(events)
    episodes = release_episodes(events)
    if not episodes:
        raise CalibrationError("event log contains no complete release episode")
    by_q: dict[int, list[float]] = defaultdict(list)
    for ep in episodes:
        by_q[ep.queue_length].append(ep.release_time)
    qs = sorted(by_q)
    means = [sum(by_q[q]) / len(by_q[q]) for q in qs]
    fitted = isotonic_fit(qs, means, [len(by_q[q]) for q in qs])
    knots = ((0.0, 0.0),) + tuple((float(q), r) for q, r in zip(qs, fitted))
    tau = sum(ep.release_time for ep in episodes) / sum(ep.queue_length for ep in episodes)

    length = None
    for ev in events:
        if ev.get("type") == "meta":
            length = ev["params"]["length"]
            break
    v_obs = 0.0
    if length is not None:
        for ev in events:
            if ev.get("type") == "cross" and ev["clear"] > ev["time"]:
                v_obs = max(v_obs, length / (ev["clear"] - ev["time"]))
    return HeraldTable(knots=knots, tau=tau, delta=delta, rules=tuple(rules), v_max_observed=v_obs)

