"""Deterministic 1 s-tick grid microsimulator.

Vehicles follow a single-lane safe-speed car-following rule: accelerate by
``a_max`` up to ``v_max`` but never faster than a speed from which they can
stop (braking at ``b_max``) behind the leader's stopping point, a red stop
line or the tail of a full downstream lane. Lanes never change after spawn.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .netmodel import (
    ALL_RED,
    MOVEMENT_PHASE,
    PHASE_MOVEMENTS,
    YELLOW,
    InvalidArgument,
    Network,
    Phase,
    SignalAction,
    phase_lane_pairs,
    validate_action,
)

V_STOP = 0.1
DT = 1


@dataclass(frozen=True)
class VehicleParams:
    v_max: float = 11.0
    a_max: float = 2.0
    b_max: float = 4.5
    length: float = 5.0
    min_gap: float = 2.5
    startup_loss: float = 1.0

    def __post_init__(self) -> None:
        for name in ("v_max", "a_max", "b_max", "length", "min_gap", "startup_loss"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"VehicleParams.{name} must be > 0")

    @property
    def space(self) -> float:
        return self.length + self.min_gap


@dataclass(frozen=True)
class WeatherProfile:
    name: str = "base"
    accel: float = 1.0
    decel: float = 1.0
    speed: float = 1.0


BASE = WeatherProfile()
# 50% less acceleration, 30% less braking, 30% lower top speed
EXTREME = WeatherProfile("extreme", accel=0.5, decel=0.7, speed=0.7)
WEATHER = {"base": BASE, "extreme": EXTREME}


def apply_weather(params: VehicleParams, profile: WeatherProfile) -> VehicleParams:
    for name in ("accel", "decel", "speed"):
        m = getattr(profile, name)
        if not 0 < m <= 1:
            raise InvalidArgument(f"weather multiplier {name}={m} outside (0, 1]")
    return replace(
        params,
        a_max=params.a_max * profile.accel,
        b_max=params.b_max * profile.decel,
        v_max=params.v_max * profile.speed,
    )


@dataclass(frozen=True)
class FlowEntry:
    """Vehicles entering at boundary `origin` every 1/rate seconds in [start, end)."""

    origin: tuple[int, str]
    turns: tuple[str, ...]
    rate: float
    start: float = 0.0
    end: float = math.inf

    def to_dict(self) -> dict:
        d = {"origin": list(self.origin), "turns": "".join(self.turns), "rate": self.rate, "start": self.start}
        if math.isfinite(self.end):
            d["end"] = self.end
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FlowEntry":
        unknown = set(d) - {"origin", "turns", "rate", "start", "end"}
        if unknown:
            raise InvalidArgument(f"unknown flow fields {sorted(unknown)}")
        return cls(
            (int(d["origin"][0]), str(d["origin"][1])),
            tuple(d["turns"]),
            float(d["rate"]),
            float(d.get("start", 0.0)),
            float(d.get("end", math.inf)),
        )


@dataclass(slots=True)
class Vehicle:
    id: int
    route: tuple[int, ...]
    enter_time: float
    leg: int = 0
    position: float = 0.0
    speed: float = 0.0
    exit_time: float | None = None
    wait: float = 0.0
    committed: int = -1  # tick until which a yellow crossing is allowed


@dataclass(frozen=True)
class SignalState:
    active_phase: Phase | None
    mode: str  # green | yellow | all-red
    mode_end: float
    decision_due: float


@dataclass(frozen=True)
class Observation:
    intersection_id: int
    sim_time: int
    queued: dict[str, int]
    running: dict[str, tuple[tuple[float, float], ...]]
    signal: SignalState
    lane_pairs: dict[Phase, tuple[str, str]]
    downstream_queued: dict[str, float] = field(default_factory=dict)

    def phase_queues(self) -> dict[Phase, tuple[int, int]]:
        return {ph: (self.queued[a], self.queued[b]) for ph, (a, b) in self.lane_pairs.items()}


@dataclass
class _Signal:
    phase: Phase | None = None
    green_start: float = 0.0
    green_end: float = 0.0
    yellow_end: float = 0.0
    due: float = 0.0

    def mode(self, t: int) -> str:
        if self.phase is None or t >= self.yellow_end:
            return "all-red"
        if t < self.green_end:
            return "green"
        return "yellow"

    def state(self, t: int) -> SignalState:
        mode = self.mode(t)
        end = {"green": self.green_end, "yellow": self.yellow_end}.get(mode, self.due)
        return SignalState(self.phase, mode, end, self.due)


def spawn_schedule(flows: Iterable[FlowEntry], horizon: float, rng: np.random.Generator) -> list[tuple[float, int]]:
    """Deterministic (time, flow index) arrivals: fixed headway, seeded phase offset."""
    out = []
    for k, f in enumerate(flows):
        if not f.rate > 0:
            raise InvalidArgument(f"flow {k} rate must be > 0")
        headway = 1.0 / f.rate
        t = f.start + float(rng.uniform(0.0, headway))
        stop = min(f.end, horizon)
        while t < stop:
            out.append((t, k))
            t += headway
    out.sort()
    return out


class Simulation:
    """Mutable simulation state advanced by :meth:`step`."""

    def __init__(
        self,
        network: Network,
        flows: list[FlowEntry],
        params: VehicleParams = VehicleParams(),
        horizon: int = 3600,
        seed: int = 0,
    ):
        self.net = network
        self.params = params
        self.horizon = int(horizon)
        self.t = 0
        self.flows = list(flows)
        n = len(network.lanes)
        self._lane_ids = [ln.id for ln in network.lanes]
        self._lane_len = [ln.length for ln in network.lanes]
        self._lane_iid = [ln.intersection for ln in network.lanes]
        self._lane_move = [ln.movement for ln in network.lanes]
        self._lane_phase = [
            MOVEMENT_PHASE.get((ln.approach, ln.movement)) if ln.intersection is not None else None
            for ln in network.lanes
        ]
        self._lane_pos = {ln.id: ln.index for ln in network.lanes}
        self.lanes: list[list[Vehicle]] = [[] for _ in range(n)]
        self.signals = [_Signal() for _ in network.intersections]
        self.buffers: dict[int, deque[Vehicle]] = {}
        self.routes = [
            tuple(self._lane_pos[lid] for lid in network.route_lanes(f.origin, list(f.turns))) for f in self.flows
        ]
        rng = np.random.default_rng([seed, 0x5EED])
        self._schedule = deque(spawn_schedule(self.flows, self.horizon, rng))
        self.spawned = 0
        self.exited = 0
        self.events: list[dict] = []
        self.events.append(
            {
                "type": "meta",
                "t": 0,
                "grid": list(network.grid_dims),
                "horizon": self.horizon,
                "seed": seed,
                "params": {k: getattr(params, k) for k in VehicleParams.__dataclass_fields__},
            }
        )
        self._finished = False

    # -- signals -----------------------------------------------------------

    def is_due(self, iid: int, t: int | None = None) -> bool:
        t = self.t if t is None else t
        return math.ceil(self.signals[iid].due) == t

    def apply_signal(self, iid: int, action: SignalAction) -> None:
        """Start `action` now: green for its duration, then 3 s yellow and 2 s all-red."""
        bad = validate_action(action)
        if bad is not None:
            raise InvalidArgument(f"rejected action {action}: {bad.message}")
        sig = self.signals[iid]
        if self.t < math.ceil(sig.due):
            raise InvalidArgument(f"intersection {iid} not at a decision epoch (due {sig.due}, now {self.t})")
        t = self.t
        sig.phase = action.phase
        sig.green_start = t
        sig.green_end = t + action.duration
        sig.yellow_end = sig.green_end + YELLOW
        sig.due = sig.yellow_end + ALL_RED
        pairs = phase_lane_pairs(self.net, iid)
        queues = {}
        for lid in pairs[action.phase]:
            lane = self.lanes[self._lane_pos[lid]]
            queues[lid] = [v.id for v in lane if v.speed < V_STOP]
        self.events.append(
            {
                "type": "signal",
                "t": t,
                "iid": iid,
                "phase": action.phase.token,
                "mode": "green",
                "duration": action.duration,
                "green_end": sig.green_end,
                "yellow_end": sig.yellow_end,
                "due": sig.due,
                "queues": queues,
            }
        )

    def signal_state(self, iid: int) -> SignalState:
        return self.signals[iid].state(self.t)

    # -- observation -------------------------------------------------------

    def observe(self, iid: int) -> Observation:
        pairs = phase_lane_pairs(self.net, iid)
        queued, running = {}, {}
        for lid in self.net.incoming_lanes(iid):
            idx = self._lane_pos[lid]
            L = self._lane_len[idx]
            q, run = 0, []
            for v in self.lanes[idx]:
                if v.speed < V_STOP:
                    q += 1
                else:
                    run.append((L - v.position, v.speed))
            queued[lid] = q
            running[lid] = tuple(run)
        downstream = {}
        inter = self.net.intersection(iid)
        for ph, mvs in PHASE_MOVEMENTS.items():
            for approach, mv in mvs:
                lid = f"{inter.incoming[approach]}_{mv}"
                seg = self.net.segment(self.net.downstream_segment(iid, approach, mv))
                total = sum(
                    1 for l2 in seg.lanes for v in self.lanes[self._lane_pos[l2]] if v.speed < V_STOP
                )
                downstream[lid] = total / len(seg.lanes)
        return Observation(iid, self.t, queued, running, self.signal_state(iid), pairs, downstream)

    # -- dynamics ----------------------------------------------------------

    def _allowed(self, lane: int, v: Vehicle, t: int) -> bool:
        if self._lane_move[lane] == "R":
            return True
        sig = self.signals[self._lane_iid[lane]]
        if sig.phase is not self._lane_phase[lane]:
            return False
        mode = sig.mode(t)
        if mode == "green":
            return t >= sig.green_start + self.params.startup_loss or v.speed >= V_STOP
        if mode == "yellow":
            return v.committed >= t
        return False

    def _mark_committed(self, t: int) -> None:
        """At yellow onset, vehicles that cannot stop before the line may still cross."""
        p = self.params
        for iid, sig in enumerate(self.signals):
            if sig.phase is None or math.ceil(sig.green_end) != t:
                continue
            committed = []
            for lid in phase_lane_pairs(self.net, iid)[sig.phase]:
                idx = self._lane_pos[lid]
                L = self._lane_len[idx]
                for v in self.lanes[idx]:
                    if v.speed * v.speed / (2 * p.b_max) > L - v.position:
                        v.committed = math.ceil(sig.yellow_end) - 1
                        committed.append(v.id)
                    else:
                        break
            self.events.append(
                {"type": "signal", "t": t, "iid": iid, "phase": sig.phase.token, "mode": "yellow", "committed": committed}
            )

    def _free_space(self, lane: int) -> tuple[float, float]:
        """Distance from lane start to the tail's stopping point, and tail speed."""
        vs = self.lanes[lane]
        if not vs:
            return self._lane_len[lane] + self.params.space, self.params.v_max
        tail = vs[-1]
        return tail.position - self.params.space, tail.speed

    def _safe_speed(self, gap: float, leader_speed: float) -> float:
        b = self.params.b_max
        gap_eff = gap + leader_speed * leader_speed / (2 * b)
        if gap_eff <= 0:
            return 0.0
        return -b * DT + math.sqrt((b * DT) ** 2 + 2 * b * gap_eff)

    def spawn_vehicles(self, t: int) -> None:
        """Generate vehicles scheduled in [t, t+1) and admit buffered ones with room."""
        while self._schedule and self._schedule[0][0] < t + 1:
            _, k = self._schedule.popleft()
            route = self.routes[k]
            v = Vehicle(self.spawned, route, float(t))
            self.spawned += 1
            self.buffers.setdefault(route[0], deque()).append(v)
            self.events.append({"type": "spawn", "t": t, "vid": v.id, "lane": self._lane_ids[route[0]]})
        for lane, buf in self.buffers.items():
            while buf:
                free, _ = self._free_space(lane)
                if free < 0:
                    break
                # vehicles enter at standstill from the boundary
                v = buf.popleft()
                v.position = 0.0
                v.speed = 0.0
                self.lanes[lane].append(v)

    def step(self) -> None:
        """Advance one tick: spawn, move, transfer across stop lines, account."""
        if self._finished:
            raise RuntimeError("simulation already finalized")
        t = self.t
        p = self.params
        self._mark_committed(t)
        for iid, sig in enumerate(self.signals):
            if sig.phase is not None and math.ceil(sig.yellow_end) == t:
                self.events.append({"type": "signal", "t": t, "iid": iid, "phase": sig.phase.token, "mode": "all-red"})
        self.spawn_vehicles(t)

        transfers: list[tuple[int, Vehicle, float, float]] = []
        for lane, vs in enumerate(self.lanes):
            if not vs:
                continue
            L = self._lane_len[lane]
            is_exit = self._lane_iid[lane] is None
            lead_stop = math.inf
            lead_speed = 0.0
            keep = []
            for v in vs:
                # obstacle from the stop line / downstream lane
                if is_exit:
                    obstacle, obs_speed = math.inf, p.v_max
                elif self._allowed(lane, v, t):
                    nxt = v.route[v.leg + 1]
                    free, obs_speed = self._free_space(nxt)
                    obstacle = L + free
                else:
                    obstacle, obs_speed = L, 0.0
                if lead_stop < obstacle:
                    obstacle, obs_speed = lead_stop, lead_speed
                gap = max(0.0, obstacle - v.position)
                new_speed = min(v.speed + p.a_max * DT, p.v_max, self._safe_speed(gap, obs_speed), gap / DT)
                new_speed = max(0.0, new_speed)
                old = v.position
                # followers react to the leader's state at the start of the tick
                lead_stop = old - p.space
                lead_speed = v.speed
                v.position = old + new_speed * DT
                v.speed = new_speed
                if v.position > L or (is_exit and v.position >= L):
                    transfers.append((lane, v, old, L))
                else:
                    keep.append(v)
            if len(keep) != len(vs):
                vs[:] = keep

        held: dict[int, list[Vehicle]] = {}
        for lane, v, old, L in transfers:
            if self._lane_iid[lane] is None:
                v.exit_time = float(t + 1)
                self.exited += 1
                self.events.append({"type": "exit", "t": t + 1, "vid": v.id, "enter": v.enter_time, "wait": v.wait})
                continue
            nxt = v.route[v.leg + 1]
            free, _ = self._free_space(nxt)
            new_pos = v.position - L
            if free < 0 or lane in held:
                # downstream filled up this tick by another stream: hold at the line
                held.setdefault(lane, []).append(v)
                continue
            if new_pos > free:
                new_pos = free
            iid = self._lane_iid[lane]
            sig = self.signals[iid]
            self.events.append(
                {
                    "type": "cross",
                    "t": t,
                    "vid": v.id,
                    "iid": iid,
                    "lane": self._lane_ids[lane],
                    "move": self._lane_move[lane],
                    "mode": sig.mode(t),
                    "phase": sig.phase.token if sig.phase is not None else None,
                    "time": round(t + (L - old) / v.speed, 6),
                    "clear": round(t + (L + p.length - old) / v.speed, 6),
                }
            )
            v.leg += 1
            v.position = new_pos
            v.committed = -1
            self.lanes[nxt].append(v)
        for lane, hv in held.items():
            self._hold_at_line(lane, hv)

        queued = 0
        for lane, vs in enumerate(self.lanes):
            signalized = self._lane_iid[lane] is not None
            for v in vs:
                if v.speed < V_STOP:
                    queued += 1
                    if signalized:
                        v.wait += DT
        active = self.spawned - self.exited
        self.events.append({"type": "tick", "t": t, "queued": queued, "active": active})
        self.t = t + 1

    def _hold_at_line(self, lane: int, held: list[Vehicle]) -> None:
        vs = self.lanes[lane]
        vs[:0] = held
        limit = self._lane_len[lane] + self.params.space
        for u in vs:
            limit -= self.params.space
            if u.position > limit:
                u.position = max(limit, 0.0)
                u.speed = 0.0
            limit = u.position

    # -- accounting --------------------------------------------------------

    @property
    def active(self) -> int:
        return self.spawned - self.exited

    def on_network(self) -> int:
        return sum(len(vs) for vs in self.lanes)

    def vehicles(self) -> Iterable[Vehicle]:
        for vs in self.lanes:
            yield from vs
        for buf in self.buffers.values():
            yield from buf

    def finalize(self) -> list[dict]:
        """Append censoring records for unfinished trips; returns the event log."""
        if not self._finished:
            for v in sorted(self.vehicles(), key=lambda u: u.id):
                self.events.append({"type": "unfinished", "t": self.t, "vid": v.id, "enter": v.enter_time, "wait": v.wait})
            self._finished = True
        return self.events


def write_event_log(events: list[dict], path) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps(ev, sort_keys=True))
            fh.write("\n")


def read_event_log(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def event_log_hash(events: list[dict]) -> str:
    h = hashlib.sha256()
    for ev in events:
        h.update(json.dumps(ev, sort_keys=True).encode())
        h.update(b"\n")
    return h.hexdigest()
