"""Grid road network, lanes, phases and the (phase, duration) action space."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator

MAX_DURATION = 40.0
YELLOW = 3
ALL_RED = 2
CLEARANCE = YELLOW + ALL_RED

DIRECTIONS = ("N", "E", "S", "W")
MOVEMENTS = ("L", "S", "R")

# heading (dr, dc) of traffic arriving from each approach
_HEADING = {"N": (1, 0), "S": (-1, 0), "E": (0, -1), "W": (0, 1)}
# approach at the downstream intersection for a given heading
_APPROACH_FOR_HEADING = {(1, 0): "N", (-1, 0): "S", (0, -1): "E", (0, 1): "W"}


class Phase(enum.IntEnum):
    P1 = 1
    P2 = 2
    P3 = 3
    P4 = 4

    @property
    def token(self) -> str:
        return PHASE_TOKENS[self]

    @classmethod
    def from_token(cls, token: str) -> "Phase":
        return TOKEN_PHASES[token]

    @classmethod
    def parse(cls, value: "Phase | str | int") -> "Phase":
        if isinstance(value, Phase):
            return value
        if isinstance(value, int):
            return cls(value)
        if value in TOKEN_PHASES:
            return TOKEN_PHASES[value]
        return cls[value]


PHASE_TOKENS = {Phase.P1: "NTST", Phase.P2: "NLSL", Phase.P3: "ETWT", Phase.P4: "ELWL"}
TOKEN_PHASES = {tok: ph for ph, tok in PHASE_TOKENS.items()}

PHASE_MOVEMENTS: dict[Phase, frozenset[tuple[str, str]]] = {
    Phase.P1: frozenset({("N", "S"), ("S", "S")}),
    Phase.P2: frozenset({("N", "L"), ("S", "L")}),
    Phase.P3: frozenset({("E", "S"), ("W", "S")}),
    Phase.P4: frozenset({("E", "L"), ("W", "L")}),
}
MOVEMENT_PHASE = {mv: ph for ph, mvs in PHASE_MOVEMENTS.items() for mv in mvs}


def turn(approach: str, movement: str) -> tuple[int, int]:
    """Heading after taking `movement` from `approach`, as a (drow, dcol) step."""
    dr, dc = _HEADING[approach]
    if movement == "S":
        return dr, dc
    if movement == "L":
        # left of heading south (1,0) is east (0,1)
        return -dc, dr
    if movement == "R":
        return dc, -dr
    raise ValueError(f"unknown movement {movement!r}")


class InvalidArgument(ValueError):
    pass


class NotFound(KeyError):
    pass


@dataclass(frozen=True)
class SignalAction:
    phase: Phase
    duration: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "phase", Phase.parse(self.phase))

    def render(self) -> str:
        d = int(self.duration) if float(self.duration).is_integer() else self.duration
        return f"<signal>{self.phase.token}</signal><duration>{d}</duration>"

    def to_dict(self) -> dict:
        return {"phase": self.phase.token, "duration": self.duration}

    @classmethod
    def from_dict(cls, d: dict) -> "SignalAction":
        return cls(Phase.parse(d["phase"]), d["duration"])


@dataclass(frozen=True)
class Violation:
    """Why an action is outside the action space."""

    kind: str  # invalid-phase | constraint-violation
    message: str


def validate_action(action: SignalAction) -> Violation | None:
    """Return None for a legal action, else a descriptor naming the broken bound."""
    phase = action.phase
    if not isinstance(phase, Phase):
        try:
            Phase.parse(phase)
        except (KeyError, ValueError):
            return Violation("invalid-phase", f"unknown phase {phase!r}")
    d = action.duration
    if not isinstance(d, (int, float)) or d != d:
        return Violation("constraint-violation", f"duration {d!r} is not a number")
    if not d > 0:
        return Violation("constraint-violation", f"duration {d} not > 0")
    if d > MAX_DURATION:
        return Violation("constraint-violation", f"duration {d} > {MAX_DURATION:g}")
    return None


@dataclass(frozen=True)
class Lane:
    id: str
    index: int
    segment: str
    movement: str  # L/S/R; exit lanes use S
    length: float
    # intersection whose stop line ends this lane, None for exit lanes
    intersection: int | None
    approach: str | None


@dataclass(frozen=True)
class RoadSegment:
    id: str
    length: float
    # None marks a boundary source (upstream) or sink (downstream)
    upstream: int | None
    downstream: int | None
    lanes: tuple[str, str, str]


@dataclass(frozen=True)
class Intersection:
    id: int
    row: int
    col: int
    # approach -> incoming segment id
    incoming: dict[str, str]
    # heading direction name -> outgoing segment id
    outgoing: dict[str, str]

    @property
    def boundary(self) -> bool:
        return any(seg.startswith("src") for seg in self.incoming.values())


@dataclass(frozen=True)
class Network:
    grid_dims: tuple[int, int]
    intersections: tuple[Intersection, ...]
    segments: tuple[RoadSegment, ...]
    lanes: tuple[Lane, ...]
    _lane_index: dict[str, Lane] = field(repr=False, compare=False, default_factory=dict)
    _segment_index: dict[str, RoadSegment] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self) -> None:
        self._lane_index.update({ln.id: ln for ln in self.lanes})
        self._segment_index.update({s.id: s for s in self.segments})

    def lane(self, lane_id: str) -> Lane:
        try:
            return self._lane_index[lane_id]
        except KeyError:
            raise NotFound(f"unknown lane {lane_id!r}") from None

    def segment(self, seg_id: str) -> RoadSegment:
        try:
            return self._segment_index[seg_id]
        except KeyError:
            raise NotFound(f"unknown segment {seg_id!r}") from None

    def intersection(self, iid: int) -> Intersection:
        if not isinstance(iid, int) or not 0 <= iid < len(self.intersections):
            raise NotFound(f"unknown intersection {iid!r}")
        return self.intersections[iid]

    def at(self, row: int, col: int) -> Intersection | None:
        rows, cols = self.grid_dims
        if 0 <= row < rows and 0 <= col < cols:
            return self.intersections[row * cols + col]
        return None

    def incoming_lanes(self, iid: int) -> list[str]:
        inter = self.intersection(iid)
        return [f"{inter.incoming[d]}_{m}" for d in DIRECTIONS for m in MOVEMENTS]

    def approach_lane(self, iid: int, approach: str, movement: str) -> str:
        return f"{self.intersection(iid).incoming[approach]}_{movement}"

    def downstream_segment(self, iid: int, approach: str, movement: str) -> str:
        inter = self.intersection(iid)
        heading = turn(approach, movement)
        return inter.outgoing[_HEADING_NAME[heading]]

    def sources(self) -> Iterator[tuple[int, str]]:
        """Boundary source approaches as (intersection id, approach)."""
        for inter in self.intersections:
            for d in DIRECTIONS:
                if inter.incoming[d].startswith("src"):
                    yield inter.id, d

    def route_lanes(self, origin: tuple[int, str], turns: list[str]) -> list[str]:
        """Lane sequence for a vehicle entering at `origin` and turning per `turns`.

        One turn per intersection crossed; the final turn must leave the grid.
        """
        iid, approach = origin
        inter = self.intersection(iid)
        if not inter.incoming.get(approach, "").startswith("src"):
            raise InvalidArgument(f"origin {origin} is not a boundary source")
        if not turns:
            raise InvalidArgument("route needs at least one turn")
        lanes = []
        for k, mv in enumerate(turns):
            if mv not in MOVEMENTS:
                raise InvalidArgument(f"unknown turn {mv!r}")
            lanes.append(f"{inter.incoming[approach]}_{mv}")
            dr, dc = turn(approach, mv)
            nxt = self.at(inter.row + dr, inter.col + dc)
            last = k == len(turns) - 1
            if nxt is None:
                if not last:
                    raise InvalidArgument(f"route leaves the grid after turn {k}")
                lanes.append(f"{inter.outgoing[_HEADING_NAME[(dr, dc)]]}_S")
            elif last:
                raise InvalidArgument("route ends inside the grid")
            else:
                inter, approach = nxt, _APPROACH_FOR_HEADING[(dr, dc)]
        return lanes

    def to_dict(self) -> dict:
        return {
            "grid_dims": list(self.grid_dims),
            "intersections": [
                {"id": i.id, "row": i.row, "col": i.col, "incoming": i.incoming, "outgoing": i.outgoing}
                for i in self.intersections
            ],
            "segments": [
                {"id": s.id, "length": s.length, "upstream": s.upstream, "downstream": s.downstream}
                for s in self.segments
            ],
        }


_HEADING_NAME = {(1, 0): "S", (-1, 0): "N", (0, 1): "E", (0, -1): "W"}


def build_grid_network(rows: int, cols: int, segment_length: float = 300.0) -> Network:
    """Row-major grid; row 0 is the northern edge.

    Each intersection owns its four incoming segments (``in_<id>_<approach>``
    or ``src_<id>_<approach>`` on the boundary). Traffic leaving the grid
    uses ``exit_<id>_<heading>`` sink segments.
    """
    if not isinstance(rows, int) or not isinstance(cols, int) or rows < 1 or cols < 1:
        raise InvalidArgument(f"grid dims must be positive integers, got {(rows, cols)}")
    if not segment_length > 0:
        raise InvalidArgument(f"segment_length must be > 0, got {segment_length}")
    length = float(segment_length)

    def nid(r: int, c: int) -> int | None:
        return r * cols + c if 0 <= r < rows and 0 <= c < cols else None

    intersections = []
    segments: list[RoadSegment] = []
    lanes: list[Lane] = []

    def add_segment(seg_id: str, up: int | None, down: int | None, approach: str | None) -> None:
        lane_ids = tuple(f"{seg_id}_{m}" for m in MOVEMENTS)
        segments.append(RoadSegment(seg_id, length, up, down, lane_ids))
        for m, lid in zip(MOVEMENTS, lane_ids):
            lanes.append(Lane(lid, len(lanes), seg_id, m, length, down, approach))

    for r in range(rows):
        for c in range(cols):
            i = nid(r, c)
            incoming, outgoing = {}, {}
            for d in DIRECTIONS:
                dr, dc = _HEADING[d]
                up = nid(r - dr, c - dc)
                seg = f"{'in' if up is not None else 'src'}_{i}_{d}"
                incoming[d] = seg
                add_segment(seg, up, i, d)
            for (dr, dc), name in _HEADING_NAME.items():
                down = nid(r + dr, c + dc)
                if down is None:
                    seg = f"exit_{i}_{name}"
                    add_segment(seg, i, None, None)
                else:
                    seg = f"in_{down}_{_APPROACH_FOR_HEADING[(dr, dc)]}"
                outgoing[name] = seg
            intersections.append(Intersection(i, r, c, incoming, outgoing))

    return Network((rows, cols), tuple(intersections), tuple(segments), tuple(lanes))


def phase_lanes(network: Network, intersection_id: int, phase: Phase | str | int) -> set[str]:
    """The two signalized incoming lanes served by `phase`."""
    try:
        ph = Phase.parse(phase)
    except (KeyError, ValueError):
        raise NotFound(f"unknown phase {phase!r}") from None
    inter = network.intersection(intersection_id)
    return {f"{inter.incoming[d]}_{m}" for d, m in PHASE_MOVEMENTS[ph]}


def phase_lane_pairs(network: Network, intersection_id: int) -> dict[Phase, tuple[str, str]]:
    """Ordered (first, second) lane per phase, N/E approach first."""
    inter = network.intersection(intersection_id)
    return {
        Phase.P1: (f"{inter.incoming['N']}_S", f"{inter.incoming['S']}_S"),
        Phase.P2: (f"{inter.incoming['N']}_L", f"{inter.incoming['S']}_L"),
        Phase.P3: (f"{inter.incoming['E']}_S", f"{inter.incoming['W']}_S"),
        Phase.P4: (f"{inter.incoming['E']}_L", f"{inter.incoming['W']}_L"),
    }
