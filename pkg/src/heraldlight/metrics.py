"""ATT / AQL / AWT, hallucination rate and action-distribution reports from event logs."""

from __future__ import annotations

import csv
import io
import json
from bisect import bisect_right
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .netmodel import PHASE_TOKENS, Phase, SignalAction

VEHICLE_SPACE = 7.5
CSV_FIELDS = ("scenario", "controller", "seed", "att", "aql_veh", "aql_m", "awt", "hallucination_rate")
CENSORING_NOTE = "unfinished trips contribute (horizon - enter) to ATT"


@dataclass
class MetricsReport:
    att: float = 0.0
    aql_veh: float = 0.0
    aql_m: float = 0.0
    awt: float = 0.0
    vehicles: int = 0
    finished: int = 0
    horizon: float = 0.0
    phase_counts: dict[str, int] = field(default_factory=dict)
    duration_ecdf: list[tuple[float, float]] = field(default_factory=list)
    decisions: int = 0
    hallucinations: int = 0
    hallucination_rate: float = 0.0
    flag_counts: dict[str, int] = field(default_factory=dict)
    empty: bool = False
    note: str = CENSORING_NOTE

    def to_json(self) -> str:
        d = asdict(self)
        d["duration_ecdf"] = [list(p) for p in self.duration_ecdf]
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    def csv_row(self, scenario: str, controller: str, seed: int) -> dict:
        return {
            "scenario": scenario,
            "controller": controller,
            "seed": seed,
            "att": f"{self.att:.6f}",
            "aql_veh": f"{self.aql_veh:.6f}",
            "aql_m": f"{self.aql_m:.6f}",
            "awt": f"{self.awt:.6f}",
            "hallucination_rate": f"{self.hallucination_rate:.6f}",
        }


def metrics_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def hallucination_rate(records_or_flagged, total: int | None = None) -> float:
    """Flagged / total decisions; accepts records or a (flagged, total) count pair."""
    if total is not None:
        flagged = int(records_or_flagged)
    else:
        recs = list(records_or_flagged)
        total = len(recs)
        flagged = sum(1 for r in recs if r.hallucination_flags)
    return flagged / total if total else 0.0


def duration_ecdf(actions: Sequence[SignalAction | float]) -> list[tuple[float, float]]:
    durations = sorted(a.duration if isinstance(a, SignalAction) else a for a in actions)
    n = len(durations)
    out = []
    for d in sorted(set(durations)):
        out.append((d, bisect_right(durations, d) / n))
    return out


def compute_metrics(
    events: Iterable[dict],
    horizon: float | None = None,
    vehicle_space: float = VEHICLE_SPACE,
    records: Sequence | None = None,
) -> MetricsReport:
    enter: dict[int, float] = {}
    done: dict[int, tuple[float, float]] = {}
    unfinished_wait: dict[int, float] = {}
    ticks: dict[int, int] = {}
    greens: list[tuple[int, int, str, float]] = []
    for ev in events:
        kind = ev.get("type")
        if kind == "spawn":
            enter[ev["vid"]] = float(ev["t"])
        elif kind == "exit":
            done[ev["vid"]] = (float(ev["t"]), float(ev["wait"]))
            enter.setdefault(ev["vid"], float(ev["enter"]))
        elif kind == "unfinished":
            unfinished_wait[ev["vid"]] = float(ev["wait"])
            enter.setdefault(ev["vid"], float(ev["enter"]))
        elif kind == "tick":
            ticks[ev["t"]] = ev["queued"]
        elif kind == "signal" and ev.get("mode") == "green":
            greens.append((ev["t"], ev["iid"], ev["phase"], ev["duration"]))
        elif kind == "meta" and horizon is None:
            horizon = float(ev["horizon"])

    report = MetricsReport(horizon=float(horizon or 0.0))
    if records is not None:
        report.decisions = len(records)
        report.hallucinations = sum(1 for r in records if r.hallucination_flags)
        report.hallucination_rate = hallucination_rate(report.hallucinations, report.decisions)
        report.flag_counts = dict(sorted(Counter(f for r in records for f in r.hallucination_flags).items()))
    greens.sort()
    counts = Counter(p for _, _, p, _ in greens)
    report.phase_counts = {tok: counts.get(tok, 0) for tok in (PHASE_TOKENS[p] for p in Phase)}
    report.duration_ecdf = duration_ecdf([d for *_, d in greens])

    if not enter:
        report.empty = True
        return report
    h = report.horizon
    travel, waits = [], []
    for vid in sorted(enter):
        if vid in done:
            t_exit, w = done[vid]
            travel.append(t_exit - enter[vid])
        else:
            travel.append(h - enter[vid])
            w = unfinished_wait.get(vid, 0.0)
        waits.append(w)
    report.vehicles = len(enter)
    report.finished = len(done)
    report.att = sum(travel) / len(travel)
    report.awt = sum(waits) / len(waits)
    in_window = [q for t, q in sorted(ticks.items()) if t < h]
    report.aql_veh = sum(in_window) / len(in_window) if in_window else 0.0
    report.aql_m = report.aql_veh * vehicle_space
    return report
