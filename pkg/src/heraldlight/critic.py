"""Agent/critic correction loop: hallucination flags, preference pairs, score ranking loss."""

from __future__ import annotations

import json
import logging
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .llm import ChatClient, LLMError
from .netmodel import InvalidArgument, SignalAction
from .prompts import ParseFailure, parse_response, prompt_demands

log = logging.getLogger(__name__)

FLAGS = ("malformed", "invalid-phase", "constraint-violation", "repetitive", "incoherent", "transport-failure")
CORPUS_SCHEMA = {"schema": "heraldlight.corpus", "version": 1}
PREFERENCE_SCHEMA = {"schema": "heraldlight.preferences", "version": 1}

_REPEAT = re.compile(r"(.{20,}?)\1{2,}", re.S)


@dataclass(frozen=True)
class DecisionRecord:
    prompt: str
    raw_response: str
    parsed: SignalAction | ParseFailure
    executed: SignalAction
    hallucination_flags: frozenset[str]
    sim_time: int
    intersection_id: int
    # rule-based action used when the critic cannot supply a clean answer
    fallback: SignalAction | None = None

    @property
    def flagged(self) -> bool:
        return bool(self.hallucination_flags)

    @property
    def key(self) -> tuple[int, int]:
        return (self.sim_time, self.intersection_id)

    def to_dict(self) -> dict:
        if isinstance(self.parsed, SignalAction):
            parsed = self.parsed.to_dict()
        else:
            parsed = {"failure": self.parsed.kind, "message": self.parsed.message}
        return {
            "time": self.sim_time,
            "intersection": self.intersection_id,
            "prompt": self.prompt,
            "raw_response": self.raw_response,
            "parsed": parsed,
            "executed": self.executed.to_dict(),
            "flags": sorted(self.hallucination_flags),
            "fallback": self.fallback.to_dict() if self.fallback is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionRecord":
        p = d["parsed"]
        parsed = ParseFailure(p["failure"], p["message"]) if "failure" in p else SignalAction.from_dict(p)
        return cls(
            prompt=d["prompt"],
            raw_response=d["raw_response"],
            parsed=parsed,
            executed=SignalAction.from_dict(d["executed"]),
            hallucination_flags=frozenset(d["flags"]),
            sim_time=d["time"],
            intersection_id=d["intersection"],
            fallback=SignalAction.from_dict(d["fallback"]) if d.get("fallback") else None,
        )


def detect_hallucination(prompt: str, raw_response: str, parsed: SignalAction | ParseFailure) -> frozenset[str]:
    flags = set()
    if isinstance(parsed, ParseFailure):
        flags.add(parsed.kind)
    if isinstance(raw_response, str) and _REPEAT.search(raw_response):
        flags.add("repetitive")
    if isinstance(parsed, SignalAction):
        by_source = prompt_demands(prompt)
        if by_source and all(
            q.get(parsed.phase, 0) == 0 and any(v > 0 for ph, v in q.items() if ph != parsed.phase)
            for q in by_source.values()
        ):
            flags.add("incoherent")
    return frozenset(flags)


# -- critic corrections -----------------------------------------------------


@dataclass(frozen=True)
class Correction:
    text: str
    action: SignalAction
    synthetic: bool
    attempts: int


def critic_prompt(prompt: str, record: DecisionRecord) -> str:
    flags = ", ".join(sorted(record.hallucination_flags)) or "none"
    return (
        "You review traffic-signal decisions made by another model.\n"
        "The original decision prompt follows between the markers.\n"
        "=== PROMPT ===\n"
        f"{prompt}\n"
        "=== END PROMPT ===\n"
        "The model answered:\n"
        f"{record.raw_response}\n"
        f"Detected problems: {flags}.\n"
        "Write a corrected final answer that follows every rule in the prompt.\n"
        "Answer with exactly one <signal>PHASE</signal><duration>SECONDS</duration> pair."
    )


def request_correction(
    critic: ChatClient | None,
    prompt: str,
    record: DecisionRecord,
    retries: int = 3,
) -> Correction:
    """Ask the critic for a clean answer; after `retries` bad answers use the record's fallback action."""
    attempts = 0
    if critic is not None:
        query = critic_prompt(prompt, record)
        for attempts in range(1, retries + 1):
            try:
                text = critic.complete(query)
            except LLMError as exc:
                log.warning("critic unreachable: %s", exc)
                break
            parsed = parse_response(text)
            if isinstance(parsed, SignalAction) and not detect_hallucination(prompt, text, parsed):
                return Correction(text, parsed, False, attempts)
    fallback = record.fallback or record.executed
    return Correction(fallback.render(), fallback, True, attempts)


# -- score-based ranking loss -----------------------------------------------


def mean_log_likelihood(token_logprobs: Sequence[float]) -> float:
    if len(token_logprobs) == 0:
        raise InvalidArgument("token_logprobs must be non-empty")
    return math.fsum(token_logprobs) / len(token_logprobs)


def score_loss(trajectories: Sequence[tuple[float, float]], beta: float = 0.1) -> float:
    """Ranking loss over (quality score, mean log-likelihood) trajectories.

    For every pair with q_i > q_j it adds exp(p_j - p_i) and
    exp(2 p* - 2 beta - p_i - p_j), where p* is the smallest likelihood among
    trajectories scored above q_j.
    """
    total = 0.0
    for qj, pj in trajectories:
        higher = [pk for qk, pk in trajectories if qk > qj]
        if not higher:
            continue
        p_star = min(higher)
        for qi, pi in trajectories:
            if qi > qj:
                total += math.exp(pj - pi) + math.exp(2 * p_star - 2 * beta - pi - pj)
    return math.log1p(total)


# -- datasets ---------------------------------------------------------------


@dataclass(frozen=True)
class PreferencePair:
    prompt: str
    trajectory_error: str
    trajectory_corrected: str
    q_error: float = 0.0
    q_corrected: float = 1.0
    logprobs: dict[str, list[float]] | None = None
    sim_time: int = 0
    intersection_id: int = 0
    synthetic: bool = False

    def __post_init__(self) -> None:
        if not self.q_corrected > self.q_error:
            raise InvalidArgument("corrected trajectory must outscore the erroneous one")

    def to_dict(self) -> dict:
        d = {
            "time": self.sim_time,
            "intersection": self.intersection_id,
            "prompt": self.prompt,
            "a1": self.trajectory_error,
            "a2": self.trajectory_corrected,
            "q1": self.q_error,
            "q2": self.q_corrected,
            "synthetic": self.synthetic,
        }
        if self.logprobs is not None:
            d["logprobs"] = self.logprobs
        return d

    def loss(self, beta: float = 0.1) -> float | None:
        if self.logprobs is None:
            return None
        p1 = mean_log_likelihood(self.logprobs["a1"])
        p2 = mean_log_likelihood(self.logprobs["a2"])
        return score_loss([(self.q_error, p1), (self.q_corrected, p2)], beta)


LogprobFn = Callable[[str, str], Sequence[float]]


def build_pairs(
    records: Iterable[DecisionRecord],
    corrections: dict[tuple[int, int], Correction],
    q_error: float = 0.0,
    q_corrected: float = 1.0,
    logprob_fn: LogprobFn | None = None,
) -> list[PreferencePair]:
    pairs = []
    for rec in sorted(records, key=lambda r: r.key):
        if not rec.flagged or rec.key not in corrections:
            continue
        corr = corrections[rec.key]
        lp = None
        if logprob_fn is not None:
            lp = {"a1": list(logprob_fn(rec.prompt, rec.raw_response)), "a2": list(logprob_fn(rec.prompt, corr.text))}
        pairs.append(
            PreferencePair(
                rec.prompt, rec.raw_response, corr.text, q_error, q_corrected, lp, rec.sim_time, rec.intersection_id, corr.synthetic
            )
        )
    return pairs


def _write_jsonl(path: Path, header: dict, rows: Iterable[dict]) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def emit_datasets(
    records: Sequence[DecisionRecord],
    corrections: dict[tuple[int, int], Correction],
    out_dir: str | os.PathLike,
    q_error: float = 0.0,
    q_corrected: float = 1.0,
    logprob_fn: LogprobFn | None = None,
) -> tuple[Path, Path, list[PreferencePair]]:
    """Write corpus.jsonl (every decision) and preferences.jsonl (corrected hallucinations)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ordered = sorted(records, key=lambda r: r.key)
    pairs = build_pairs(ordered, corrections, q_error, q_corrected, logprob_fn)
    corpus = out / "corpus.jsonl"
    prefs = out / "preferences.jsonl"
    _write_jsonl(corpus, CORPUS_SCHEMA, (r.to_dict() for r in ordered))
    _write_jsonl(prefs, PREFERENCE_SCHEMA, (p.to_dict() for p in pairs))
    return corpus, prefs, pairs


def read_jsonl(path) -> tuple[dict, list[dict]]:
    with open(path) as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    return rows[0], rows[1:]


def correction_to_dict(key: tuple[int, int], c: Correction) -> dict:
    return {"time": key[0], "intersection": key[1], "text": c.text, "action": c.action.to_dict(), "synthetic": c.synthetic, "attempts": c.attempts}


def correction_from_dict(d: dict) -> tuple[tuple[int, int], Correction]:
    return (d["time"], d["intersection"]), Correction(d["text"], SignalAction.from_dict(d["action"]), d["synthetic"], d["attempts"])


@dataclass
class EpisodeOutcome:
    records: list[DecisionRecord]
    corrections: dict[tuple[int, int], Correction]
    pairs: list[PreferencePair]
    metrics: object
    loss: float | None
    paths: tuple[Path, Path] | None = None
    extra: dict = field(default_factory=dict)


def run_algorithm1(
    scenario,
    agent: ChatClient,
    critic: ChatClient | None,
    episodes: int = 1,
    out_dir: str | os.PathLike | None = None,
    logprob_fn: LogprobFn | None = None,
    beta: float = 0.1,
    q_error: float = 0.0,
    q_corrected: float = 1.0,
    retries: int = 3,
) -> list[EpisodeOutcome]:
    """Simulate with the llm agent, correct flagged decisions, emit datasets, report the ranking loss.

    Model fine-tuning itself happens outside this package; the loss is reported
    for the emitted pairs when token log-probabilities are supplied.
    """
    from .controllers import LLMController
    from .experiment import run_episode

    outcomes = []
    for ep in range(episodes):
        controller = LLMController(agent, scenario.llm.max_in_flight if scenario.llm else 1)
        result = run_episode(scenario, controller, seed_offset=ep)
        records = controller.records
        corrections = {
            rec.key: request_correction(critic, rec.prompt, rec, retries) for rec in records if rec.flagged
        }
        paths = None
        if out_dir is not None:
            corpus, prefs, pairs = emit_datasets(
                records, corrections, Path(out_dir) / f"episode_{ep:03d}", q_error, q_corrected, logprob_fn
            )
            paths = (corpus, prefs)
        else:
            pairs = build_pairs(records, corrections, q_error, q_corrected, logprob_fn)
        losses = [p.loss(beta) for p in pairs]
        loss = None
        if logprob_fn is not None:
            loss = math.fsum(losses) / len(losses) if losses else 0.0
        outcomes.append(EpisodeOutcome(records, corrections, pairs, result.metrics, loss, paths))
    return outcomes
