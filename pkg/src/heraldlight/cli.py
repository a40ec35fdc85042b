"""Command-line driver: presets, calibration, closed-loop runs, report and dataset re-rendering."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from .config import (
    CONTROLLER_KINDS,
    PRESETS,
    ConfigError,
    ScenarioConfig,
    load_config,
    preset,
)
from .critic import (
    DecisionRecord,
    correction_from_dict,
    correction_to_dict,
    emit_datasets,
    read_jsonl,
    request_correction,
)
from .experiment import probe_calibrate, run_episode
from .herald import CalibrationError, HeraldTable
from .llm import ChatClient, HTTPChatClient, ReplayClient
from .metrics import MetricsReport, compute_metrics, metrics_csv
from .microsim import WEATHER, read_event_log, write_event_log

log = logging.getLogger("heraldlight")

EVENTS = "events.jsonl"
REPORT = "report.json"
METRICS = "metrics.csv"
DECISIONS = "decisions.jsonl"
CORRECTIONS = "corrections.jsonl"
SCENARIO = "scenario.json"
TABLE = "herald_table.json"


@dataclass
class RunArtifacts:
    report: MetricsReport
    out_dir: Path | None
    table: HeraldTable


def render_report(scenario: ScenarioConfig, events: list[dict], records: list[DecisionRecord] | None) -> tuple[str, str]:
    """report.json and metrics.csv text; a pure function of the logs."""
    report = compute_metrics(events, scenario.horizon, scenario.vehicle.space, records)
    row = report.csv_row(scenario.name, scenario.controller.kind, scenario.seed)
    return report.to_json(), metrics_csv([row])


def _write_lines(path: Path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _agent_client(scenario: ScenarioConfig, replay: str | None) -> ChatClient:
    path = replay or (scenario.llm.replay if scenario.llm else None)
    if path:
        return ReplayClient(path)
    if scenario.llm is None:
        raise ConfigError("$.llm: the llm controller needs an endpoint or a replay file (--replay)")
    return HTTPChatClient(scenario.llm.endpoint)


def _critic_client(scenario: ScenarioConfig, critic_replay: str | None) -> ChatClient | None:
    path = critic_replay or (scenario.llm.critic_replay if scenario.llm else None)
    if path:
        return ReplayClient(path)
    if scenario.llm is not None and scenario.llm.critic is not None:
        return HTTPChatClient(scenario.llm.critic)
    return None


def run_experiment(
    scenario: ScenarioConfig,
    out_dir: str | Path | None = None,
    *,
    client: ChatClient | None = None,
    critic: ChatClient | None = None,
    replay: str | None = None,
    critic_replay: str | None = None,
) -> RunArtifacts:
    """One closed-loop run; writes logs, report, metrics and (llm only) datasets to `out_dir`."""
    table = scenario.herald_table() if (scenario.herald.table or scenario.herald.table_path) else None
    if table is None:
        log.info("no herald table configured; calibrating from a fixed-time probe run")
        try:
            table = probe_calibrate(scenario)
        except CalibrationError as exc:
            log.warning("probe calibration failed (%s); using the default table", exc)
            table = HeraldTable()

    controller = None
    if scenario.controller.kind == "llm":
        from .controllers import LLMController

        agent = client or _agent_client(scenario, replay)
        controller = LLMController(agent, scenario.llm.max_in_flight if scenario.llm else 1)
    result = run_episode(scenario, controller, table=table)
    records = result.records if scenario.controller.kind == "llm" else None
    report_text, csv_text = render_report(scenario, result.events, records)

    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / SCENARIO).write_text(scenario.to_json())
        table.save(out / TABLE)
        write_event_log(result.events, out / EVENTS)
        (out / REPORT).write_text(report_text)
        (out / METRICS).write_text(csv_text)
        if records is not None:
            _write_lines(out / DECISIONS, (r.to_dict() for r in records))
            critic = critic or _critic_client(scenario, critic_replay)
            corrections = {r.key: request_correction(critic, r.prompt, r) for r in records if r.flagged}
            _write_lines(out / CORRECTIONS, (correction_to_dict(k, c) for k, c in sorted(corrections.items())))
            emit_datasets(records, corrections, out)
    if records:
        log.info("decisions=%d hallucinations=%d", result.metrics.decisions, result.metrics.hallucinations)
    return RunArtifacts(result.metrics, out, table)


def _read_records(run_dir: Path) -> list[DecisionRecord] | None:
    path = run_dir / DECISIONS
    if not path.exists():
        return None
    with open(path) as fh:
        return [DecisionRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def rerender_report(run_dir: str | Path) -> tuple[str, str]:
    run_dir = Path(run_dir)
    scenario = load_config(run_dir / SCENARIO)
    return render_report(scenario, read_event_log(run_dir / EVENTS), _read_records(run_dir))


# -- argparse -----------------------------------------------------------------


def _apply_overrides(scenario: ScenarioConfig, args: argparse.Namespace) -> ScenarioConfig:
    changes = {}
    if getattr(args, "controller", None):
        changes["controller"] = replace(scenario.controller, kind=args.controller)
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "weather", None):
        changes["weather"] = args.weather
    if getattr(args, "table", None):
        changes["herald"] = replace(scenario.herald, table=None, table_path=args.table)
    return replace(scenario, **changes) if changes else scenario


def _cmd_gen_scenario(args) -> int:
    scenario = preset(args.preset, horizon=args.horizon, seed=args.seed or 0, demand_scale=args.demand_scale)
    scenario = _apply_overrides(scenario, argparse.Namespace(controller=args.controller, weather=args.weather))
    text = scenario.to_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_calibrate(args) -> int:
    scenario = _apply_overrides(load_config(args.config), args)
    table = probe_calibrate(scenario, episodes=args.episodes, green=args.green)
    if args.out:
        table.save(args.out)
    else:
        sys.stdout.write(json.dumps(table.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0


def _cmd_run(args) -> int:
    scenario = _apply_overrides(load_config(args.config), args)
    art = run_experiment(scenario, args.out, replay=args.replay, critic_replay=args.critic_replay)
    r = art.report
    print(f"ATT={r.att:.3f} s  AQL={r.aql_veh:.3f} veh  AWT={r.awt:.3f} s  vehicles={r.vehicles} finished={r.finished}")
    if scenario.controller.kind == "llm":
        print(f"hallucination rate {r.hallucination_rate:.4%} ({r.hallucinations}/{r.decisions})")
    return 0


def _cmd_report(args) -> int:
    report_text, csv_text = rerender_report(args.run_dir)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / REPORT).write_text(report_text)
        (out / METRICS).write_text(csv_text)
    else:
        sys.stdout.write(report_text)
    return 0


def _cmd_dataset(args) -> int:
    run_dir = Path(args.run_dir)
    records = _read_records(run_dir)
    if records is None:
        raise ConfigError(f"{run_dir / DECISIONS}: no decision log (was the run made with the llm controller?)")
    corrections = {}
    if (run_dir / CORRECTIONS).exists():
        with open(run_dir / CORRECTIONS) as fh:
            corrections = dict(correction_from_dict(json.loads(line)) for line in fh if line.strip())
    else:
        scenario = load_config(run_dir / SCENARIO)
        critic = _critic_client(scenario, args.critic_replay)
        corrections = {r.key: request_correction(critic, r.prompt, r) for r in records if r.flagged}
    corpus, prefs, pairs = emit_datasets(records, corrections, args.out or run_dir)
    _, rows = read_jsonl(corpus)
    print(f"{len(rows)} corpus rows -> {corpus}")
    print(f"{len(pairs)} preference pairs -> {prefs}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="heraldlight", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scenario", help="emit a preset ScenarioConfig as JSON")
    g.add_argument("preset", choices=sorted(PRESETS))
    g.add_argument("--horizon", type=int, default=3600)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--demand-scale", type=float, default=1.0)
    g.add_argument("--controller", choices=CONTROLLER_KINDS)
    g.add_argument("--weather", choices=sorted(WEATHER))
    g.add_argument("--out", help="output path (stdout when omitted)")
    g.set_defaults(fn=_cmd_gen_scenario)

    def common(sp):
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--weather", choices=sorted(WEATHER))

    c = sub.add_parser("calibrate", help="fit a HeraldTable from fixed-time probe runs")
    common(c)
    c.add_argument("--episodes", type=int, default=1)
    c.add_argument("--green", type=float, default=30)
    c.add_argument("--out")
    c.set_defaults(fn=_cmd_calibrate, controller=None, table=None)

    r = sub.add_parser("run", help="closed-loop simulation")
    common(r)
    r.add_argument("--controller", choices=CONTROLLER_KINDS)
    r.add_argument("--table", help="HeraldTable JSON (probe-calibrated when neither this nor the config sets one)")
    r.add_argument("--replay", help="agent replay JSONL (prompt_hash -> response)")
    r.add_argument("--critic-replay")
    r.add_argument("--out", help="artifact directory")
    r.set_defaults(fn=_cmd_run)

    rep = sub.add_parser("report", help="re-render report.json / metrics.csv from a run directory")
    rep.add_argument("run_dir")
    rep.add_argument("--out")
    rep.set_defaults(fn=_cmd_report)

    d = sub.add_parser("dataset", help="re-emit corpus and preference JSONL from a run directory")
    d.add_argument("run_dir")
    d.add_argument("--critic-replay")
    d.add_argument("--out")
    d.set_defaults(fn=_cmd_dataset)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
