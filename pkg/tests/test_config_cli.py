import json
from dataclasses import replace

import numpy as np
import pytest

from heraldlight.cli import main, rerender_report, run_experiment
from heraldlight.config import (
    ConfigError,
    ControllerSpec,
    config_from_dict,
    load_config,
    preset,
)
from heraldlight.herald import HeraldTable
from heraldlight.llm import prompt_hash
from heraldlight.microsim import spawn_schedule


@pytest.mark.parametrize("name,n", [("jn-like", 12), ("hz-like", 16), ("ny-like", 196), ("grid2x2", 4)])
def test_preset_sizes(name, n):
    assert len(preset(name).network().intersections) == n


def test_jn_like_volume():
    s = preset("jn-like", horizon=3600)
    n = len(spawn_schedule(s.flows, 3600, np.random.default_rng(0)))
    assert abs(n - 6295) < 0.02 * 6295


def test_unknown_preset():
    with pytest.raises(ConfigError):
        preset("paris")


def test_config_round_trip():
    s = preset("hz-like", horizon=900, seed=4, weather="extreme", controller=ControllerSpec("max-pressure", green=25))
    again = config_from_dict(json.loads(s.to_json()))
    assert again == s


@pytest.mark.parametrize(
    "patch,where",
    [
        ({"colour": 1}, "$: unknown field(s) colour"),
        ({"vehicle": {"v_max": 11, "wings": 2}}, "$.vehicle"),
        ({"weather": "snow"}, "$.weather"),
        ({"horizon": 0}, "$.horizon"),
        ({"schema_version": 9}, "$.schema_version"),
        ({"controller": {"kind": "psychic"}}, "$.controller.kind"),
        ({"grid": [2]}, "$.grid"),
    ],
)
def test_config_field_diagnostics(patch, where):
    d = json.loads(preset("grid2x2").to_json())
    d.update(patch)
    with pytest.raises(ConfigError, match=r"^" + __import__("re").escape(where)):
        config_from_dict(d)


def test_config_bad_route():
    d = json.loads(preset("grid2x2").to_json())
    d["flows"][0]["turns"] = "S"
    with pytest.raises(ConfigError, match=r"\$\.flows\[0\]: invalid route"):
        config_from_dict(d)


def test_config_json_error_has_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "name": "x",\n  "grid": [1, 1,\n}\n')
    with pytest.raises(ConfigError, match=r"bad\.json:4:1"):
        load_config(p)


def _cfg(tmp_path, **kw):
    s = preset("grid2x2", horizon=600, seed=7, **kw)
    path = tmp_path / "scenario.json"
    path.write_text(s.to_json())
    return path


def test_cli_run_is_deterministic_and_report_rerenders(tmp_path, capsys):
    cfg = _cfg(tmp_path, controller=ControllerSpec("fixed"))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    assert (a / "events.jsonl").read_bytes() == (b / "events.jsonl").read_bytes()
    assert main(["report", str(a), "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "report.json").read_bytes() == (a / "report.json").read_bytes()
    assert (tmp_path / "r" / "metrics.csv").read_bytes() == (a / "metrics.csv").read_bytes()
    assert "ATT=" in capsys.readouterr().out


def test_cli_overrides(tmp_path):
    cfg = _cfg(tmp_path)
    assert main(["run", "--config", str(cfg), "--controller", "max-pressure", "--seed", "3", "--weather", "extreme",
                 "--out", str(tmp_path / "o")]) == 0
    s = load_config(tmp_path / "o" / "scenario.json")
    assert (s.controller.kind, s.seed, s.weather) == ("max-pressure", 3, "extreme")
    assert (tmp_path / "o" / "metrics.csv").read_text().splitlines()[1].startswith("grid2x2,max-pressure,3,")


def test_cli_gen_scenario_and_calibrate(tmp_path):
    out = tmp_path / "jn.json"
    assert main(["gen-scenario", "jn-like", "--horizon", "300", "--out", str(out)]) == 0
    assert load_config(out).grid == (3, 4)
    table = tmp_path / "t.json"
    assert main(["calibrate", "--config", str(out), "--out", str(table)]) == 0
    t = json.loads(table.read_text())
    assert t["tau"] > 0 and t["knots"][0] == [0.0, 0.0]
    assert main(["run", "--config", str(out), "--controller", "herald-rule", "--table", str(table)]) == 0


def test_cli_llm_run_and_dataset(tmp_path):
    cfg = _cfg(tmp_path, controller=ControllerSpec("llm"))
    replay = tmp_path / "replay.jsonl"
    replay.write_text("")
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--replay", str(replay), "--out", str(out)]) == 0
    decisions = (out / "decisions.jsonl").read_text().splitlines()
    prefs = (out / "preferences.jsonl").read_text().splitlines()
    # every prompt missed the empty replay file, so every decision is a flagged transport failure
    assert len(prefs) - 1 == len(decisions) > 0
    before = {n: (out / n).read_bytes() for n in ("corpus.jsonl", "preferences.jsonl")}
    assert main(["dataset", str(out), "--out", str(tmp_path / "ds")]) == 0
    for name, data in before.items():
        assert (tmp_path / "ds" / name).read_bytes() == data
    report = json.loads((out / "report.json").read_text())
    assert report["hallucination_rate"] == 1.0
    assert rerender_report(out)[0] == (out / "report.json").read_text()


def test_run_experiment_with_replayed_answers(tmp_path):
    s = preset("grid2x2", horizon=120, seed=1, controller=ControllerSpec("llm"))
    s = replace(s, herald=replace(s.herald, table=HeraldTable(tau=1.8)))
    first = run_experiment(s, tmp_path / "probe", replay=str(_empty(tmp_path)))
    rows = []
    for line in (tmp_path / "probe" / "decisions.jsonl").read_text().splitlines():
        prompt = json.loads(line)["prompt"]
        rows.append({"prompt_hash": prompt_hash(prompt), "response": "<signal>NTST</signal><duration>20</duration>"})
    replay = tmp_path / "answers.jsonl"
    replay.write_text("".join(json.dumps(r) + "\n" for r in rows[:4]))
    art = run_experiment(replace(s, horizon=20), tmp_path / "live", replay=str(replay))
    assert first.report.decisions >= 4
    assert art.report.decisions == 4 and art.report.hallucinations == 0


def _empty(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    return p


def test_cli_errors(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"name": "x", "grid": [1, 1], "flows": [], "bogus": 1}))
    assert main(["run", "--config", str(bad)]) == 2
    assert "$: unknown field(s) bogus" in capsys.readouterr().err
    cfg = _cfg(tmp_path, controller=ControllerSpec("fixed"))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "f")]) == 0
    assert main(["dataset", str(tmp_path / "f")]) == 2


def test_one_hour_jinan_dims():
    s = preset("jn-like", horizon=3600, seed=0, controller=ControllerSpec("fixed"))
    art = run_experiment(s)
    assert art.report.horizon == 3600 and art.report.vehicles > 6000


def test_short_run_without_table_uses_default(tmp_path):
    s = preset("grid2x2", horizon=10, seed=1, controller=ControllerSpec("fixed"))
    assert run_experiment(s).table == HeraldTable()
