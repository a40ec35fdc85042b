import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from heraldlight.metrics import (
    CSV_FIELDS,
    compute_metrics,
    duration_ecdf,
    hallucination_rate,
    metrics_csv,
)
from heraldlight.netmodel import Phase, SignalAction


def spawn(vid, t):
    return {"type": "spawn", "t": t, "vid": vid, "lane": "src_0_N_S"}


def exit_(vid, t, enter, wait=0.0):
    return {"type": "exit", "t": t, "vid": vid, "enter": enter, "wait": wait}


def test_att_examples():
    assert compute_metrics([spawn(0, 0), exit_(0, 100, 0)], 600).att == 100
    assert compute_metrics([spawn(0, 0), exit_(0, 100, 0), spawn(1, 0), exit_(1, 200, 0)], 600).att == 150
    unfinished = [spawn(0, 0), {"type": "unfinished", "t": 600, "vid": 0, "enter": 0, "wait": 30.0}]
    r = compute_metrics(unfinished, 600)
    assert r.att == 600 and r.finished == 0 and r.awt == 30.0


def test_aql_and_awt():
    ticks = [{"type": "tick", "t": t, "queued": q, "active": 0} for t, q in enumerate([0, 2, 4, 2])]
    events = ticks + [spawn(0, 0), exit_(0, 4, 0, wait=3.0), spawn(1, 1), exit_(1, 4, 1, wait=1.0)]
    r = compute_metrics(events, 4)
    assert r.aql_veh == 2.0 and r.aql_m == 15.0 and r.awt == 2.0


def test_empty_log():
    r = compute_metrics([], 600)
    assert r.empty and r.att == 0.0 and r.vehicles == 0


@pytest.mark.parametrize("args,want", [((558, 6048), 0.0923), ((9, 5525), 0.00163), ((0, 40), 0.0), ((0, 0), 0.0)])
def test_hallucination_rate(args, want):
    assert hallucination_rate(*args) == pytest.approx(want, rel=1e-3, abs=1e-12)


def test_hallucination_rate_paper_counts_rounded():
    assert f"{hallucination_rate(558, 6048):.2%}" == "9.23%"
    assert f"{hallucination_rate(9, 5525):.3%}" == "0.163%"


def test_ecdf_examples():
    acts = [SignalAction(Phase.P1, d) for d in (10, 10, 20, 40)]
    assert duration_ecdf(acts) == [(10, 0.5), (20, 0.75), (40, 1.0)]
    assert duration_ecdf([SignalAction(Phase.P2, 7)]) == [(7, 1.0)]


@given(st.lists(st.integers(1, 40), min_size=1, max_size=300))
def test_ecdf_rank_oracle(ds):
    out = dict(duration_ecdf([float(d) for d in ds]))
    for d in set(ds):
        assert out[d] == sum(1 for x in ds if x <= d) / len(ds)


def _toy_log(n=30, seed=0):
    rnd = random.Random(seed)
    events = [{"type": "meta", "t": 0, "horizon": 100}]
    for vid in range(n):
        t0 = rnd.randint(0, 80)
        events.append(spawn(vid, t0))
        if rnd.random() < 0.7:
            events.append(exit_(vid, t0 + rnd.randint(5, 19), t0, wait=rnd.randint(0, 5)))
        else:
            events.append({"type": "unfinished", "t": 100, "vid": vid, "enter": t0, "wait": rnd.randint(0, 9)})
    events += [{"type": "tick", "t": t, "queued": rnd.randint(0, 9), "active": 0} for t in range(100)]
    events += [{"type": "signal", "t": 5 * k, "iid": 0, "phase": "NTST", "mode": "green", "duration": 3} for k in range(5)]
    return events


@given(st.integers(0, 1000))
def test_metrics_order_invariant(seed):
    events = _toy_log(seed=seed)
    shuffled = events[:]
    random.Random(seed).shuffle(shuffled)
    assert compute_metrics(events).to_json() == compute_metrics(shuffled, 100).to_json()


def test_phase_counts_and_ecdf_from_log():
    r = compute_metrics(_toy_log())
    assert r.phase_counts == {"NTST": 5, "NLSL": 0, "ETWT": 0, "ELWL": 0}
    assert r.duration_ecdf == [(3, 1.0)]


def test_csv():
    r = compute_metrics(_toy_log())
    text = metrics_csv([r.csv_row("toy", "fixed", 7)])
    header, row = text.strip().split("\n")
    assert header.split(",") == list(CSV_FIELDS)
    assert row.startswith("toy,fixed,7,")
