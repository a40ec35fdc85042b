import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heraldlight.microsim import (
    EXTREME,
    V_STOP,
    FlowEntry,
    Simulation,
    VehicleParams,
    WeatherProfile,
    apply_weather,
    event_log_hash,
    read_event_log,
    spawn_schedule,
    write_event_log,
)
from heraldlight.netmodel import (
    InvalidArgument,
    Phase,
    SignalAction,
    build_grid_network,
)


def one_by_one(flows=(), horizon=100, seed=0, **kw):
    return Simulation(build_grid_network(1, 1), list(flows), VehicleParams(**kw), horizon, seed)


def test_single_vehicle_accelerates_from_rest():
    sim = one_by_one([FlowEntry((0, "N"), ("S",), 1.0, end=1.0)])
    sim.step()
    (v,) = sim.vehicles()
    assert v.speed == 2.0 and v.position == 2.0
    sim.step()
    assert v.speed == 4.0 and v.position == 6.0


def test_speed_capped_at_v_max():
    sim = one_by_one([FlowEntry((0, "N"), ("R",), 1.0, end=1.0)])
    speeds = []
    for _ in range(12):
        sim.step()
        speeds.extend(v.speed for v in sim.vehicles())
    assert max(speeds) == 11.0
    assert speeds[:6] == [2.0, 4.0, 6.0, 8.0, 10.0, 11.0]


def test_conservation_without_exits():
    sim = one_by_one([FlowEntry((0, n), ("S",), 0.5, end=2.0) for n in ("N", "E", "S")], horizon=10)
    sim.step()
    sim.step()
    assert sim.spawned == 3 and sim.active == 3 and sim.exited == 0


def test_apply_signal_timing():
    sim = one_by_one(horizon=200)
    for _ in range(100):
        sim.step()
    sim.signals[0].due = 100
    sim.apply_signal(0, SignalAction(Phase.P1, 15))
    sig = sim.signals[0]
    assert (sig.green_start, sig.green_end, sig.yellow_end, sig.due) == (100, 115, 118, 120)
    modes = {}
    for t in range(100, 121):
        modes[t] = sig.mode(t)
    assert all(modes[t] == "green" for t in range(100, 115))
    assert all(modes[t] == "yellow" for t in range(115, 118))
    assert modes[118] == modes[119] == "all-red"


def test_apply_signal_rejections():
    sim = one_by_one()
    with pytest.raises(InvalidArgument):
        sim.apply_signal(0, SignalAction(Phase.P1, 45))
    sim.apply_signal(0, SignalAction(Phase.P1, 40))
    assert sim.signals[0].due == 45
    with pytest.raises(InvalidArgument):
        sim.apply_signal(0, SignalAction(Phase.P2, 10))  # not at an epoch


def test_spawn_counts():
    rng = np.random.default_rng(0)
    assert len(spawn_schedule([FlowEntry((0, "N"), ("S",), 0.5)], 10, rng)) == 5
    assert spawn_schedule([], 10, rng) == []
    sim = one_by_one(horizon=50)
    for _ in range(50):
        sim.step()
    assert sim.spawned == 0


@given(st.floats(0.01, 2.0), st.integers(1, 500), st.integers(0, 2**31))
def test_spawn_count_is_rate_times_horizon(rate, horizon, seed):
    n = len(spawn_schedule([FlowEntry((0, "N"), ("S",), rate)], horizon, np.random.default_rng(seed)))
    assert abs(n - rate * horizon) <= 1


def test_red_light_stops_and_green_releases():
    sim = one_by_one([FlowEntry((0, "N"), ("S",), 0.2, end=30.0)], horizon=200)
    for _ in range(120):
        sim.step()
    lane = sim._lane_pos["src_0_N_S"]
    stopped = sim.lanes[lane]
    assert len(stopped) == 6 and all(v.speed < V_STOP for v in stopped)
    assert all(v.position <= 300.0 for v in stopped)
    sim.signals[0].due = sim.t
    sim.apply_signal(0, SignalAction(Phase.P1, 30))
    for _ in range(40):
        sim.step()
    assert not sim.lanes[lane]
    crossings = [e for e in sim.events if e["type"] == "cross"]
    assert len(crossings) == 6 and all(e["mode"] == "green" for e in crossings)
    # saturation headway between consecutive crossings
    gaps = np.diff([e["time"] for e in crossings])
    assert 1.0 < gaps.mean() < 3.0


def test_right_turns_never_wait():
    sim = one_by_one([FlowEntry((0, "W"), ("R",), 0.1, end=50.0)], horizon=150)
    for _ in range(150):
        sim.step()
    events = sim.finalize()
    exits = [e for e in events if e["type"] == "exit"]
    assert len(exits) == sim.spawned == 5
    assert all(e["wait"] == 0 for e in exits)


def test_observe_partition_matches_vehicle_speeds():
    sim = Simulation(build_grid_network(2, 2), [FlowEntry((0, "N"), ("S", "S"), 0.3), FlowEntry((0, "W"), ("S", "S"), 0.3)],
                     VehicleParams(), 300, 3)
    for _ in range(150):
        sim.step()
    for iid in range(4):
        obs = sim.observe(iid)
        for lid in sim.net.incoming_lanes(iid):
            vs = sim.lanes[sim._lane_pos[lid]]
            assert obs.queued[lid] == sum(1 for v in vs if v.speed < V_STOP)
            assert len(obs.running[lid]) == sum(1 for v in vs if v.speed >= V_STOP)
            assert obs.queued[lid] + len(obs.running[lid]) == len(vs)


def test_all_stopped_means_no_running():
    sim = one_by_one([FlowEntry((0, "N"), ("S",), 0.2, end=20.0)], horizon=200)
    for _ in range(150):
        sim.step()
    obs = sim.observe(0)
    assert obs.running["src_0_N_S"] == () and obs.queued["src_0_N_S"] == 4


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_no_overlap_and_bounds(seed):
    flows = [FlowEntry((0, d), (m,), 0.15) for d in "NESW" for m in "LSR"]
    sim = one_by_one(flows, horizon=200, seed=seed)
    p = sim.params
    rng = np.random.default_rng(seed)
    for t in range(200):
        if sim.is_due(0, t):
            sim.apply_signal(0, SignalAction(Phase(int(rng.integers(1, 5))), int(rng.integers(1, 41))))
        sim.step()
        for lane, vs in enumerate(sim.lanes):
            L = sim._lane_len[lane]
            for a, b in zip(vs, vs[1:]):
                assert a.position - b.position >= p.space - 1e-9
            for v in vs:
                assert 0 <= v.speed <= p.v_max
                assert 0 <= v.position <= L + 1e-9


def test_weather_profiles():
    p = VehicleParams()
    ew = apply_weather(p, EXTREME)
    assert ew.a_max == 1.0 and math.isclose(ew.b_max, 3.15) and math.isclose(ew.v_max, 7.7)
    assert apply_weather(p, WeatherProfile()) == p
    with pytest.raises(InvalidArgument):
        apply_weather(p, WeatherProfile("odd", accel=1.5))


def test_vehicle_params_validated():
    with pytest.raises(InvalidArgument):
        VehicleParams(a_max=0)


def test_event_log_io_and_hash(tmp_path):
    sim = one_by_one([FlowEntry((0, "N"), ("S",), 0.3)], horizon=60)
    for _ in range(60):
        sim.step()
    events = sim.finalize()
    path = tmp_path / "ev.jsonl"
    write_event_log(events, path)
    assert read_event_log(path) == events
    assert event_log_hash(read_event_log(path)) == event_log_hash(events)
    assert any(e["type"] == "unfinished" for e in events)


def test_step_after_finalize_fails():
    sim = one_by_one(horizon=5)
    sim.finalize()
    with pytest.raises(RuntimeError):
        sim.step()


def test_flow_entry_round_trip():
    f = FlowEntry((2, "E"), ("S", "L"), 0.25, 10.0, 500.0)
    assert FlowEntry.from_dict(f.to_dict()) == f
    with pytest.raises(InvalidArgument):
        FlowEntry.from_dict({**f.to_dict(), "speed": 3})
