import pytest
from hypothesis import given
from hypothesis import strategies as st

from heraldlight.netmodel import (
    MAX_DURATION,
    InvalidArgument,
    NotFound,
    Phase,
    SignalAction,
    build_grid_network,
    phase_lane_pairs,
    phase_lanes,
    turn,
    validate_action,
)


@pytest.mark.parametrize("rows,cols,n", [(7, 28, 196), (3, 4, 12), (4, 4, 16), (1, 1, 1)])
def test_grid_sizes(rows, cols, n):
    assert len(build_grid_network(rows, cols).intersections) == n


def test_single_intersection_is_boundary_fed():
    net = build_grid_network(1, 1)
    inter = net.intersection(0)
    assert all(seg.startswith("src_") for seg in inter.incoming.values())
    assert all(seg.startswith("exit_") for seg in inter.outgoing.values())
    assert sorted(d for _, d in net.sources()) == ["E", "N", "S", "W"]


def test_grid_connectivity_is_consistent():
    net = build_grid_network(3, 4)
    for inter in net.intersections:
        for heading, seg_id in inter.outgoing.items():
            seg = net.segment(seg_id)
            assert seg.upstream in (inter.id, None)
            if not seg_id.startswith("exit_"):
                dr, dc = {"N": (-1, 0), "S": (1, 0), "E": (0, 1), "W": (0, -1)}[heading]
                assert seg.downstream == net.at(inter.row + dr, inter.col + dc).id
    assert len({ln.id for ln in net.lanes}) == len(net.lanes)
    assert all(len(s.lanes) == 3 for s in net.segments)


def test_boundary_counts():
    net = build_grid_network(3, 4)
    assert len(list(net.sources())) == 2 * (3 + 4)


@pytest.mark.parametrize("bad", [(0, 1), (1, 0), (-2, 3)])
def test_grid_rejects_bad_dims(bad):
    with pytest.raises(InvalidArgument):
        build_grid_network(*bad)


def test_phase_lanes_examples():
    net = build_grid_network(1, 1)
    assert phase_lanes(net, 0, Phase.P1) == {"src_0_N_S", "src_0_S_S"}
    assert phase_lanes(net, 0, "ETWT") == {"src_0_E_S", "src_0_W_S"}
    union = [lid for ph in Phase for lid in phase_lanes(net, 0, ph)]
    assert len(union) == 8 == len(set(union))
    assert not any(lid.endswith("_R") for lid in union)


def test_phase_lanes_unknown():
    net = build_grid_network(1, 1)
    with pytest.raises(NotFound):
        phase_lanes(net, 0, 7)
    with pytest.raises(NotFound):
        phase_lanes(net, 3, Phase.P1)


def test_phase_lane_pairs_match_sets():
    net = build_grid_network(2, 2)
    for iid in range(4):
        for ph, pair in phase_lane_pairs(net, iid).items():
            assert set(pair) == phase_lanes(net, iid, ph)


def test_turns():
    # from the north you head south; left of south is east
    assert turn("N", "S") == (1, 0)
    assert turn("N", "L") == (0, 1)
    assert turn("N", "R") == (0, -1)
    assert turn("E", "L") == (1, 0)


def test_route_lanes():
    net = build_grid_network(2, 2)
    lanes = net.route_lanes((0, "N"), ["S", "S"])
    assert lanes == ["src_0_N_S", "in_2_N_S", "exit_2_S_S"]
    with pytest.raises(InvalidArgument):
        net.route_lanes((0, "N"), ["S"])  # ends inside the grid
    with pytest.raises(InvalidArgument):
        net.route_lanes((3, "N"), ["S"])  # not a source


@pytest.mark.parametrize(
    "action,kind",
    [((Phase.P2, 15), None), ((Phase.P2, 0), "constraint-violation"), ((Phase.P2, 45), "constraint-violation"),
     ((Phase.P2, 40), None), ((Phase.P2, 0.5), None), ((Phase.P1, float("nan")), "constraint-violation")],
)
def test_validate_action(action, kind):
    v = validate_action(SignalAction(*action))
    assert (v.kind if v else None) == kind


@given(st.sampled_from(list(Phase)), st.floats(allow_nan=False, allow_infinity=False, min_value=-100, max_value=100))
def test_validate_matches_bounds(ph, d):
    assert (validate_action(SignalAction(ph, d)) is None) == (0 < d <= MAX_DURATION)


def test_action_dict_round_trip():
    a = SignalAction("NLSL", 12)
    assert a.phase is Phase.P2
    assert SignalAction.from_dict(a.to_dict()) == a
    assert a.render() == "<signal>NLSL</signal><duration>12</duration>"
