import math

import pytest

from laneforge.basemap import RoadEdge, RoadGraph
from laneforge.errors import ExportError, GeometryError
from laneforge.geodesy import GeoPoint, haversine_m, local_plane_project, local_plane_unproject
from laneforge.matching import MatchResult, ObservationTrack, TrackPoint
from laneforge.netgen import (
    LaneLevelNetwork,
    build_network,
    build_turn_connections,
    classify_movement,
    expand_lanes,
    export_geojson,
    export_sim_xml,
    fuse_lane_counts,
    per_direction_count,
    read_network,
    validate_network,
    write_network,
)

ORIGIN = GeoPoint(113.93, 22.54)


def geo(x_m, y_m):
    return local_plane_unproject(ORIGIN, x_m, y_m)


def road_edge(edge_id, pts_m, oneway=False, lanes=None, frm="A", to="B"):
    geom = [geo(x, y) for x, y in pts_m]
    length = sum(haversine_m(a, b) for a, b in zip(geom, geom[1:]))
    return RoadEdge(edge_id, frm, to, geom, "residential", lanes, oneway, length)


def track(track_id, counts):
    pts = [TrackPoint(f"{track_id}_{i}", geo(10.0 * i, 0.0), c) for i, c in enumerate(counts)]
    return ObservationTrack(track_id, pts)


# --- fuse_lane_counts -----------------------------------------------------------

def graph_one_edge(lanes=None, oneway=False):
    e = road_edge("e.0", [(0.0, 0.0), (200.0, 0.0)], oneway=oneway, lanes=lanes)
    return RoadGraph(junctions={"A": e.geometry[0], "B": e.geometry[-1]}, edges=[e])


def test_fuse_mode_wins():
    graph = graph_one_edge()
    fused = fuse_lane_counts(
        [MatchResult("t0", "e.0", 1.0, True)], [track("t0", [3, 3, 2])], graph
    )
    assert fused["e.0"] == (3, "observed")


def test_fuse_tie_prefers_osm_tag():
    graph = graph_one_edge(lanes=3)
    fused = fuse_lane_counts(
        [MatchResult("t0", "e.0", 1.0, True)], [track("t0", [2, 2, 3, 3])], graph
    )
    assert fused["e.0"] == (3, "observed")


def test_fuse_tie_without_tag_prefers_smaller():
    graph = graph_one_edge()
    fused = fuse_lane_counts(
        [MatchResult("t0", "e.0", 1.0, True)], [track("t0", [2, 2, 3, 3])], graph
    )
    assert fused["e.0"] == (2, "observed")


def test_fuse_fallbacks():
    fused = fuse_lane_counts([], [], graph_one_edge(lanes=4))
    assert fused["e.0"] == (4, "osm_tag")
    fused = fuse_lane_counts([], [], graph_one_edge())
    assert fused["e.0"] == (1, "default")


def test_fuse_ignores_rejected_matches_and_null_votes():
    graph = graph_one_edge()
    fused = fuse_lane_counts(
        [MatchResult("t0", "e.0", 99.0, False)], [track("t0", [5, 5])], graph
    )
    assert fused["e.0"] == (1, "default")
    fused = fuse_lane_counts(
        [MatchResult("t0", "e.0", 1.0, True)], [track("t0", [None, None, 4])], graph
    )
    assert fused["e.0"] == (4, "observed")


def test_per_direction_count_rules():
    assert per_direction_count(3, "observed", oneway=False) == 3
    assert per_direction_count(3, "osm_tag", oneway=False) == 2  # ceil(3/2)
    assert per_direction_count(3, "osm_tag", oneway=True) == 3
    assert per_direction_count(1, "default", oneway=False) == 1


# --- expand_lanes ----------------------------------------------------------------

def lane_xy(edge, origin=ORIGIN):
    return [[local_plane_project(origin, p) for p in lane] for lane in edge.lanes]


def test_expand_straight_two_lanes():
    e = road_edge("e.0", [(0.0, 0.0), (100.0, 0.0)])
    out = expand_lanes(e, 2, 3.5)
    assert out.lane_count == 2
    xy = lane_xy(out)
    # lane 0 is leftmost in travel direction (north of an eastbound edge)
    for x, y in xy[0]:
        assert abs(y - 1.75) < 0.01
    for x, y in xy[1]:
        assert abs(y + 1.75) < 0.01


def test_expand_single_lane_equals_centerline():
    e = road_edge("e.0", [(0.0, 0.0), (100.0, 0.0)])
    out = expand_lanes(e, 1, 3.5)
    assert out.lanes[0] == e.geometry


def test_expand_backward_mirrors_lane_zero():
    e = road_edge("e.0", [(0.0, 0.0), (100.0, 0.0)])
    fwd = expand_lanes(e, 2, 3.5, direction="forward")
    bwd = expand_lanes(e, 2, 3.5, direction="backward")
    assert bwd.centerline == e.geometry[::-1]
    xy = lane_xy(bwd)
    for x, y in xy[0]:
        assert abs(y + 1.75) < 0.01  # leftmost of the westbound direction is south


def test_expand_centerline_is_midpoint_of_extreme_lanes():
    e = road_edge("e.0", [(0.0, 0.0), (60.0, 10.0), (130.0, -5.0), (200.0, 0.0)])
    for count in (2, 3, 4, 5):
        out = expand_lanes(e, count, 3.5)
        for j, c in enumerate(e.geometry):
            left = out.lanes[0][j]
            right = out.lanes[-1][j]
            mid = GeoPoint((left.lng + right.lng) / 2.0, (left.lat + right.lat) / 2.0)
            assert haversine_m(mid, c) < 0.01


def test_expand_right_angle_matches_dense_offset_oracle():
    bend = [(0.0, 0.0), (100.0, 0.0), (100.0, 100.0)]
    e = road_edge("e.0", bend, frm="A", to="C")
    out = expand_lanes(e, 3, 3.5)
    for lane_idx in range(3):
        offset = (lane_idx - 1) * 3.5
        produced = [local_plane_project(ORIGIN, p) for p in out.lanes[lane_idx]]
        # dense brute-force oracle: exact per-segment normal offsets every 0.5 m,
        # skipping stations within the miter influence zone of the corner
        exclusion = 2 * abs(offset) + 1.0
        stations = []
        segs = [((0.0, 0.0), (100.0, 0.0)), ((100.0, 0.0), (100.0, 100.0))]
        for (ax, ay), (bx, by) in segs:
            L = math.hypot(bx - ax, by - ay)
            nx, ny = (by - ay) / L, -(bx - ax) / L  # right normal
            s = 0.0
            while s <= L:
                px, py = ax + (bx - ax) * s / L, ay + (by - ay) * s / L
                dist_to_corner = min(math.hypot(px - 100.0, py - 0.0), 1e9)
                if dist_to_corner > exclusion:
                    stations.append((px + nx * offset, py + ny * offset))
                s += 0.5
        def dist_to_polyline(pt, poly):
            best = math.inf
            for (x0, y0), (x1, y1) in zip(poly, poly[1:]):
                dx, dy = x1 - x0, y1 - y0
                L2 = dx * dx + dy * dy
                t = 0.0 if L2 == 0 else max(0.0, min(1.0, ((pt[0] - x0) * dx + (pt[1] - y0) * dy) / L2))
                best = min(best, math.hypot(pt[0] - (x0 + t * dx), pt[1] - (y0 + t * dy)))
            return best
        for st in stations:
            assert dist_to_polyline(st, produced) < 0.05


def test_expand_rejects_degenerate_segment():
    e = road_edge("e.0", [(0.0, 0.0), (0.0, 0.0), (100.0, 0.0)])
    with pytest.raises(GeometryError):
        expand_lanes(e, 2, 3.5)


# --- movements and turns ------------------------------------------------------------

def make_net(edges_spec, junctions):
    """edges_spec: list of (edge_id, pts_m, oneway, count, frm, to)."""
    lane_edges = []
    road_edges = []
    for edge_id, pts, oneway, count, frm, to in edges_spec:
        e = road_edge(edge_id, pts, oneway=oneway, frm=frm, to=to)
        road_edges.append(e)
        lane_edges.append(expand_lanes(e, count, 3.5, "forward", "observed"))
        if not oneway:
            lane_edges.append(expand_lanes(e, count, 3.5, "backward", "observed"))
    net = LaneLevelNetwork(
        junctions={jid: geo(x, y) for jid, (x, y) in junctions.items()},
        edges=lane_edges,
        turns=[],
    )
    return net


def test_classify_movements():
    net = make_net(
        [
            ("w.0", [(-200.0, 0.0), (0.0, 0.0)], False, 2, "W", "C"),
            ("e.0", [(0.0, 0.0), (200.0, 0.0)], False, 2, "C", "E"),
            ("n.0", [(0.0, 0.0), (0.0, 200.0)], False, 2, "C", "N"),
            ("s31.0", [(0.0, 0.0), (200.0 * math.cos(math.radians(-31.0)), 200.0 * math.sin(math.radians(-31.0)))], False, 2, "C", "S"),
        ],
        {"W": (-200.0, 0.0), "C": (0.0, 0.0), "E": (200.0, 0.0), "N": (0.0, 200.0), "S": (200.0, -120.0)},
    )
    node = net.junctions["C"]
    incoming = net.edge_by_directed_id("w.0")
    assert classify_movement(node, incoming, net.edge_by_directed_id("e.0")) == "through"
    assert classify_movement(node, incoming, net.edge_by_directed_id("n.0")) == "left"
    assert classify_movement(node, incoming, net.edge_by_directed_id("s31.0")) == "right"


def test_pass_through_node_identity_mapping():
    net = make_net(
        [
            ("a.0", [(-200.0, 0.0), (0.0, 0.0)], False, 3, "A", "C"),
            ("b.0", [(0.0, 0.0), (200.0, 0.0)], False, 3, "C", "B"),
        ],
        {"A": (-200.0, 0.0), "C": (0.0, 0.0), "B": (200.0, 0.0)},
    )
    turns = build_turn_connections(net, "C")
    through_fwd = [t for t in turns if t.from_edge == "a.0" and t.to_edge == "b.0"]
    assert [(t.from_lane_index, t.to_lane_index) for t in through_fwd] == [(0, 0), (1, 1), (2, 2)]
    assert all(t.movement == "through" for t in through_fwd)
    # reverse direction as well
    through_bwd = [t for t in turns if t.from_edge == "-b.0" and t.to_edge == "-a.0"]
    assert [(t.from_lane_index, t.to_lane_index) for t in through_bwd] == [(0, 0), (1, 1), (2, 2)]
    # no U-turns anywhere
    assert not [t for t in turns if t.from_edge.lstrip("-") == t.to_edge.lstrip("-")]


def test_through_narrowing_floor_mapping():
    net = make_net(
        [
            ("a.0", [(-200.0, 0.0), (0.0, 0.0)], True, 4, "A", "C"),
            ("b.0", [(0.0, 0.0), (200.0, 0.0)], True, 2, "C", "B"),
        ],
        {"A": (-200.0, 0.0), "C": (0.0, 0.0), "B": (200.0, 0.0)},
    )
    turns = build_turn_connections(net, "C")
    mapping = [(t.from_lane_index, t.to_lane_index) for t in turns]
    assert mapping == [(0, 0), (1, 0), (2, 1), (3, 1)]
    assert mapping == [(i, (i * 2) // 4) for i in range(4)]


def test_t_junction_turn_lanes():
    # eastbound stem arrives at C; branches north (left) and south (right)
    net = make_net(
        [
            ("stem.0", [(-200.0, 0.0), (0.0, 0.0)], True, 2, "A", "C"),
            ("north.0", [(0.0, 0.0), (0.0, 200.0)], True, 3, "C", "N"),
            ("south.0", [(0.0, 0.0), (0.0, -200.0)], True, 2, "C", "S"),
        ],
        {"A": (-200.0, 0.0), "C": (0.0, 0.0), "N": (0.0, 200.0), "S": (0.0, -200.0)},
    )
    turns = build_turn_connections(net, "C")
    got = {(t.from_edge, t.from_lane_index, t.to_edge, t.to_lane_index, t.movement) for t in turns}
    assert got == {
        ("stem.0", 0, "north.0", 0, "left"),
        ("stem.0", 1, "south.0", 1, "right"),
    }


def test_turn_total_matches_independent_enumeration():
    # 4-way junction of two-way 2-lane edges: each arriving direction has one
    # through (2 connections), one left (1), one right (1)
    net = make_net(
        [
            ("w.0", [(-200.0, 0.0), (0.0, 0.0)], False, 2, "W", "C"),
            ("e.0", [(0.0, 0.0), (200.0, 0.0)], False, 2, "C", "E"),
            ("n.0", [(0.0, 0.0), (0.0, 200.0)], False, 2, "C", "N"),
            ("s.0", [(0.0, 0.0), (0.0, -200.0)], False, 2, "C", "S"),
        ],
        {"W": (-200.0, 0.0), "C": (0.0, 0.0), "E": (200.0, 0.0), "N": (0.0, 200.0), "S": (0.0, -200.0)},
    )
    turns = build_turn_connections(net, "C")
    assert len(turns) == 4 * (2 + 1 + 1)
    by_movement = {}
    for t in turns:
        by_movement.setdefault(t.movement, 0)
        by_movement[t.movement] += 1
    assert by_movement == {"through": 8, "left": 4, "right": 4}


# --- build_network + exports ----------------------------------------------------------

def small_graph():
    e1 = road_edge("e1.0", [(0.0, 0.0), (200.0, 0.0)], frm="A", to="B")
    e2 = road_edge("e2.0", [(200.0, 0.0), (400.0, 0.0)], oneway=True, lanes=3, frm="B", to="C")
    return RoadGraph(
        junctions={"A": e1.geometry[0], "B": e1.geometry[-1], "C": e2.geometry[-1]},
        edges=[e1, e2],
    )


def test_build_network_sources_and_directions():
    graph = small_graph()
    fused = {"e1.0": (2, "observed"), "e2.0": (3, "osm_tag")}
    net = build_network(graph, fused, 3.5)
    ids = sorted(e.directed_id for e in net.edges)
    assert ids == ["-e1.0", "e1.0", "e2.0"]
    assert net.provenance == {"observed": 1, "osm_tag": 1}
    assert validate_network(net) == []


def test_export_geojson_shape_and_determinism():
    graph = small_graph()
    net = build_network(graph, {"e1.0": (2, "observed"), "e2.0": (1, "default")}, 3.5)
    blob1 = export_geojson(net)
    blob2 = export_geojson(net)
    assert blob1 == blob2
    import json

    doc = json.loads(blob1)
    lines = [f for f in doc["features"] if f["geometry"]["type"] == "LineString"]
    points = [f for f in doc["features"] if f["geometry"]["type"] == "Point"]
    assert len(lines) == 2 + 2 + 1  # e1 fwd+bwd 2 lanes each? no: 2 lanes fwd, 2 bwd, 1 oneway
    assert len(points) == 3
    for f in lines:
        for lng, lat in f["geometry"]["coordinates"]:
            assert round(lng, 7) == lng
            assert round(lat, 7) == lat


def test_export_sim_xml_structure():
    graph = small_graph()
    net = build_network(graph, {"e1.0": (2, "observed"), "e2.0": (2, "observed")}, 3.5)
    xml = export_sim_xml(net).decode()
    assert xml.startswith('<?xml version="1.0" encoding="UTF-8"?>')
    assert "<nodes>" in xml and "<edges>" in xml and "<connections>" in xml
    assert '<edge id="e1.0" from="A" to="B" numLanes="2"/>' in xml
    assert 'fromLane=' in xml
    assert export_sim_xml(net) == export_sim_xml(net)


def test_export_refuses_dangling_turn():
    graph = small_graph()
    net = build_network(graph, {"e1.0": (1, "default"), "e2.0": (1, "default")}, 3.5)
    from laneforge.netgen import TurnConnection

    net.turns.append(TurnConnection("B", "ghost.0", 0, "e2.0", 0, "through"))
    with pytest.raises(ExportError):
        export_geojson(net)
    with pytest.raises(ExportError):
        export_sim_xml(net)


def test_network_file_round_trip(tmp_path):
    graph = small_graph()
    net = build_network(graph, {"e1.0": (2, "observed"), "e2.0": (3, "osm_tag")}, 3.5)
    path = tmp_path / "network.json"
    write_network(net, path)
    back = read_network(path)
    assert back.junctions == net.junctions
    assert back.provenance == net.provenance
    assert len(back.edges) == len(net.edges)
    assert back.turns == net.turns
    got = {e.directed_id: e for e in back.edges}
    for e in net.edges:
        other = got[e.directed_id]
        assert other.lanes == e.lanes
        assert other.centerline == e.centerline
        assert other.lane_count == e.lane_count