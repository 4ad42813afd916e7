"""Lane-count fusion and lane-level network synthesis plus exporters.

Observed per-direction lane counts are fused per edge by vote mode, each
directed edge is expanded into laterally offset per-lane polylines, and
lane-to-lane turn connections are derived at every junction. Exports are
byte-deterministic GeoJSON and a plain simulator-style XML.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence
from xml.sax.saxutils import quoteattr

from .basemap import RoadEdge, RoadGraph
from .errors import ExportError, GeometryError
from .geodesy import GeoPoint, local_plane_project, local_plane_unproject
from .matching import MatchResult, ObservationTrack

DEFAULT_LANE_WIDTH_M = 3.5
THROUGH_THRESHOLD_DEG = 30.0
MITER_CAP = 2.0
FORWARD = "forward"
BACKWARD = "backward"

SOURCE_OBSERVED = "observed"
SOURCE_OSM_TAG = "osm_tag"
SOURCE_DEFAULT = "default"


@dataclass
class LaneLevelEdge:
    """One travel direction of a road edge expanded into per-lane polylines.

    Lanes are ordered left to right in the travel direction; each lane
    polyline has exactly the centerline's point count.
    """

    edge_id: str
    direction: str  # forward | backward
    from_junction: str
    to_junction: str
    lane_count: int
    lanes: list[list[GeoPoint]]
    centerline: list[GeoPoint]
    lane_width_m: float
    source: str

    @property
    def directed_id(self) -> str:
        return self.edge_id if self.direction == FORWARD else f"-{self.edge_id}"


@dataclass(frozen=True)
class TurnConnection:
    node_id: str
    from_edge: str  # directed ids
    from_lane_index: int
    to_edge: str
    to_lane_index: int
    movement: str  # left | through | right


@dataclass
class LaneLevelNetwork:
    junctions: dict[str, GeoPoint]
    edges: list[LaneLevelEdge]
    turns: list[TurnConnection]
    provenance: dict[str, int] = field(default_factory=dict)

    def edge_by_directed_id(self, directed_id: str) -> LaneLevelEdge | None:
        for e in self.edges:
            if e.directed_id == directed_id:
                return e
        return None


def fuse_lane_counts(
    matches: Sequence[MatchResult],
    tracks: Sequence[ObservationTrack],
    graph: RoadGraph,
) -> dict[str, tuple[int, str]]:
    """Per-edge lane count and its provenance.

    Accepted tracks pour their non-null per-point counts into the matched
    edge's pool; the mode wins, mode ties prefer the OSM lanes tag value when
    present among them, else the smaller count. Unobserved edges fall back to
    the OSM tag, then to a single lane.
    """
    by_track = {t.track_id: t for t in tracks}
    votes: dict[str, list[int]] = {}
    for m in matches:
        if not m.accepted or m.edge_id is None:
            continue
        track = by_track.get(m.track_id)
        if track is None:
            continue
        pool = votes.setdefault(m.edge_id, [])
        for pt in track.points:
            if pt.lane_count is not None:
                pool.append(pt.lane_count)
    fused: dict[str, tuple[int, str]] = {}
    for edge in graph.edges:
        pool = votes.get(edge.edge_id)
        if pool:
            counts = Counter(pool)
            top = max(counts.values())
            modes = sorted(c for c, n in counts.items() if n == top)
            if len(modes) > 1 and edge.lanes in modes:
                fused[edge.edge_id] = (edge.lanes, SOURCE_OBSERVED)
            else:
                fused[edge.edge_id] = (modes[0], SOURCE_OBSERVED)
        elif edge.lanes is not None:
            fused[edge.edge_id] = (edge.lanes, SOURCE_OSM_TAG)
        else:
            fused[edge.edge_id] = (1, SOURCE_DEFAULT)
    return fused


def _offset_polyline(xy: list[tuple[float, float]], offset: float) -> list[tuple[float, float]]:
    """Offset a local-plane polyline laterally (positive = right of travel).

    Interior vertices use the angle-bisector (miter) normal with the miter
    length capped at MITER_CAP times the offset.
    """
    normals = []
    for (x0, y0), (x1, y1) in zip(xy, xy[1:]):
        dx, dy = x1 - x0, y1 - y0
        length = math.hypot(dx, dy)
        if length < 1e-9:
            raise GeometryError("zero-length centerline segment")
        normals.append((dy / length, -dx / length))  # right-hand normal
    out = []
    for j in range(len(xy)):
        if j == 0:
            nx, ny = normals[0]
            scale = 1.0
        elif j == len(xy) - 1:
            nx, ny = normals[-1]
            scale = 1.0
        else:
            ax, ay = normals[j - 1]
            bx, by = normals[j]
            mx, my = ax + bx, ay + by
            norm = math.hypot(mx, my)
            if norm < 1e-9:  # 180 degree spike, fall back to the outgoing normal
                nx, ny = bx, by
                scale = MITER_CAP
            else:
                nx, ny = mx / norm, my / norm
                cos_half = nx * bx + ny * by
                scale = min(MITER_CAP, 1.0 / max(cos_half, 1.0 / MITER_CAP))
        out.append((xy[j][0] + nx * offset * scale, xy[j][1] + ny * offset * scale))
    return out


def expand_lanes(
    edge: RoadEdge,
    count: int,
    lane_width_m: float = DEFAULT_LANE_WIDTH_M,
    direction: str = FORWARD,
    source: str = SOURCE_DEFAULT,
) -> LaneLevelEdge:
    """Expand one travel direction of an edge into `count` lane polylines.

    Works in a local metric plane about the centerline midpoint; lane i
    (left to right) sits (i - (count-1)/2) * lane_width_m to the right of
    the centerline.
    """
    if count < 1:
        raise ValueError("lane count must be >= 1")
    if lane_width_m <= 0:
        raise ValueError("lane_width_m must be > 0")
    if direction not in (FORWARD, BACKWARD):
        raise ValueError(f"direction must be forward or backward, got {direction!r}")
    pts = list(edge.geometry) if direction == FORWARD else list(edge.geometry[::-1])
    if len(pts) < 2:
        raise GeometryError(f"edge {edge.edge_id} has fewer than 2 geometry points")
    origin = pts[len(pts) // 2]
    xy = [local_plane_project(origin, p) for p in pts]
    lanes: list[list[GeoPoint]] = []
    for i in range(count):
        offset = (i - (count - 1) / 2.0) * lane_width_m
        if offset == 0.0:
            lanes.append(list(pts))
            continue
        shifted = _offset_polyline(xy, offset)
        lanes.append([local_plane_unproject(origin, x, y) for x, y in shifted])
    return LaneLevelEdge(
        edge_id=edge.edge_id,
        direction=direction,
        from_junction=edge.from_junction if direction == FORWARD else edge.to_junction,
        to_junction=edge.to_junction if direction == FORWARD else edge.from_junction,
        lane_count=count,
        lanes=lanes,
        centerline=pts,
        lane_width_m=lane_width_m,
        source=source,
    )


def _local_angle_deg(node: GeoPoint, a: GeoPoint, b: GeoPoint) -> float:
    """Direction a->b in degrees, CCW positive from east, in the node's plane."""
    ax, ay = local_plane_project(node, a)
    bx, by = local_plane_project(node, b)
    dx, dy = bx - ax, by - ay
    if math.hypot(dx, dy) < 1e-9:
        raise GeometryError("degenerate segment at junction")
    return math.degrees(math.atan2(dy, dx))


def classify_movement(node: GeoPoint, from_edge: LaneLevelEdge, to_edge: LaneLevelEdge) -> str:
    """left / through / right from the signed bearing change at the node.

    |angle| <= 30 degrees is through; larger counterclockwise turns are left,
    clockwise are right.
    """
    incoming = _local_angle_deg(node, from_edge.centerline[-2], from_edge.centerline[-1])
    outgoing = _local_angle_deg(node, to_edge.centerline[0], to_edge.centerline[1])
    delta = (outgoing - incoming + 180.0) % 360.0 - 180.0
    if abs(delta) <= THROUGH_THRESHOLD_DEG:
        return "through"
    return "left" if delta > 0 else "right"


def build_turn_connections(net: LaneLevelNetwork, node_id: str) -> list[TurnConnection]:
    """Lane-to-lane connections for every legal movement at one junction.

    Through movements fan n source lanes onto m targets with i -> floor(i*m/n);
    left turns leave only from the leftmost lane onto the leftmost target,
    right turns from the rightmost onto the rightmost. U-turns back onto the
    same edge's reverse are excluded.
    """
    node = net.junctions[node_id]
    arriving = sorted(
        (e for e in net.edges if e.to_junction == node_id), key=lambda e: e.directed_id
    )
    departing = sorted(
        (e for e in net.edges if e.from_junction == node_id), key=lambda e: e.directed_id
    )
    out: list[TurnConnection] = []
    for src in arriving:
        for dst in departing:
            if src.edge_id == dst.edge_id and src.direction != dst.direction:
                continue  # U-turn onto own reverse
            if src.directed_id == dst.directed_id:
                continue  # degenerate loop
            movement = classify_movement(node, src, dst)
            n, m = src.lane_count, dst.lane_count
            if movement == "through":
                pairs = [(i, (i * m) // n) for i in range(n)]
            elif movement == "left":
                pairs = [(0, 0)]
            else:
                pairs = [(n - 1, m - 1)]
            for i, j in pairs:
                out.append(
                    TurnConnection(
                        node_id=node_id,
                        from_edge=src.directed_id,
                        from_lane_index=i,
                        to_edge=dst.directed_id,
                        to_lane_index=j,
                        movement=movement,
                    )
                )
    return out


def per_direction_count(count: int, source: str, oneway: bool) -> int:
    """Resolve a fused per-edge count into a per-direction lane count.

    Observed counts come from a camera facing one travel direction, so they
    are already per-direction; an OSM total on a two-way edge is halved and
    rounded up.
    """
    if source == SOURCE_OSM_TAG and not oneway:
        return max(1, math.ceil(count / 2))
    return max(1, count)


def build_network(
    graph: RoadGraph,
    fused: dict[str, tuple[int, str]],
    lane_width_m: float = DEFAULT_LANE_WIDTH_M,
) -> LaneLevelNetwork:
    """Expand every directed edge and derive all turn connections."""
    edges: list[LaneLevelEdge] = []
    provenance = Counter()
    for edge in sorted(graph.edges, key=lambda e: e.edge_id):
        count, source = fused.get(edge.edge_id, (1, SOURCE_DEFAULT))
        per_dir = per_direction_count(count, source, edge.oneway)
        provenance[source] += 1
        edges.append(expand_lanes(edge, per_dir, lane_width_m, FORWARD, source))
        if not edge.oneway:
            edges.append(expand_lanes(edge, per_dir, lane_width_m, BACKWARD, source))
    net = LaneLevelNetwork(
        junctions=dict(graph.junctions),
        edges=edges,
        turns=[],
        provenance=dict(provenance),
    )
    turns: list[TurnConnection] = []
    for node_id in sorted(net.junctions):
        turns.extend(build_turn_connections(net, node_id))
    net.turns = turns
    return net


def validate_network(net: LaneLevelNetwork) -> list[str]:
    out = []
    directed = {}
    for e in net.edges:
        if e.directed_id in directed:
            out.append(f"duplicate directed edge {e.directed_id}")
        directed[e.directed_id] = e
        if len(e.lanes) != e.lane_count:
            out.append(f"edge {e.directed_id} lane list does not match lane_count")
        if any(len(lane) != len(e.centerline) for lane in e.lanes):
            out.append(f"edge {e.directed_id} lane point counts differ from centerline")
        if e.from_junction not in net.junctions or e.to_junction not in net.junctions:
            out.append(f"edge {e.directed_id} references unknown junction")
    for t in net.turns:
        src = directed.get(t.from_edge)
        dst = directed.get(t.to_edge)
        if src is None or dst is None:
            out.append(f"turn at {t.node_id} references missing edge {t.from_edge}->{t.to_edge}")
            continue
        if t.node_id not in net.junctions:
            out.append(f"turn references unknown node {t.node_id}")
        if not (0 <= t.from_lane_index < src.lane_count) or not (0 <= t.to_lane_index < dst.lane_count):
            out.append(f"turn at {t.node_id} has lane index out of range")
    return out


def _coord(v: float) -> float:
    return round(v, 7)


def export_geojson(net: LaneLevelNetwork) -> bytes:
    """RFC 7946 FeatureCollection: one LineString per lane plus junction
    points carrying movement summaries. Deterministic byte output."""
    problems = validate_network(net)
    if problems:
        raise ExportError("refusing export: " + "; ".join(problems[:5]))
    features = []
    for e in sorted(net.edges, key=lambda e: (e.directed_id,)):
        for i, lane in enumerate(e.lanes):
            features.append(
                {
                    "type": "Feature",
                    "geometry": {
                        "type": "LineString",
                        "coordinates": [[_coord(p.lng), _coord(p.lat)] for p in lane],
                    },
                    "properties": {
                        "edge_id": e.directed_id,
                        "lane_index": i,
                        "lane_count": e.lane_count,
                        "source": e.source,
                    },
                }
            )
    moves: dict[str, Counter] = {}
    for t in net.turns:
        moves.setdefault(t.node_id, Counter())[t.movement] += 1
    for node_id in sorted(net.junctions):
        p = net.junctions[node_id]
        summary = moves.get(node_id, Counter())
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [_coord(p.lng), _coord(p.lat)]},
                "properties": {
                    "node_id": node_id,
                    "left": summary.get("left", 0),
                    "through": summary.get("through", 0),
                    "right": summary.get("right", 0),
                },
            }
        )
    doc = {"type": "FeatureCollection", "features": features}
    return (json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


# --- internal network serialization (build/export stage boundary) -----------

def write_network(net: LaneLevelNetwork, path) -> None:
    from pathlib import Path

    doc = {
        "kind": "network",
        "schema_version": 1,
        "junctions": {
            jid: [p.lng, p.lat] for jid, p in sorted(net.junctions.items())
        },
        "edges": [
            {
                "edge_id": e.edge_id,
                "direction": e.direction,
                "from": e.from_junction,
                "to": e.to_junction,
                "lane_count": e.lane_count,
                "lane_width_m": e.lane_width_m,
                "source": e.source,
                "centerline": [[p.lng, p.lat] for p in e.centerline],
                "lanes": [[[p.lng, p.lat] for p in lane] for lane in e.lanes],
            }
            for e in sorted(net.edges, key=lambda e: e.directed_id)
        ],
        "turns": [
            {
                "node_id": t.node_id,
                "from": t.from_edge,
                "from_lane": t.from_lane_index,
                "to": t.to_edge,
                "to_lane": t.to_lane_index,
                "movement": t.movement,
            }
            for t in net.turns
        ],
        "provenance": dict(sorted(net.provenance.items())),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def read_network(path) -> LaneLevelNetwork:
    from pathlib import Path

    from .errors import ParseError, SchemaVersionError

    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid network file: {e}") from e
    if doc.get("kind") != "network":
        raise ParseError("not a network file")
    if doc.get("schema_version") != 1:
        raise SchemaVersionError(f"unsupported network schema_version {doc.get('schema_version')!r}")
    junctions = {jid: GeoPoint(c[0], c[1]) for jid, c in doc["junctions"].items()}
    edges = [
        LaneLevelEdge(
            edge_id=e["edge_id"],
            direction=e["direction"],
            from_junction=e["from"],
            to_junction=e["to"],
            lane_count=int(e["lane_count"]),
            lanes=[[GeoPoint(x, y) for x, y in lane] for lane in e["lanes"]],
            centerline=[GeoPoint(x, y) for x, y in e["centerline"]],
            lane_width_m=float(e["lane_width_m"]),
            source=e["source"],
        )
        for e in doc["edges"]
    ]
    turns = [
        TurnConnection(
            node_id=t["node_id"],
            from_edge=t["from"],
            from_lane_index=int(t["from_lane"]),
            to_edge=t["to"],
            to_lane_index=int(t["to_lane"]),
            movement=t["movement"],
        )
        for t in doc["turns"]
    ]
    return LaneLevelNetwork(
        junctions=junctions,
        edges=edges,
        turns=turns,
        provenance={k: int(v) for k, v in doc.get("provenance", {}).items()},
    )


def export_sim_xml(net: LaneLevelNetwork) -> bytes:
    """Plain simulator-style network XML (nodes, edges, connections)."""
    problems = validate_network(net)
    if problems:
        raise ExportError("refusing export: " + "; ".join(problems[:5]))
    lines = ['<?xml version="1.0" encoding="UTF-8"?>', "<network>"]
    lines.append("  <nodes>")
    for node_id in sorted(net.junctions):
        p = net.junctions[node_id]
        lines.append(
            f"    <node id={quoteattr(node_id)} x=\"{_coord(p.lng):.7f}\" y=\"{_coord(p.lat):.7f}\"/>"
        )
    lines.append("  </nodes>")
    lines.append("  <edges>")
    for e in sorted(net.edges, key=lambda e: e.directed_id):
        lines.append(
            f"    <edge id={quoteattr(e.directed_id)} from={quoteattr(e.from_junction)}"
            f" to={quoteattr(e.to_junction)} numLanes=\"{e.lane_count}\"/>"
        )
    lines.append("  </edges>")
    lines.append("  <connections>")
    for t in sorted(net.turns, key=lambda t: (t.from_edge, t.to_edge, t.from_lane_index, t.to_lane_index)):
        lines.append(
            f"    <connection from={quoteattr(t.from_edge)} to={quoteattr(t.to_edge)}"
            f" fromLane=\"{t.from_lane_index}\" toLane=\"{t.to_lane_index}\"/>"
        )
    lines.append("  </connections>")
    lines.append("</network>")
    return ("\n".join(lines) + "\n").encode("utf-8")
