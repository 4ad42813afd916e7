"""OSM XML ingestion and the junction/edge road graph it becomes.

Only motor-traffic highway classes are retained; ways are split into edges
wherever two retained ways share a node, so every edge runs junction to
junction with full intermediate geometry.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

from .errors import DanglingRefError, ParseError
from .geodesy import GeoPoint, haversine_m

_HIGHWAY_BASES = (
    "motorway",
    "trunk",
    "primary",
    "secondary",
    "tertiary",
    "residential",
    "unclassified",
    "service",
)
HIGHWAY_ALLOWLIST = frozenset(_HIGHWAY_BASES) | frozenset(f"{b}_link" for b in _HIGHWAY_BASES)

_ONEWAY_TRUE = {"yes", "true", "1"}


@dataclass
class OsmWay:
    way_id: str
    node_refs: list[str]
    tags: dict[str, str]


@dataclass
class OsmDoc:
    nodes: dict[str, GeoPoint]
    ways: list[OsmWay]


@dataclass
class RoadEdge:
    edge_id: str
    from_junction: str
    to_junction: str
    geometry: list[GeoPoint]
    highway: str
    lanes: int | None
    oneway: bool
    length_m: float


@dataclass
class RoadGraph:
    junctions: dict[str, GeoPoint]
    edges: list[RoadEdge]
    _by_id: dict[str, RoadEdge] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._by_id = {e.edge_id: e for e in self.edges}

    def edge(self, edge_id: str) -> RoadEdge:
        return self._by_id[edge_id]

    def incident(self, junction_id: str) -> list[RoadEdge]:
        return [e for e in self.edges if junction_id in (e.from_junction, e.to_junction)]


def _byte_offset(data: bytes, line: int, column: int) -> int:
    rows = data.split(b"\n")
    return sum(len(r) + 1 for r in rows[: line - 1]) + column


def parse_osm(data: bytes) -> OsmDoc:
    """Parse an OSM XML v0.6 extract, keeping allowlisted highway ways."""
    try:
        root = ET.fromstring(data)
    except ET.ParseError as e:
        line, column = getattr(e, "position", (1, 0))
        raise ParseError(f"malformed XML: {e}", offset=_byte_offset(data, line, column)) from e
    if root.tag != "osm":
        raise ParseError(f"expected <osm> root, got <{root.tag}>")
    nodes: dict[str, GeoPoint] = {}
    ways: list[OsmWay] = []
    for el in root:
        if el.tag == "node":
            try:
                nodes[el.attrib["id"]] = GeoPoint(float(el.attrib["lon"]), float(el.attrib["lat"]))
            except (KeyError, ValueError) as e:
                raise ParseError(f"bad node element: {e}") from e
        elif el.tag == "way":
            way_id = el.attrib.get("id")
            if way_id is None:
                raise ParseError("way without id")
            refs = [nd.attrib["ref"] for nd in el if nd.tag == "nd"]
            tags = {t.attrib["k"]: t.attrib["v"] for t in el if t.tag == "tag"}
            if tags.get("highway") not in HIGHWAY_ALLOWLIST:
                continue
            if len(refs) < 2:
                continue
            ways.append(OsmWay(way_id=way_id, node_refs=refs, tags=tags))
    for way in ways:
        for ref in way.node_refs:
            if ref not in nodes:
                raise DanglingRefError(f"way {way.way_id} references missing node {ref}")
    return OsmDoc(nodes=nodes, ways=ways)


def _parse_lanes(tags: dict[str, str]) -> int | None:
    raw = tags.get("lanes")
    if raw is None:
        return None
    try:
        n = int(raw.strip())
    except ValueError:
        return None
    return n if n > 0 else None


def _polyline_length(points: Iterable[GeoPoint]) -> float:
    pts = list(points)
    return sum(haversine_m(a, b) for a, b in zip(pts, pts[1:]))


def build_graph(doc: OsmDoc) -> RoadGraph:
    """Split ways at shared nodes and endpoints into junction-to-junction edges.

    Edge ids are deterministic (way id + split index), so identical input
    bytes always produce the identical graph.
    """
    usage = Counter()
    for way in doc.ways:
        for ref in set(way.node_refs):
            usage[ref] += 1
    junction_ids: set[str] = set()
    for way in doc.ways:
        junction_ids.add(way.node_refs[0])
        junction_ids.add(way.node_refs[-1])
        for ref in way.node_refs:
            if usage[ref] >= 2:
                junction_ids.add(ref)
    edges: list[RoadEdge] = []
    for way in doc.ways:
        refs = way.node_refs
        cuts = [i for i, ref in enumerate(refs) if ref in junction_ids]
        lanes = _parse_lanes(way.tags)
        oneway = way.tags.get("oneway", "").lower() in _ONEWAY_TRUE
        highway = way.tags["highway"]
        for k, (a, b) in enumerate(zip(cuts, cuts[1:])):
            geometry = [doc.nodes[r] for r in refs[a : b + 1]]
            edges.append(
                RoadEdge(
                    edge_id=f"{way.way_id}.{k}",
                    from_junction=refs[a],
                    to_junction=refs[b],
                    geometry=geometry,
                    highway=highway,
                    lanes=lanes,
                    oneway=oneway,
                    length_m=_polyline_length(geometry),
                )
            )
    junctions = {jid: doc.nodes[jid] for jid in sorted(junction_ids)}
    return RoadGraph(junctions=junctions, edges=edges)
