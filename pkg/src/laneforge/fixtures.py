"""Synthetic 4x4 grid town used by tests, scripts, and the acceptance suite.

16 junctions, 24 two-node ways (200 m apart), panorama chains every 10 m
with BD-09 fixture provider records, ground-truth detections/annotations,
and a ready-to-run pipeline config. Everything is deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .geodesy import (
    Datum,
    GeoPoint,
    M_PER_DEG,
    convert_datum,
)
from .lanegeom import LaneCurve
from .laneio import (
    AnnotationRecord,
    DetectionRecord,
    write_annotations,
    write_detections,
)

GRID_N = 4
SPACING_M = 200.0
PANO_STEP_M = 10.0
PANO_MARGIN_M = 8.0  # offset of the first/last station from the junction
NEGATIVE_NEAR_JUNCTION_M = 15.0
ORIGIN = GeoPoint(113.93, 22.54)  # Shenzhen-ish, inside the GCJ gate
IMAGE_W = 1024
IMAGE_H = 576
CURVE_Y_RANGE = (0.35, 0.95)

ONEWAY_WAYS = {"wh11", "wv22"}
LANES_TAGGED_WAYS = ("wh00", "wh11", "wv03", "wv30", "wh23")


@dataclass(frozen=True)
class FixtureWay:
    way_id: str
    from_junction: str
    to_junction: str
    axis: str  # "E" (eastward) or "N" (northward)
    lane_count: int  # per travel direction
    oneway: bool
    highway: str


def _junction_id(i: int, j: int) -> str:
    return f"n{i}{j}"


def _way_lane_count(kind: str, i: int, j: int) -> int:
    if kind == "h":
        return 1 + (i + 2 * j) % 4
    return 1 + (j + 2 * i + 1) % 4


def _ways() -> list[FixtureWay]:
    rows_hw = ["residential", "residential", "secondary", "primary"]
    cols_hw = ["tertiary", "residential", "unclassified", "tertiary"]
    out = []
    for j in range(GRID_N):
        for i in range(GRID_N - 1):
            wid = f"wh{j}{i}"
            out.append(
                FixtureWay(
                    way_id=wid,
                    from_junction=_junction_id(i, j),
                    to_junction=_junction_id(i + 1, j),
                    axis="E",
                    lane_count=_way_lane_count("h", i, j),
                    oneway=wid in ONEWAY_WAYS,
                    highway=rows_hw[j],
                )
            )
    for i in range(GRID_N):
        for j in range(GRID_N - 1):
            wid = f"wv{i}{j}"
            out.append(
                FixtureWay(
                    way_id=wid,
                    from_junction=_junction_id(i, j),
                    to_junction=_junction_id(i, j + 1),
                    axis="N",
                    lane_count=_way_lane_count("v", i, j),
                    oneway=wid in ONEWAY_WAYS,
                    highway=cols_hw[i],
                )
            )
    return out


def _junction_positions() -> dict[str, GeoPoint]:
    dlat = SPACING_M / M_PER_DEG
    dlng = SPACING_M / (M_PER_DEG * math.cos(math.radians(ORIGIN.lat)))
    return {
        _junction_id(i, j): GeoPoint(ORIGIN.lng + i * dlng, ORIGIN.lat + j * dlat)
        for i in range(GRID_N)
        for j in range(GRID_N)
    }


def _stations() -> list[float]:
    out = []
    s = PANO_MARGIN_M
    while s <= SPACING_M - PANO_MARGIN_M + 1e-9:
        out.append(s)
        s += PANO_STEP_M
    return out


def _pano_id(way_id: str, k: int) -> str:
    return f"{way_id}_{k:02d}"


def _detection_curves(count: int) -> list[LaneCurve]:
    return [
        LaneCurve(
            coeffs=(0.0, 0.0, 0.0, (i + 1) / (count + 1)),
            y_range=CURVE_Y_RANGE,
            score=0.97,
        )
        for i in range(count)
    ]


def _annotation_lanes(count: int) -> list[list[tuple[float, float]]]:
    rows = [CURVE_Y_RANGE[0] + (CURVE_Y_RANGE[1] - CURVE_Y_RANGE[0]) * t / 7 for t in range(8)]
    return [
        [((i + 1) / (count + 1) * IMAGE_W, v * IMAGE_H) for v in rows]
        for i in range(count)
    ]


def generate_fixture_city(root: str | Path) -> dict:
    """Write provider fixtures, OSM extract, detections, annotations, truth
    table and pipeline config under root; returns the truth table."""
    root = Path(root)
    provider_dir = root / "provider"
    provider_dir.mkdir(parents=True, exist_ok=True)
    junctions = _junction_positions()
    ways = _ways()
    stations = _stations()

    # panorama chains: directed along each way, cross-linked at junctions
    pano_records: dict[str, dict] = {}
    truth_panos: dict[str, dict] = {}
    chain_first: dict[str, str] = {}
    chain_last: dict[str, str] = {}
    bearings = {"E": 90.0, "N": 0.0}
    for way in ways:
        a = junctions[way.from_junction]
        b = junctions[way.to_junction]
        ids = []
        for k, s in enumerate(stations):
            t = s / SPACING_M
            pos_wgs = GeoPoint(a.lng + t * (b.lng - a.lng), a.lat + t * (b.lat - a.lat))
            pos_bd = convert_datum(pos_wgs, Datum.WGS84, Datum.BD09)
            pid = _pano_id(way.way_id, k)
            negative = min(s, SPACING_M - s) <= NEGATIVE_NEAR_JUNCTION_M
            pano_records[pid] = {
                "pano_id": pid,
                "lng": pos_bd.lng,
                "lat": pos_bd.lat,
                "capture_time": "2023-05-17T08:30:00Z",
                "heading_deg": bearings[way.axis],
                "links": [],
            }
            truth_panos[pid] = {
                "way": way.way_id,
                "station_m": s,
                "negative": negative,
                "lane_count": 0 if negative else way.lane_count,
            }
            ids.append(pid)
        for prev, nxt in zip(ids, ids[1:]):
            pano_records[prev]["links"].append(nxt)
        chain_first[way.way_id] = ids[0]
        chain_last[way.way_id] = ids[-1]
    for junction_id in junctions:
        arriving = sorted(chain_last[w.way_id] for w in ways if w.to_junction == junction_id)
        departing = sorted(chain_first[w.way_id] for w in ways if w.from_junction == junction_id)
        for src in arriving:
            pano_records[src]["links"].extend(departing)
    for pid, rec in pano_records.items():
        (provider_dir / f"{pid}.json").write_text(json.dumps(rec, sort_keys=True), encoding="utf-8")

    # OSM extract
    osm_lines = ['<?xml version="1.0" encoding="UTF-8"?>', '<osm version="0.6" generator="fixture">']
    for jid in sorted(junctions):
        p = junctions[jid]
        osm_lines.append(f'  <node id="{jid}" lat="{p.lat!r}" lon="{p.lng!r}"/>')
    for way in ways:
        osm_lines.append(f'  <way id="{way.way_id}">')
        osm_lines.append(f'    <nd ref="{way.from_junction}"/>')
        osm_lines.append(f'    <nd ref="{way.to_junction}"/>')
        osm_lines.append(f'    <tag k="highway" v="{way.highway}"/>')
        if way.oneway:
            osm_lines.append('    <tag k="oneway" v="yes"/>')
        if way.way_id in LANES_TAGGED_WAYS:
            total = way.lane_count if way.oneway else 2 * way.lane_count
            osm_lines.append(f'    <tag k="lanes" v="{total}"/>')
        osm_lines.append("  </way>")
    osm_lines.append("</osm>")
    (root / "osm.xml").write_text("\n".join(osm_lines) + "\n", encoding="utf-8")

    # ground-truth detections + annotations (image_id == pano_id)
    detections = []
    annotations = []
    for pid in sorted(pano_records):
        info = truth_panos[pid]
        heading = pano_records[pid]["heading_deg"]
        if info["negative"]:
            detections.append(DetectionRecord(pano_id=pid, heading_deg=heading, lanes=[], negative=True))
            annotations.append(
                AnnotationRecord(image_id=pid, width=IMAGE_W, height=IMAGE_H, lanes=[], is_negative=True, lane_count=0)
            )
        else:
            count = info["lane_count"]
            detections.append(
                DetectionRecord(pano_id=pid, heading_deg=heading, lanes=_detection_curves(count))
            )
            annotations.append(
                AnnotationRecord(
                    image_id=pid,
                    width=IMAGE_W,
                    height=IMAGE_H,
                    lanes=_annotation_lanes(count),
                    lane_count=count,
                )
            )
    write_detections(detections, root / "detections.ndjson")
    write_annotations(annotations, root / "annotations.ndjson")

    # region in provider datum, covering every pano with margin
    bd_lngs = [rec["lng"] for rec in pano_records.values()]
    bd_lats = [rec["lat"] for rec in pano_records.values()]
    margin = 0.001
    region = [
        min(bd_lngs) - margin,
        min(bd_lats) - margin,
        max(bd_lngs) + margin,
        max(bd_lats) + margin,
    ]

    truth = {
        "grid": {"origin": [ORIGIN.lng, ORIGIN.lat], "spacing_m": SPACING_M, "n": GRID_N},
        "ways": {
            w.way_id: {
                "edge_id": f"{w.way_id}.0",
                "from": w.from_junction,
                "to": w.to_junction,
                "axis": w.axis,
                "oneway": w.oneway,
                "per_direction_lanes": w.lane_count,
            }
            for w in ways
        },
        "junctions": {jid: [p.lng, p.lat] for jid, p in sorted(junctions.items())},
        "panos": truth_panos,
    }
    (root / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True), encoding="utf-8")

    # both corner chains seed the crawl: n00 is the only junction nothing
    # arrives at, so its two departing chains are the BFS roots
    config = {
        "seeds": [chain_first["wh00"], chain_first["wv00"]],
        "region": region,
        "datum": "bd09",
        "provider": "fixture:provider",
        "osm": "osm.xml",
        "detections": "detections.ndjson",
        "annotations": "annotations.ndjson",
        "out_dir": "out",
        "params": {
            "max_nodes": 2000,
            "max_depth": 2000,
            "max_retries": 2,
            "radius_m": 25.0,
            "lane_width_m": 3.5,
            "tau": 0.02,
        },
    }
    (root / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True), encoding="utf-8")
    return truth
