"""Trajectory formation and discrete Fréchet map matching.

Panorama chains become observation tracks, tracks are pre-split near
junctions, and each track is matched whole to the single road edge with the
smallest discrete Fréchet distance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .basemap import RoadGraph
from .errors import DatumMismatchError, EmptyPolylineError, ParseError
from .geodesy import Datum, GeoPoint, M_PER_DEG, bearing_deg, haversine_m
from .laneio import DetectionRecord
from .svcrawl import Catalog

DEFAULT_MATCH_RADIUS_M = 25.0
DEFAULT_TRACK_GAP_M = 100.0
DEFAULT_TRACK_BEARING_DEG = 60.0
DEFAULT_JUNCTION_SPLIT_M = 15.0
EDGE_RESAMPLE_STEP_M = 10.0  # panorama spacing scale; see match_track


@dataclass(frozen=True)
class TrackPoint:
    pano_id: str
    position: GeoPoint
    lane_count: int | None  # None when no usable detection exists


@dataclass
class ObservationTrack:
    track_id: str
    points: list[TrackPoint]

    def positions(self) -> list[GeoPoint]:
        return [p.position for p in self.points]


@dataclass(frozen=True)
class MatchResult:
    track_id: str
    edge_id: str | None
    frechet_m: float
    accepted: bool


def euclidean(a: Sequence[float], b: Sequence[float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def discrete_frechet(P: Sequence, Q: Sequence, metric: Callable = euclidean) -> float:
    """Discrete Fréchet distance via the standard O(n*m) dynamic program:

        ca(i,j) = max(d(p_i, q_j), min(ca(i-1,j), ca(i,j-1), ca(i-1,j-1)))
    """
    if len(P) == 0 or len(Q) == 0:
        raise EmptyPolylineError("discrete Fréchet needs non-empty polylines")
    n, m = len(P), len(Q)
    prev = [math.inf] * (m + 1)
    prev[0] = 0.0  # virtual start cell so ca(1,1) = d(p1,q1)
    for i in range(1, n + 1):
        cur = [math.inf] * (m + 1)
        p = P[i - 1]
        for j in range(1, m + 1):
            reach = min(prev[j], cur[j - 1], prev[j - 1])
            cur[j] = max(metric(p, Q[j - 1]), reach)
        prev = cur
        prev[0] = math.inf
    return prev[m]


def _geo_metric(a: GeoPoint, b: GeoPoint) -> float:
    return haversine_m(a, b)


def _wrap_deg(delta: float) -> float:
    return (delta + 180.0) % 360.0 - 180.0


def build_tracks(
    catalog: Catalog,
    detections: Sequence[DetectionRecord],
    gap_m: float = DEFAULT_TRACK_GAP_M,
    bearing_change_deg: float = DEFAULT_TRACK_BEARING_DEG,
) -> list[ObservationTrack]:
    """Chain linked panoramas into tracks, carrying per-point lane counts.

    Walks greedily from each unvisited record, always taking the unvisited
    link whose bearing deviates least from the current heading; a chain ends
    when the best step jumps more than gap_m or turns more than
    bearing_change_deg. Negative or empty detections contribute null counts
    so they never vote downstream.
    """
    if catalog.datum != Datum.WGS84:
        raise DatumMismatchError("build_tracks needs a WGS-84 catalog (run the transform stage)")
    votes: dict[str, int | None] = {}
    for det in detections:
        votes[det.pano_id] = det.lane_count if (not det.negative and det.lane_count > 0) else None
    by_id = {rec.pano_id: rec for rec in catalog.records}
    visited: set[str] = set()
    tracks: list[ObservationTrack] = []
    for rec in catalog.records:
        if rec.pano_id in visited:
            continue
        chain = [rec]
        visited.add(rec.pano_id)
        heading = rec.heading_deg
        while True:
            cur = chain[-1]
            candidates = [
                by_id[link] for link in cur.links if link in by_id and link not in visited
            ]
            if not candidates:
                break
            if heading is None:
                nxt = candidates[0]
            else:
                nxt = min(
                    candidates,
                    key=lambda c: abs(_wrap_deg(bearing_deg(cur.position, c.position) - heading)),
                )
            step = haversine_m(cur.position, nxt.position)
            if step > gap_m:
                break
            step_bearing = bearing_deg(cur.position, nxt.position)
            if heading is not None and abs(_wrap_deg(step_bearing - heading)) > bearing_change_deg:
                break
            chain.append(nxt)
            visited.add(nxt.pano_id)
            heading = step_bearing
        if len(chain) >= 2:
            tracks.append(
                ObservationTrack(
                    track_id=f"t{len(tracks):04d}",
                    points=[
                        TrackPoint(r.pano_id, r.position, votes.get(r.pano_id))
                        for r in chain
                    ],
                )
            )
    return tracks


def split_tracks_at_junctions(
    tracks: Sequence[ObservationTrack],
    graph: RoadGraph,
    junction_radius_m: float = DEFAULT_JUNCTION_SPLIT_M,
) -> list[ObservationTrack]:
    """Cut tracks at junction-adjacent panoramas so each piece spans one edge.

    Within every maximal run of consecutive points lying within
    junction_radius_m of some junction, the track is cut once at the point
    nearest its junction; the cut point belongs to both halves.
    """
    junction_pts = list(graph.junctions.values())
    out: list[ObservationTrack] = []
    for track in tracks:
        if not junction_pts:
            out.append(track)
            continue
        dists = [
            min(haversine_m(p.position, j) for j in junction_pts) for p in track.points
        ]
        flagged = [d <= junction_radius_m for d in dists]
        cuts: list[int] = []
        i = 0
        while i < len(flagged):
            if flagged[i]:
                j = i
                while j + 1 < len(flagged) and flagged[j + 1]:
                    j += 1
                run = range(i, j + 1)
                cuts.append(min(run, key=lambda k: dists[k]))
                i = j + 1
            else:
                i += 1
        interior = [c for c in cuts if 0 < c < len(track.points) - 1]
        if not interior:
            out.append(track)
            continue
        bounds = [0] + interior + [len(track.points) - 1]
        piece = 0
        for a, b in zip(bounds, bounds[1:]):
            pts = track.points[a : b + 1]
            if len(pts) >= 2:
                out.append(ObservationTrack(track_id=f"{track.track_id}.{piece}", points=pts))
                piece += 1
    return out


def _bbox(points: Sequence[GeoPoint]) -> tuple[float, float, float, float]:
    lngs = [p.lng for p in points]
    lats = [p.lat for p in points]
    return min(lngs), min(lats), max(lngs), max(lats)


def densify(points: Sequence[GeoPoint], step_m: float) -> list[GeoPoint]:
    """Insert linearly interpolated vertices so spacing never exceeds step_m."""
    out = [points[0]]
    for a, b in zip(points, points[1:]):
        length = haversine_m(a, b)
        pieces = max(1, math.ceil(length / step_m))
        for k in range(1, pieces + 1):
            t = k / pieces
            out.append(GeoPoint(a.lng + t * (b.lng - a.lng), a.lat + t * (b.lat - a.lat)))
    return out


def match_track(track: ObservationTrack, graph: RoadGraph, radius_m: float = DEFAULT_MATCH_RADIUS_M) -> MatchResult:
    """Match one track to the edge minimizing the discrete Fréchet distance.

    Candidate edges are pre-filtered by bounding boxes inflated by the
    acceptance radius; two-way edges are also tried against their reversed
    geometry. Ties go to the smallest edge id.

    Candidate geometry is densified to the panorama spacing scale first: the
    discrete distance couples vertices only, so a long straight way stored
    as two OSM nodes would otherwise sit half its length from any track.
    """
    if radius_m <= 0:
        raise ValueError("radius_m must be > 0")
    t_lng0, t_lat0, t_lng1, t_lat1 = _bbox(track.positions())
    step = min(EDGE_RESAMPLE_STEP_M, radius_m)
    best_d = math.inf
    best_edge: str | None = None
    for edge in sorted(graph.edges, key=lambda e: e.edge_id):
        e_lng0, e_lat0, e_lng1, e_lat1 = _bbox(edge.geometry)
        coslat = max(0.01, math.cos(math.radians((e_lat0 + e_lat1) / 2.0)))
        dlng = radius_m / (M_PER_DEG * coslat)
        dlat = radius_m / M_PER_DEG
        if e_lng0 - dlng > t_lng1 or e_lng1 + dlng < t_lng0:
            continue
        if e_lat0 - dlat > t_lat1 or e_lat1 + dlat < t_lat0:
            continue
        geometry = densify(edge.geometry, step)
        d = discrete_frechet(track.positions(), geometry, metric=_geo_metric)
        if not edge.oneway:
            d = min(d, discrete_frechet(track.positions(), geometry[::-1], metric=_geo_metric))
        if d < best_d:
            best_d = d
            best_edge = edge.edge_id
    if best_edge is None:
        return MatchResult(track.track_id, None, math.inf, False)
    return MatchResult(track.track_id, best_edge, best_d, best_d <= radius_m)


def match_tracks(tracks: Sequence[ObservationTrack], graph: RoadGraph, radius_m: float = DEFAULT_MATCH_RADIUS_M) -> list[MatchResult]:
    return [match_track(t, graph, radius_m) for t in tracks]


# --- diagnostic match dump (newline-delimited, no header) --------------------

def write_matches(results: Sequence[MatchResult], path: str | Path) -> None:
    path = Path(path)
    lines = []
    for r in results:
        lines.append(
            json.dumps(
                {
                    "track_id": r.track_id,
                    "edge_id": r.edge_id,
                    "frechet_m": None if r.edge_id is None else r.frechet_m,
                    "accepted": r.accepted,
                },
                sort_keys=True,
            )
        )
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_matches(path: str | Path) -> list[MatchResult]:
    path = Path(path)
    out = []
    for idx, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
            frechet = obj["frechet_m"]
            out.append(
                MatchResult(
                    track_id=str(obj["track_id"]),
                    edge_id=None if obj["edge_id"] is None else str(obj["edge_id"]),
                    frechet_m=math.inf if frechet is None else float(frechet),
                    accepted=bool(obj["accepted"]),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ParseError(f"bad match record: {e}", line=idx) from e
    return out
