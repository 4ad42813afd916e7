"""Detection/annotation record formats, dataset curation ops, and metrics.

File formats are newline-delimited JSON with a one-line envelope header;
readers are strict (invariant violations surface as positioned parse
errors), writers emit only schema fields.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    InsufficientNeighborsError,
    OutOfFrameError,
    PairingError,
    ParseError,
    SchemaVersionError,
)
from .lanegeom import (
    OFF_IMAGE_BAND,
    LaneCurve,
    fit_curve,
    hungarian,
    lane_assignment_costs,
    sample_curve,
)

SCHEMA_VERSION = 1
MAX_LANE_COUNT = 16
GRID_ZONE_CLASSES = ("bus", "no_parking", "junction_grid")
DEFAULT_TAU = 0.02
EVAL_ROWS = 20
COMPLETION_ROWS = 10

Point = tuple[float, float]


@dataclass
class GridZone:
    polygon: list[Point]
    zone_class: str
    area_fraction: float


@dataclass
class AnnotationRecord:
    """Per-image ground-truth lanes in pixel coordinates (v grows downward)."""

    image_id: str
    width: int
    height: int
    lanes: list[list[Point]]
    is_negative: bool = False
    grid_zones: list[GridZone] = field(default_factory=list)
    separators: list[list[Point]] = field(default_factory=list)
    lane_count: int | None = None

    def __post_init__(self):
        if self.lane_count is None:
            self.lane_count = len(self.lanes)


@dataclass
class DetectionRecord:
    """Detector output for one panorama heading: a set of lane curves."""

    pano_id: str
    heading_deg: float
    lanes: list[LaneCurve]
    negative: bool = False
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def lane_count(self) -> int:
        return len(self.lanes)


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    lane_count_accuracy: float
    negative_accuracy: float


def _lane_x_at(points: Sequence[Point], v: float) -> float:
    """x along a v-sorted pixel polyline at row v, linearly interpolated."""
    if v <= points[0][1]:
        return points[0][0]
    for (x0, v0), (x1, v1) in zip(points, points[1:]):
        if v0 <= v <= v1:
            if v1 == v0:
                return x1
            t = (v - v0) / (v1 - v0)
            return x0 + t * (x1 - x0)
    return points[-1][0]


def validate_annotation(rec: AnnotationRecord) -> list[str]:
    """All invariant violations, empty list when the record is valid."""
    out: list[str] = []
    if rec.is_negative and (rec.lanes or rec.lane_count):
        out.append("negative_with_lanes")
    if not rec.is_negative and rec.lane_count != len(rec.lanes):
        out.append("lane_count_mismatch")
    if rec.lane_count is not None and rec.lane_count > MAX_LANE_COUNT:
        out.append("lane_count_exceeds_cap")
    if rec.lane_count is not None and rec.lane_count < 0:
        out.append("lane_count_negative")
    for lane in rec.lanes:
        if len(lane) < 2:
            out.append("lane_too_few_points")
            break
    for lane in rec.lanes:
        if any(v1 < v0 for (_, v0), (_, v1) in zip(lane, lane[1:])):
            out.append("lane_rows_not_increasing")
            break
    pts = [p for lane in rec.lanes for p in lane]
    pts += [p for zone in rec.grid_zones for p in zone.polygon]
    pts += [p for sep in rec.separators for p in sep]
    if any(not (0 <= x <= rec.width and 0 <= v <= rec.height) for x, v in pts):
        out.append("point_out_of_bounds")
    if len(rec.lanes) >= 2 and all(len(lane) >= 2 for lane in rec.lanes):
        lo = max(lane[0][1] for lane in rec.lanes)
        hi = min(lane[-1][1] for lane in rec.lanes)
        if lo <= hi:  # lowest row every lane still covers
            xs = [_lane_x_at(lane, hi) for lane in rec.lanes]
            if any(b < a for a, b in zip(xs, xs[1:])):
                out.append("lanes_not_sorted_left_to_right")
    for zone in rec.grid_zones:
        if zone.zone_class not in GRID_ZONE_CLASSES:
            out.append("grid_zone_class_unknown")
            break
    for zone in rec.grid_zones:
        if not (0.0 < zone.area_fraction <= 1.0):
            out.append("grid_zone_area_fraction_out_of_range")
            break
    return out


def _fit_pixel_lane(points: Sequence[Point]) -> LaneCurve:
    return fit_curve(list(points), min(3, len(points) - 1))


def complete_outer_lane(rec: AnnotationRecord, side: str) -> AnnotationRecord:
    """Reconstruct a missing outermost lane from its neighbors' spacing.

    Existing lanes are fitted, sampled at 10 shared rows, and the median
    adjacent gap is used to translate the outermost lane sideways. Existing
    lane geometry is preserved bit-exactly.
    """
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    if len(rec.lanes) < 2:
        raise InsufficientNeighborsError("need at least 2 lanes to estimate spacing")
    curves = [_fit_pixel_lane(lane) for lane in rec.lanes]
    lo = max(c.y_range[0] for c in curves)
    hi = min(c.y_range[1] for c in curves)
    if not lo < hi:
        raise InsufficientNeighborsError("lanes share no common row span")
    rows = [lo + (hi - lo) * i / (COMPLETION_ROWS - 1) for i in range(COMPLETION_ROWS)]
    sampled = [[x for x, _ in sample_curve(c, rows)] for c in curves]
    gaps = [
        sampled[k + 1][j] - sampled[k][j]
        for k in range(len(sampled) - 1)
        for j in range(len(rows))
    ]
    g = statistics.median(gaps)
    if side == "right":
        new_lane = [(sampled[-1][j] + g, rows[j]) for j in range(len(rows))]
    else:
        new_lane = [(sampled[0][j] - g, rows[j]) for j in range(len(rows))]
    band_lo, band_hi = OFF_IMAGE_BAND[0] * rec.width, OFF_IMAGE_BAND[1] * rec.width
    if all(not (band_lo <= x <= band_hi) for x, _ in new_lane):
        raise OutOfFrameError(f"completed {side} lane lies entirely outside the image band")
    lanes = [list(lane) for lane in rec.lanes]
    if side == "right":
        lanes.append(new_lane)
    else:
        lanes.insert(0, new_lane)
    return AnnotationRecord(
        image_id=rec.image_id,
        width=rec.width,
        height=rec.height,
        lanes=lanes,
        is_negative=rec.is_negative,
        grid_zones=list(rec.grid_zones),
        separators=[list(s) for s in rec.separators],
        lane_count=rec.lane_count + 1,
    )


def _cross(seg_a: Point, seg_b: Point, p: Point) -> float:
    return (seg_b[0] - seg_a[0]) * (p[1] - seg_a[1]) - (seg_b[1] - seg_a[1]) * (p[0] - seg_a[0])


def _nearest_segment(sep: Sequence[Point], p: Point) -> tuple[Point, Point]:
    best = None
    best_d = math.inf
    for a, b in zip(sep, sep[1:]):
        ax, ay = a
        bx, by = b
        dx, dy = bx - ax, by - ay
        L2 = dx * dx + dy * dy
        if L2 == 0:
            d = math.hypot(p[0] - ax, p[1] - ay)
        else:
            t = max(0.0, min(1.0, ((p[0] - ax) * dx + (p[1] - ay) * dy) / L2))
            d = math.hypot(p[0] - (ax + t * dx), p[1] - (ay + t * dy))
        if d < best_d:
            best_d = d
            best = (a, b)
    return best


def suppress_separated_lanes(rec: AnnotationRecord) -> AnnotationRecord:
    """Drop lanes lying across a physical separator from the camera.

    Reference point is the bottom-center of the image; a lane goes when
    strictly more than half its points sit on the opposite side of a
    separator (sides taken against each point's nearest separator segment).
    """
    if not rec.separators:
        return rec
    ref = (rec.width / 2.0, float(rec.height))
    kept: list[list[Point]] = []
    for lane in rec.lanes:
        drop = False
        for sep in rec.separators:
            if len(sep) < 2:
                continue
            opposite = 0
            for p in lane:
                a, b = _nearest_segment(sep, p)
                side_p = _cross(a, b, p)
                side_ref = _cross(a, b, ref)
                if side_p * side_ref < 0:
                    opposite += 1
            if opposite * 2 > len(lane):
                drop = True
                break
        if not drop:
            kept.append(list(lane))
    return AnnotationRecord(
        image_id=rec.image_id,
        width=rec.width,
        height=rec.height,
        lanes=kept,
        is_negative=rec.is_negative,
        grid_zones=list(rec.grid_zones),
        separators=[list(s) for s in rec.separators],
        lane_count=len(kept),
    )


def annotation_curves(rec: AnnotationRecord) -> list[LaneCurve]:
    """Annotation pixel lanes as normalized cubics (short lanes get the
    highest degree their point count supports)."""
    out = []
    for lane in rec.lanes:
        norm = [(x / rec.width, v / rec.height) for x, v in lane]
        out.append(fit_curve(norm, min(3, len(norm) - 1)))
    return out


def evaluate_detections(
    preds: Sequence[DetectionRecord],
    gts: Sequence[AnnotationRecord],
    tau: float = DEFAULT_TAU,
) -> Metrics:
    """Micro-averaged set metrics over images paired by pano/image id.

    Per image the lanes are matched one-to-one (Hungarian over mean-|dx|
    costs at 20 shared rows); a matched pair counts as a true positive when
    its cost is below tau. Zero predictions leave precision at the stated
    1.0 convention; zero ground truths mirror it for recall.
    """
    if tau <= 0:
        raise ValueError("tau must be > 0")
    pred_by_id = {p.pano_id: p for p in preds}
    gt_by_id = {g.image_id: g for g in gts}
    if set(pred_by_id) != set(gt_by_id):
        only_p = sorted(set(pred_by_id) - set(gt_by_id))
        only_g = sorted(set(gt_by_id) - set(pred_by_id))
        raise PairingError(
            f"unmatched image ids (pred-only {only_p[:5]}, gt-only {only_g[:5]})"
        )
    rows = [i / (EVAL_ROWS - 1) for i in range(EVAL_ROWS)]
    tp = 0
    n_pred = 0
    n_gt = 0
    count_hits = 0
    neg_total = 0
    neg_hits = 0
    for image_id in sorted(gt_by_id):
        gt = gt_by_id[image_id]
        pred = pred_by_id[image_id]
        gt_curves = annotation_curves(gt)
        n_pred += len(pred.lanes)
        n_gt += len(gt_curves)
        if pred.lanes and gt_curves:
            costs = lane_assignment_costs(pred.lanes, gt_curves, rows)
            pairs, _ = hungarian(costs)
            tp += sum(1 for r, c in pairs if costs.values[r][c] < tau)
        if pred.lane_count == gt.lane_count:
            count_hits += 1
        if gt.is_negative:
            neg_total += 1
            if pred.lane_count == 0:
                neg_hits += 1
    precision = tp / n_pred if n_pred else 1.0
    recall = tp / n_gt if n_gt else 1.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return Metrics(
        precision=precision,
        recall=recall,
        f1=f1,
        lane_count_accuracy=count_hits / len(gt_by_id) if gt_by_id else 1.0,
        negative_accuracy=neg_hits / neg_total if neg_total else 1.0,
    )


# --- file formats -----------------------------------------------------------

def validate_curve(lane: LaneCurve) -> list[str]:
    out = []
    if any(not math.isfinite(c) for c in lane.coeffs):
        out.append("coeffs_not_finite")
    lo, hi = lane.y_range
    if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
        out.append("y_range_not_increasing")
        return out
    if not (0.0 <= lo and hi <= 1.0):
        out.append("y_range_outside_unit")
    if not (0.0 <= lane.score <= 1.0):
        out.append("score_out_of_range")
    if "coeffs_not_finite" not in out:
        band_lo, band_hi = OFF_IMAGE_BAND
        rows = [lo + (hi - lo) * i / (EVAL_ROWS - 1) for i in range(EVAL_ROWS)]
        if any(not (band_lo <= lane.x_at(y) <= band_hi) for y in rows):
            out.append("x_outside_band")
    return out


def _read_envelope(line: str, kind: str, path: Path) -> None:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid header in {path}: {e}", line=1) from e
    if not isinstance(header, dict) or header.get("kind") != kind:
        raise ParseError(f"expected a {kind} file header in {path}", line=1)
    if header.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"unsupported schema_version {header.get('schema_version')!r} in {path}"
        )


def _curve_to_json(lane: LaneCurve) -> dict:
    return {
        "coeffs": list(lane.coeffs),
        "y_range": list(lane.y_range),
        "score": lane.score,
    }


def _curve_from_json(obj: dict, line_no: int) -> LaneCurve:
    try:
        coeffs = tuple(float(c) for c in obj["coeffs"])
        y_range = tuple(float(v) for v in obj["y_range"])
        score = float(obj["score"])
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"bad lane entry: {e}", line=line_no) from e
    if len(coeffs) != 4 or len(y_range) != 2:
        raise ParseError("lane entry needs 4 coeffs and a 2-value y_range", line=line_no)
    curve = LaneCurve(coeffs=coeffs, y_range=y_range, score=score)
    problems = validate_curve(curve)
    if problems:
        raise ParseError(f"invalid lane curve: {', '.join(problems)}", line=line_no)
    return curve


def write_detections(records: Iterable[DetectionRecord], path: str | Path) -> None:
    path = Path(path)
    lines = [json.dumps({"kind": "detections", "schema_version": SCHEMA_VERSION}, sort_keys=True)]
    for rec in records:
        lines.append(
            json.dumps(
                {
                    "pano_id": rec.pano_id,
                    "heading_deg": rec.heading_deg,
                    "negative": rec.negative,
                    "lanes": [_curve_to_json(l) for l in rec.lanes],
                },
                sort_keys=True,
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_detections(path: str | Path) -> list[DetectionRecord]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise ParseError(f"empty file {path}", line=1)
    _read_envelope(lines[0], "detections", path)
    out: list[DetectionRecord] = []
    known = {"pano_id", "heading_deg", "negative", "lanes"}
    for idx, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid json: {e}", line=idx) from e
        missing = known - set(obj)
        if missing:
            raise ParseError(f"missing fields {sorted(missing)}", line=idx)
        lanes = [_curve_from_json(l, idx) for l in obj["lanes"]]
        out.append(
            DetectionRecord(
                pano_id=str(obj["pano_id"]),
                heading_deg=float(obj["heading_deg"]),
                lanes=lanes,
                negative=bool(obj["negative"]),
                extras={k: v for k, v in obj.items() if k not in known},
            )
        )
    return out


def write_annotations(records: Iterable[AnnotationRecord], path: str | Path) -> None:
    path = Path(path)
    lines = [json.dumps({"kind": "annotations", "schema_version": SCHEMA_VERSION}, sort_keys=True)]
    for rec in records:
        lines.append(
            json.dumps(
                {
                    "image_id": rec.image_id,
                    "width": rec.width,
                    "height": rec.height,
                    "is_negative": rec.is_negative,
                    "lanes": [[[x, v] for x, v in lane] for lane in rec.lanes],
                    "grid_zones": [
                        {
                            "polygon": [[x, v] for x, v in z.polygon],
                            "class": z.zone_class,
                            "area_fraction": z.area_fraction,
                        }
                        for z in rec.grid_zones
                    ],
                    "separators": [[[x, v] for x, v in sep] for sep in rec.separators],
                    "lane_count": rec.lane_count,
                },
                sort_keys=True,
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_annotations(path: str | Path) -> list[AnnotationRecord]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError(f"empty file {path}", line=1)
    _read_envelope(lines[0], "annotations", path)
    out: list[AnnotationRecord] = []
    required = {"image_id", "width", "height", "is_negative", "lanes", "lane_count"}
    for idx, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid json: {e}", line=idx) from e
        missing = required - set(obj)
        if missing:
            raise ParseError(f"missing fields {sorted(missing)}", line=idx)
        try:
            rec = AnnotationRecord(
                image_id=str(obj["image_id"]),
                width=int(obj["width"]),
                height=int(obj["height"]),
                lanes=[[(float(x), float(v)) for x, v in lane] for lane in obj["lanes"]],
                is_negative=bool(obj["is_negative"]),
                grid_zones=[
                    GridZone(
                        polygon=[(float(x), float(v)) for x, v in z["polygon"]],
                        zone_class=str(z["class"]),
                        area_fraction=float(z["area_fraction"]),
                    )
                    for z in obj.get("grid_zones", [])
                ],
                separators=[
                    [(float(x), float(v)) for x, v in sep] for sep in obj.get("separators", [])
                ],
                lane_count=int(obj["lane_count"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"bad annotation record: {e}", line=idx) from e
        problems = validate_annotation(rec)
        if problems:
            raise ParseError(f"invalid annotation: {', '.join(problems)}", line=idx)
        out.append(rec)
    return out
