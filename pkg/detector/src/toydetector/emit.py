"""Convert detector outputs into the pipeline's detection file format.

Slots above the existence threshold are sampled along the shared-curvature
lane model and re-fit as normalized cubics x(y), the boundary representation
the downstream pipeline expects. The newline-delimited JSON format is the
contract: header line {"kind": "detections", "schema_version": 1}, then one
record per image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .model import DetectorOutput, LaneSetDetector
from .scenes import RENDER_MARGIN, lane_x

EXIST_THRESHOLD = 0.5
SAMPLE_ROWS = 24
BAND = (-0.5, 1.5)
CLIP = (-0.45, 1.45)
F_CLAMP = (0.05, 0.45)


@dataclass(frozen=True)
class EmittedLane:
    coeffs: tuple[float, float, float, float]
    y_range: tuple[float, float]
    score: float


def _fit_cubic_in_band(xs: np.ndarray, ys: np.ndarray) -> tuple[float, ...]:
    """Least-squares polynomial that stays inside the off-image band at the
    sample rows; degrades toward a constant if a higher degree strays."""
    for degree in (3, 1, 0):
        coeffs = np.polyfit(ys, xs, degree)
        padded = np.concatenate([np.zeros(3 - degree), coeffs])
        fitted = np.polyval(padded, ys)
        if fitted.min() >= BAND[0] and fitted.max() <= BAND[1]:
            return tuple(float(c) for c in padded)
    return (0.0, 0.0, 0.0, float(np.clip(xs.mean(), *CLIP)))


def slots_to_lanes(output: DetectorOutput, index: int) -> list[EmittedLane]:
    logits = output.exist_logits[index].detach()
    params = output.params[index].detach()
    shared = output.shared[index].detach()
    probs = torch.sigmoid(logits)
    k = float(shared[0])
    f = float(np.clip(float(shared[1]), *F_CLAMP))
    y_lo = f + RENDER_MARGIN
    ys = np.linspace(y_lo, 1.0, SAMPLE_ROWS)
    lanes = []
    for slot in range(output.num_slots):
        score = float(probs[slot])
        if score <= EXIST_THRESHOLD:
            continue
        m, n, b = (float(v) for v in params[slot])
        xs = np.clip(lane_x(ys, k, f, m, n, b), *CLIP)
        coeffs = _fit_cubic_in_band(xs, ys)
        lanes.append(EmittedLane(coeffs=coeffs, y_range=(float(y_lo), 1.0), score=score))
    lanes.sort(key=lambda l: np.polyval(l.coeffs, 1.0))  # left to right at the bottom row
    return lanes


def emit_detections(
    model: LaneSetDetector,
    images: torch.Tensor,
    ids: list[str],
    headings: list[float],
    path: str | Path,
    batch_size: int = 32,
) -> None:
    """Run the detector and write records in the pipeline detection format."""
    model.eval()
    lines = [json.dumps({"kind": "detections", "schema_version": 1}, sort_keys=True)]
    with torch.no_grad():
        for start in range(0, len(ids), batch_size):
            chunk = images[start : start + batch_size]
            output = model(chunk)
            for i in range(chunk.shape[0]):
                lanes = slots_to_lanes(output, i)
                record = {
                    "pano_id": ids[start + i],
                    "heading_deg": headings[start + i],
                    "negative": len(lanes) == 0,
                    "lanes": [
                        {
                            "coeffs": list(l.coeffs),
                            "y_range": list(l.y_range),
                            "score": l.score,
                        }
                        for l in lanes
                    ],
                }
                lines.append(json.dumps(record, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
