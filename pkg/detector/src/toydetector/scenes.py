"""Synthetic lane scenes with a shared-curvature ground-plane lane model.

Every scene shares one curvature/horizon pair (k, f); each lane adds
(m, n, b) so its image-space center line is

    x(y) = k/(y - f)^2 + m/(y - f) + n + b*y - b*f

with x, y normalized to [0, 1] and y growing downward. Scenes render on a
small grayscale raster; roughly one in ten is a negative (no lanes, only
distractor strokes).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IMAGE_SIZE = 128
MAX_LANES = 6
NEGATIVE_RATE = 0.1
RENDER_MARGIN = 0.2  # rows start this far below the horizon f

K_RANGE =(-0.002, 0.002)
F_RANGE = (0.15, 0.30)
M_RANGE = (-0.02, 0.02)
B_RANGE = (-0.10, 0.10)
X_SAFE = (0.03, 0.97)


@dataclass(frozen=True)
class LaneParams:
    m: float
    n: float
    b: float


@dataclass
class SyntheticScene:
    scene_id: str
    image: np.ndarray  # (IMAGE_SIZE, IMAGE_SIZE) float32 in [0, 1]
    k: float
    f: float
    lanes: list[LaneParams] = field(default_factory=list)
    negative: bool = False

    @property
    def lane_count(self) -> int:
        return len(self.lanes)


def lane_x(y, k: float, f: float, m: float, n: float, b: float):
    d = y - f
    return k / (d * d) + m / d + n + b * y - b * f


def render_rows(f: float) -> np.ndarray:
    """Raster rows (pixel indices) below the horizon margin."""
    ys = np.arange(IMAGE_SIZE) / (IMAGE_SIZE - 1)
    return np.nonzero(ys >= f + RENDER_MARGIN)[0]


def _sample_lane(rng: np.random.Generator, k: float, f: float, slot: int, total: int) -> LaneParams | None:
    base = (slot + 1) / (total + 1)
    for _ in range(20):
        n = base + rng.uniform(-0.5, 0.5) / (total + 1)
        m = rng.uniform(*M_RANGE)
        b = rng.uniform(*B_RANGE)
        rows = render_rows(f)
        ys = rows / (IMAGE_SIZE - 1)
        xs = lane_x(ys, k, f, m, n, b)
        if xs.min() >= X_SAFE[0] and xs.max() <= X_SAFE[1]:
            return LaneParams(float(m), float(n), float(b))
    return LaneParams(0.0, float(base), 0.0)  # straight fallback always fits


def _paint_lane(image: np.ndarray, k: float, f: float, lane: LaneParams) -> None:
    # 3 px stroke, full intensity at the exact center column
    rows = render_rows(f)
    ys = rows / (IMAGE_SIZE - 1)
    xs = lane_x(ys, k, f, lane.m, lane.n, lane.b)
    cols = np.clip(np.rint(xs * (IMAGE_SIZE - 1)).astype(int), 0, IMAGE_SIZE - 1)
    image[rows, np.clip(cols - 1, 0, IMAGE_SIZE - 1)] = np.maximum(
        image[rows, np.clip(cols - 1, 0, IMAGE_SIZE - 1)], 0.55
    )
    image[rows, np.clip(cols + 1, 0, IMAGE_SIZE - 1)] = np.maximum(
        image[rows, np.clip(cols + 1, 0, IMAGE_SIZE - 1)], 0.55
    )
    image[rows, cols] = 1.0


def _paint_distractors(image: np.ndarray, rng: np.random.Generator) -> None:
    # horizontal dashes and short diagonal scratches, nothing lane-shaped
    for _ in range(rng.integers(3, 7)):
        r = int(rng.integers(IMAGE_SIZE // 2, IMAGE_SIZE))
        c0 = int(rng.integers(0, IMAGE_SIZE - 20))
        image[r, c0 : c0 + int(rng.integers(8, 20))] = 0.8
    for _ in range(rng.integers(2, 5)):
        r0 = int(rng.integers(IMAGE_SIZE // 2, IMAGE_SIZE - 12))
        c0 = int(rng.integers(0, IMAGE_SIZE - 12))
        for t in range(10):
            image[r0 + t, min(IMAGE_SIZE - 1, c0 + t)] = 0.6


def generate_scene(seed: int, force_count: int | None = None) -> SyntheticScene:
    """Deterministic scene for a seed; force_count pins the lane count
    (0 forces a negative)."""
    rng = np.random.default_rng(seed)
    negative = rng.random() < NEGATIVE_RATE if force_count is None else force_count == 0
    count = (
        int(rng.integers(1, MAX_LANES + 1))
        if force_count is None
        else int(force_count)
    )
    k = float(rng.uniform(*K_RANGE))
    f = float(rng.uniform(*F_RANGE))
    image = np.zeros((IMAGE_SIZE, IMAGE_SIZE), dtype=np.float32)
    if negative:
        _paint_distractors(image, rng)
        return SyntheticScene(scene_id=f"s{seed:08d}", image=image, k=0.0, f=0.0, lanes=[], negative=True)
    lanes = [_sample_lane(rng, k, f, i, count) for i in range(count)]
    for lane in lanes:
        _paint_lane(image, k, f, lane)
    return SyntheticScene(scene_id=f"s{seed:08d}", image=image, k=k, f=f, lanes=lanes, negative=False)
