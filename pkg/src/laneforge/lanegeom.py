"""Lane curve model, least-squares fitting, and optimal bipartite assignment.

Curves are cubics x(y) in normalized image coordinates (y grows downward);
the assignment solver is an O(n^3) Hungarian with a deterministic tie-break
so golden outputs stay stable across runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateFitError, InsufficientPointsError

NO_OVERLAP_PENALTY = 10.0
OFF_IMAGE_BAND = (-0.5, 1.5)


@dataclass(frozen=True)
class LaneCurve:
    """Cubic x(y) = c3*y^3 + c2*y^2 + c1*y + c0 valid on y_range."""

    coeffs: tuple[float, float, float, float]
    y_range: tuple[float, float]
    score: float = 1.0
    residual_rms: float | None = None

    def x_at(self, y: float) -> float:
        c3, c2, c1, c0 = self.coeffs
        return ((c3 * y + c2) * y + c1) * y + c0


@dataclass(frozen=True)
class CostMatrix:
    """Rectangular non-negative cost table, rows = predictions, cols = ground truths."""

    values: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        widths = {len(row) for row in self.values}
        if len(widths) > 1:
            raise ValueError("cost matrix is ragged")
        for row in self.values:
            for v in row:
                if not math.isfinite(v) or v < 0.0:
                    raise ValueError(f"cost entries must be finite and >= 0, got {v}")

    @property
    def rows(self) -> int:
        return len(self.values)

    @property
    def cols(self) -> int:
        return len(self.values[0]) if self.values else 0


def sample_curve(curve: LaneCurve, rows: Sequence[float]) -> list[tuple[float, float]]:
    """Evaluate the curve at the given y rows; out-of-range rows are skipped."""
    y_top, y_bottom = curve.y_range
    kept = sorted(y for y in rows if y_top <= y <= y_bottom)
    return [(curve.x_at(y), y) for y in kept]


def fit_curve(points: Sequence[tuple[float, float]], degree: int) -> LaneCurve:
    """Least-squares polynomial x(y) of the requested degree (1, 2 or 3).

    Returns a LaneCurve with zero-padded cubic coefficients, y_range spanning
    the input rows, and the RMS residual of the fit attached.
    """
    if degree not in (1, 2, 3):
        raise ValueError(f"degree must be 1, 2 or 3, got {degree}")
    if len(points) < degree + 1:
        raise InsufficientPointsError(
            f"{len(points)} points cannot determine a degree-{degree} fit"
        )
    ys = np.array([p[1] for p in points], dtype=float)
    xs = np.array([p[0] for p in points], dtype=float)
    design = np.vander(ys, degree + 1)  # columns y^degree .. 1
    if np.linalg.matrix_rank(design) < degree + 1:
        raise DegenerateFitError("rank-deficient design (rows collapse)")
    sol, *_ = np.linalg.lstsq(design, xs, rcond=None)
    fitted = design @ sol
    rms = float(np.sqrt(np.mean((fitted - xs) ** 2)))
    coeffs = [0.0] * (3 - degree) + [float(c) for c in sol]
    return LaneCurve(
        coeffs=(coeffs[0], coeffs[1], coeffs[2], coeffs[3]),
        y_range=(float(ys.min()), float(ys.max())),
        score=1.0,
        residual_rms=rms,
    )


def _solve_potentials(cost: list[list[float]]) -> tuple[float, list[float], list[float]]:
    """Optimal value plus optimal LP duals (u rows, v cols) for a matrix with
    len(cost) <= len(cost[0]). Classic Hungarian potentials formulation."""
    n, m = len(cost), len(cost[0])
    INF = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = -1
            row = cost[i0 - 1]
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    total = 0.0
    for j in range(1, m + 1):
        if p[j]:
            total += cost[p[j] - 1][j - 1]
    return total, u[1:], v[1:]


def _solve_value(matrix: list[list[float]], rows: list[int], cols: list[int]) -> float:
    """Optimal assignment value over the given row/col index subsets."""
    if not rows or not cols:
        return 0.0
    if len(rows) <= len(cols):
        sub = [[matrix[r][c] for c in cols] for r in rows]
    else:
        sub = [[matrix[r][c] for r in rows] for c in cols]
    return _solve_potentials(sub)[0]


def hungarian(costs: CostMatrix | Sequence[Sequence[float]]) -> tuple[list[tuple[int, int]], float]:
    """Minimum-cost one-to-one assignment of size min(rows, cols).

    Among all optimal assignments returns the one whose sorted (row, col)
    pair list is lexicographically smallest: pairs are forced greedily in
    (row, col) order, a candidate being acceptable when the optimum of the
    reduced problem still meets the overall optimal total. Zero reduced cost
    against the optimal duals is used to prune candidates (complementary
    slackness: a pair in any optimal assignment prices out to zero).
    """
    if not isinstance(costs, CostMatrix):
        costs = CostMatrix(tuple(tuple(float(v) for v in row) for row in costs))
    n_rows, n_cols = costs.rows, costs.cols
    if n_rows == 0 or n_cols == 0:
        return [], 0.0
    matrix = [list(row) for row in costs.values]
    if n_rows <= n_cols:
        total, u, v = _solve_potentials(matrix)
    else:
        total, v, u = _solve_potentials([[matrix[r][c] for r in range(n_rows)] for c in range(n_cols)])
    scale = max(1.0, max(max(row) for row in matrix))
    atol = 1e-9 * scale

    rows_left = list(range(n_rows))
    cols_left = list(range(n_cols))
    chosen: list[tuple[int, int]] = []
    budget = total
    for _ in range(min(n_rows, n_cols)):
        placed = False
        for r in rows_left:
            for c in cols_left:
                if matrix[r][c] - u[r] - v[c] > atol:
                    continue
                rest = _solve_value(
                    matrix,
                    [rr for rr in rows_left if rr != r],
                    [cc for cc in cols_left if cc != c],
                )
                if matrix[r][c] + rest <= budget + atol:
                    chosen.append((r, c))
                    budget -= matrix[r][c]
                    rows_left.remove(r)
                    cols_left.remove(c)
                    placed = True
                    break
            if placed:
                break
        if not placed:  # numeric corner: fall back to unfiltered scan
            for r in rows_left:
                for c in cols_left:
                    rest = _solve_value(
                        matrix,
                        [rr for rr in rows_left if rr != r],
                        [cc for cc in cols_left if cc != c],
                    )
                    if matrix[r][c] + rest <= budget + atol:
                        chosen.append((r, c))
                        budget -= matrix[r][c]
                        rows_left.remove(r)
                        cols_left.remove(c)
                        placed = True
                        break
                if placed:
                    break
        if not placed:
            raise AssertionError("assignment extraction lost the optimum")
    chosen.sort()
    return chosen, sum(matrix[r][c] for r, c in chosen)


def lane_assignment_costs(
    preds: Sequence[LaneCurve],
    gts: Sequence[LaneCurve],
    rows: Sequence[float],
    no_overlap_penalty: float = NO_OVERLAP_PENALTY,
) -> CostMatrix:
    """Mean |x_pred - x_gt| over rows inside both y_ranges; disjoint ranges
    cost the fixed penalty so the matrix stays finite."""
    if not rows:
        raise ValueError("rows must be non-empty")
    table = []
    for p in preds:
        row = []
        for g in gts:
            lo = max(p.y_range[0], g.y_range[0])
            hi = min(p.y_range[1], g.y_range[1])
            shared = [y for y in rows if lo <= y <= hi]
            if not shared:
                row.append(no_overlap_penalty)
            else:
                row.append(sum(abs(p.x_at(y) - g.x_at(y)) for y in shared) / len(shared))
        table.append(tuple(row))
    return CostMatrix(tuple(table))
