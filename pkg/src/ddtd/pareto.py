"""Pareto dominance, non-dominated sorting, crowding distance and hypervolume.

All objectives are minimized.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .field import Sample


@dataclass(frozen=True)
class FrontAssignment:
    ranks: np.ndarray  # 1 = non-dominated
    crowding: np.ndarray  # crowding distance within each point's own front

    @property
    def first_front(self) -> np.ndarray:
        return np.flatnonzero(self.ranks == 1)


def dominates(a, b) -> bool:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"objective vectors differ in length: {a.shape} vs {b.shape}")
    return bool(np.all(a <= b) and np.any(a < b))


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :] if pts.size else pts.reshape(0, 0)
    return pts


def dominance_matrix(points) -> np.ndarray:
    """``D[i, j]`` is True when point i dominates point j."""
    pts = _as_points(points)
    le = np.all(pts[:, None, :] <= pts[None, :, :], axis=2)
    lt = np.any(pts[:, None, :] < pts[None, :, :], axis=2)
    return le & lt


def non_dominated_sort(points) -> FrontAssignment:
    """Fast non-dominated sort (Deb et al., 2002) with per-front crowding."""
    pts = _as_points(points)
    n = len(pts)
    if n == 0:
        raise ValueError("cannot sort an empty point set")
    dom = dominance_matrix(pts)
    remaining = dom.sum(axis=0)  # number of dominators of each point
    ranks = np.zeros(n, dtype=int)
    crowding = np.zeros(n)
    front = np.flatnonzero(remaining == 0)
    rank = 1
    while front.size:
        ranks[front] = rank
        crowding[front] = crowding_distance(pts[front])
        remaining = remaining - dom[front].sum(axis=0)
        remaining[front] = -1
        front = np.flatnonzero(remaining == 0)
        rank += 1
    return FrontAssignment(ranks, crowding)


def crowding_distance(front) -> np.ndarray:
    pts = _as_points(front)
    n = len(pts)
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
        return dist
    for col in pts.T:
        order = np.argsort(col, kind="stable")
        lo, hi = col[order[0]], col[order[-1]]
        dist[order[0]] = dist[order[-1]] = np.inf
        span = hi - lo
        if span <= 0:
            continue
        gaps = (col[order[2:]] - col[order[:-2]]) / span
        dist[order[1:-1]] += gaps
    return dist


def select_elites(samples: Sequence[Sample], max_count: int) -> list[Sample]:
    """Rank-one samples, duplicates collapsed, truncated by crowding distance.

    Samples whose evaluation failed are ignored. Among samples with exactly
    equal objective vectors only the lowest id is kept.
    """
    if max_count < 1:
        raise ValueError("max_count must be >= 1")
    for s in samples:
        if not s.evaluated:
            raise RuntimeError(f"sample {s.id} has not been evaluated")
    pool = sorted((s for s in samples if s.selectable), key=lambda s: s.id)
    seen = set()
    unique = []
    for s in pool:
        key = tuple(np.asarray(s.objectives, dtype=float).tolist())
        if key not in seen:
            seen.add(key)
            unique.append(s)
    if not unique:
        return []
    objs = np.array([s.objectives for s in unique], dtype=float)
    fronts = non_dominated_sort(objs)
    first = fronts.first_front
    if first.size > max_count:
        # stable: ties in crowding keep the lower id
        order = np.argsort(-fronts.crowding[first], kind="stable")
        first = np.sort(first[order[:max_count]])
    return [unique[i] for i in first]


# -- hypervolume -------------------------------------------------------------

def _hv2d(pts: np.ndarray, ref: np.ndarray) -> float:
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    volume = 0.0
    best_y = ref[1]
    for x, y in pts[order]:
        if y < best_y:
            volume += (ref[0] - x) * (best_y - y)
            best_y = y
    return volume


def _hv3d(pts: np.ndarray, ref: np.ndarray) -> float:
    # sweep along the last objective, accumulating 2D slice areas
    order = np.argsort(pts[:, 2], kind="stable")
    pts = pts[order]
    volume = 0.0
    for i in range(len(pts)):
        upper = pts[i + 1, 2] if i + 1 < len(pts) else ref[2]
        depth = upper - pts[i, 2]
        if depth > 0:
            volume += _hv2d(pts[: i + 1, :2], ref[:2]) * depth
    return volume


def hypervolume(points, reference) -> float:
    """Exact dominated hypervolume for two or three objectives.

    Points that do not strictly dominate the reference are ignored.
    """
    ref = np.asarray(reference, dtype=float)
    pts = _as_points(points)
    if pts.size == 0:
        return 0.0
    if pts.shape[1] != ref.size:
        raise ValueError("points and reference differ in dimension")
    if ref.size not in (2, 3):
        raise ValueError(f"hypervolume supports 2 or 3 objectives, got {ref.size}")
    pts = pts[np.all(pts < ref, axis=1)]
    if len(pts) == 0:
        return 0.0
    if ref.size == 2:
        return float(_hv2d(pts, ref))
    return float(_hv3d(pts, ref))


def normalized_hypervolume(points, reference, baseline_value: float) -> float:
    if not baseline_value > 0:
        raise ValueError(f"baseline hypervolume must be positive, got {baseline_value}")
    return hypervolume(points, reference) / baseline_value


def reference_point(objectives, margin: float = 0.1) -> np.ndarray:
    """Componentwise worst value pushed outward by ``margin`` of its magnitude.

    For positive maxima this is ``max * (1 + margin)``; negative or zero
    maxima are moved outward as well so every point stays strictly inside.
    """
    objs = _as_points(objectives)
    worst = objs.max(axis=0)
    span = objs.max(axis=0) - objs.min(axis=0)
    step = margin * np.abs(worst)
    step = np.where(step > 0, step, np.where(span > 0, margin * span, margin))
    return worst + step


# -- export ------------------------------------------------------------------

def write_front_csv(samples: Sequence[Sample], path) -> None:
    samples = list(samples)
    n_obj = len(samples[0].objectives) if samples else 0
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "iteration_born"] + [f"J{i + 1}" for i in range(n_obj)])
        for s in samples:
            writer.writerow([s.id, s.iteration_born] + [repr(float(v)) for v in s.objectives])


def read_front_csv(path) -> list[tuple[int, int, np.ndarray]]:
    rows = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            rows.append((int(row[0]), int(row[1]), np.array([float(v) for v in row[2:]])))
    return rows
