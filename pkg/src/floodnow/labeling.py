"""
Damage-class labeling of grid cells by one-dimensional K-means.

Points are sorted once up front so the result does not depend on input
order; assignments are mapped back to the caller's order at the end.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import GridCell

MAX_ITER = 300
DEFAULT_RESTARTS = 10
DEFAULT_K = 3


@dataclass
class KmeansResult:
    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    wcss: float
    n_iter: int = 0


def _assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # argmin returns the first minimum: ties go to the lower centroid index
    return np.argmin(np.abs(points[:, None] - centroids[None, :]), axis=1)


def _wcss(points: np.ndarray, centroids: np.ndarray, assign: np.ndarray) -> float:
    return float(np.sum((points - centroids[assign]) ** 2))


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centroids = [points[rng.integers(len(points))]]
    for _ in range(1, k):
        d2 = np.min((points[:, None] - np.array(centroids)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total <= 0:
            break
        centroids.append(points[rng.choice(len(points), p=d2 / total)])
    return np.array(centroids, dtype=np.float64)


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, int]:
    centroids = _kmeanspp(points, k, rng)
    assign = _assign(points, centroids)
    it = 0
    for it in range(1, MAX_ITER + 1):
        counts = np.bincount(assign, minlength=len(centroids))
        sums = np.bincount(assign, weights=points, minlength=len(centroids))
        # empty clusters keep their previous centroid
        centroids = np.where(counts > 0, sums / np.maximum(counts, 1), centroids)
        new_assign = _assign(points, centroids)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return centroids, assign, it


def _hartigan(points: np.ndarray, centroids: np.ndarray, assign: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Single-point transfers that strictly lower wcss, starting from a Lloyd fixpoint.

    ``points`` must be sorted. Clusters are then contiguous runs, and the only
    candidate moves are the boundary points of adjacent runs: moving point x
    from cluster a to b changes wcss by
    ``n_b/(n_b+1) (x-mu_b)^2 - n_a/(n_a-1) (x-mu_a)^2``. The best move is
    applied until none helps. The result is also a Lloyd fixpoint.
    """
    k = len(centroids)
    rank = np.empty(k, dtype=np.int64)
    rank[np.argsort(centroids, kind="stable")] = np.arange(k)
    a = rank[assign]
    n = np.bincount(a, minlength=k)
    if k < 2 or np.any(n == 0) or np.any(np.diff(a) < 0):
        return centroids, assign
    s = np.bincount(a, weights=points, minlength=k)
    bounds = np.r_[0, np.cumsum(n)]
    scale = max(1.0, float(np.sum((points - points.mean()) ** 2)))
    while True:
        mu = s / n
        best, move = -1e-12 * scale, None
        for c in range(k - 1):
            b = bounds[c + 1]
            if n[c] > 1:  # last point of c joins c + 1
                x = points[b - 1]
                d = n[c + 1] / (n[c + 1] + 1) * (x - mu[c + 1]) ** 2 - n[c] / (n[c] - 1) * (x - mu[c]) ** 2
                if d < best:
                    best, move = d, (c, c + 1, b - 1)
            if n[c + 1] > 1:  # first point of c + 1 joins c
                x = points[b]
                d = n[c] / (n[c] + 1) * (x - mu[c]) ** 2 - n[c + 1] / (n[c + 1] - 1) * (x - mu[c + 1]) ** 2
                if d < best:
                    best, move = d, (c + 1, c, b)
        if move is None:
            break
        src, dst, i = move
        n[src] -= 1
        n[dst] += 1
        s[src] -= points[i]
        s[dst] += points[i]
        bounds[max(src, dst)] += -1 if dst > src else 1
    sorted_assign = np.repeat(np.arange(k), n)
    return s / n, sorted_assign


def kmeans_1d(
    points: Sequence[float],
    k: int,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    n_jobs: int = 1,
) -> KmeansResult:
    """Best-of-``restarts`` K-means on scalar data.

    Each restart is seeded with k-means++ from ``(seed, restart)``, runs
    Lloyd's iterations to a fixpoint and then single-point transfers until no
    transfer lowers wcss. The run with the lowest wcss wins, ties resolved
    toward the lower restart index.
    Centroids in the result are sorted ascending and cluster indices follow
    that order.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 1 or len(pts) == 0:
        raise ValueError("kmeans_1d needs a non-empty 1-D list of points")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    n_distinct = len(np.unique(pts))
    if k > n_distinct:
        raise ValueError(f"k={k} exceeds the number of distinct points ({n_distinct})")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")

    order = np.argsort(pts, kind="stable")
    sorted_pts = pts[order]

    def run(r: int):
        rng = np.random.default_rng([seed, r])
        c, a, it = _lloyd(sorted_pts, k, rng)
        c, a = _hartigan(sorted_pts, c, a)
        return _wcss(sorted_pts, c, a), c, it

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as ex:
            runs = list(ex.map(run, range(restarts)))
    else:
        runs = [run(r) for r in range(restarts)]
    best = min(range(restarts), key=lambda r: (runs[r][0], r))
    _, centroids, n_iter = runs[best]

    centroids = np.sort(centroids)
    sorted_assign = _assign(sorted_pts, centroids)
    assignments = np.empty_like(sorted_assign)
    assignments[order] = sorted_assign
    return KmeansResult(
        k=k,
        centroids=centroids,
        assignments=assignments,
        wcss=_wcss(sorted_pts, centroids, sorted_assign),
        n_iter=n_iter,
    )


def elbow_curve(
    points: Sequence[float], k_range: tuple[int, int], restarts: int = DEFAULT_RESTARTS, seed: int = 0
) -> list[tuple[int, float]]:
    """(k, wcss) for every k in the inclusive range; choosing k is left to the user."""
    lo, hi = k_range
    if lo < 1 or hi < lo:
        raise ValueError(f"invalid k range {k_range}")
    return [(k, kmeans_1d(points, k, restarts, seed).wcss) for k in range(lo, hi + 1)]


def label_cells(
    cells: Sequence[GridCell], k: int = DEFAULT_K, seed: int = 0, restarts: int = DEFAULT_RESTARTS
) -> list[tuple[tuple[int, int], int]]:
    """Ordinal damage class per cell; class 0 holds the lowest-sum centroid."""
    if not cells:
        raise ValueError("label_cells needs at least one cell")
    res = kmeans_1d([c.claim_sum for c in cells], k, restarts, seed)
    return [(c.cell_id, int(a)) for c, a in zip(cells, res.assignments)]


def write_labels_csv(path: str | Path, cells: Sequence[GridCell], labels: Sequence[tuple[tuple[int, int], int]]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_col", "cell_row", "claim_sum", "pde_class"])
        for cell, (_, label) in zip(cells, labels):
            w.writerow([cell.cell_id[0], cell.cell_id[1], repr(cell.claim_sum), label])


def read_labels_csv(path: str | Path) -> dict[tuple[int, int], int]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {(int(r["cell_col"]), int(r["cell_row"])): int(r["pde_class"]) for r in csv.DictReader(fh)}


def write_elbow_csv(path: str | Path, curve: Sequence[tuple[int, float]]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "wcss"])
        for k, wcss in curve:
            w.writerow([k, repr(wcss)])
