"""
Histogram-based, leaf-wise regression tree on gradient statistics.

Histograms are accumulated per bundle column and then unpacked into one
histogram per original feature, so split search (and the recorded split
feature) always refers to original features.
"""

from __future__ import annotations

import heapq
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bundling import FeatureBundle, bundle_matrix, singleton_bundles


@dataclass
class TreeNode:
    """Read-only view of one node of a ``Tree``."""

    feature: int
    threshold: int
    categorical: bool
    left: int
    right: int
    gain: float
    value: float
    count: int

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    categorical: np.ndarray
    left: np.ndarray
    right: np.ndarray
    gain: np.ndarray
    value: np.ndarray
    count: np.ndarray
    depth: np.ndarray

    def __len__(self):
        return len(self.feature)

    def node(self, i: int) -> TreeNode:
        return TreeNode(
            int(self.feature[i]), int(self.threshold[i]), bool(self.categorical[i]),
            int(self.left[i]), int(self.right[i]), float(self.gain[i]), float(self.value[i]), int(self.count[i]),
        )

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def predict_binned(self, Xb: np.ndarray) -> np.ndarray:
        node = np.zeros(Xb.shape[0], dtype=np.int64)
        for _ in range(self.max_depth):
            f = self.feature[node]
            idx = np.flatnonzero(f >= 0)
            if len(idx) == 0:
                break
            nd = node[idx]
            fv = Xb[idx, self.feature[nd]]
            thr = self.threshold[nd]
            go_left = np.where(self.categorical[nd], fv == thr, fv <= thr)
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
        return self.value[node]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "categorical": [bool(c) for c in self.categorical],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "gain": self.gain.tolist(),
            "value": self.value.tolist(),
            "count": self.count.tolist(),
            "depth": self.depth.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.array(d["feature"], dtype=np.int64),
            threshold=np.array(d["threshold"], dtype=np.int64),
            categorical=np.array(d["categorical"], dtype=bool),
            left=np.array(d["left"], dtype=np.int64),
            right=np.array(d["right"], dtype=np.int64),
            gain=np.array(d["gain"], dtype=np.float64),
            value=np.array(d["value"], dtype=np.float64),
            count=np.array(d["count"], dtype=np.int64),
            depth=np.array(d["depth"], dtype=np.int64),
        )


class HistogramLayout:
    """Precomputed index maps between bundle histograms and feature histograms."""

    def __init__(self, binned: np.ndarray, bundles: list[FeatureBundle], n_bins, categorical=None):
        binned = np.asarray(binned, dtype=np.int32)
        self.binned = binned
        self.binned_T = np.ascontiguousarray(binned.T)
        self.n_bins = np.asarray(n_bins, dtype=np.int64)
        m = binned.shape[1]
        self.categorical = np.zeros(m, dtype=bool) if categorical is None else np.asarray(categorical, dtype=bool)
        self.bundles = bundles
        self.bundle_sizes = np.array([b.n_bins for b in bundles], dtype=np.int64)
        self.bundle_base = np.concatenate([[0], np.cumsum(self.bundle_sizes)[:-1]]).astype(np.int64)
        self.total_bins = int(self.bundle_sizes.sum())
        self.codes_T = np.ascontiguousarray(bundle_matrix(binned, bundles).T)

        owner = np.empty(m, dtype=np.int64)
        offset = np.empty(m, dtype=np.int64)
        for c, bd in enumerate(bundles):
            for mem, off in zip(bd.members, bd.offsets):
                owner[mem] = c
                offset[mem] = off
        self.feat_start = np.concatenate([[0], np.cumsum(self.n_bins)[:-1]]).astype(np.int64)
        size = int(self.n_bins.sum())
        self.pos_feature = np.repeat(np.arange(m), self.n_bins)
        self.pos_bin = np.arange(size) - np.repeat(self.feat_start, self.n_bins)
        # bin 0 of a multi-member bundle is shared, so it is derived from node totals
        shared = np.array([len(bundles[owner[j]].members) > 1 for j in range(m)], dtype=bool)
        self.derive_zero = shared
        gather = self.bundle_base[owner][self.pos_feature] + offset[self.pos_feature] + self.pos_bin
        zero_pos = self.pos_bin == 0
        gather[zero_pos & shared[self.pos_feature]] = self.total_bins  # points at an appended 0
        self.gather = gather
        self.is_numeric_pos = ~self.categorical[self.pos_feature]
        self.last_bin_pos = self.pos_bin == self.n_bins[self.pos_feature] - 1

    def build(self, rows: np.ndarray, gw: np.ndarray, hw: np.ndarray, n_jobs: int = 1) -> np.ndarray:
        """(3, total_bins) array of gradient, hessian and row-count sums."""
        g_r, h_r = gw[rows], hw[rows]

        def column(c: int) -> np.ndarray:
            codes = self.codes_T[c, rows]
            size = int(self.bundle_sizes[c])
            return np.stack([
                np.bincount(codes, weights=g_r, minlength=size),
                np.bincount(codes, weights=h_r, minlength=size),
                np.bincount(codes, minlength=size).astype(np.float64),
            ])

        if n_jobs > 1:
            with ThreadPoolExecutor(n_jobs) as ex:
                parts = list(ex.map(column, range(len(self.bundles))))
            return np.concatenate(parts, axis=1)
        # one pass over all columns; each bin still accumulates its rows in
        # row order, so sums match the per-column path bit for bit
        flat = (self.codes_T[:, rows] + self.bundle_base[:, None]).ravel()
        nb = len(self.bundles)
        return np.stack([
            np.bincount(flat, weights=np.tile(g_r, nb), minlength=self.total_bins),
            np.bincount(flat, weights=np.tile(h_r, nb), minlength=self.total_bins),
            np.bincount(flat, minlength=self.total_bins).astype(np.float64),
        ])

    def feature_histograms(self, hist: np.ndarray, totals: np.ndarray) -> np.ndarray:
        """(3, sum n_bins) per-feature histograms laid out feature-major."""
        ext = np.concatenate([hist, np.zeros((3, 1))], axis=1)
        fh = ext[:, self.gather]
        if self.derive_zero.any():
            seg = np.add.reduceat(fh, self.feat_start, axis=1)
            for j in np.flatnonzero(self.derive_zero):
                fh[:, self.feat_start[j]] = totals - seg[:, j]
        return fh


@dataclass
class SplitInfo:
    gain: float
    feature: int
    threshold: int
    categorical: bool


def find_best_split(
    layout: HistogramLayout,
    hist: np.ndarray,
    totals: np.ndarray,
    l2_lambda: float,
    min_data_in_leaf: int,
) -> Optional[SplitInfo]:
    fh = layout.feature_histograms(hist, totals)
    cum = np.cumsum(fh, axis=1)
    start_prev = layout.feat_start - 1
    seg_before = np.where(start_prev >= 0, cum[:, np.maximum(start_prev, 0)], 0.0)
    numeric_left = cum - np.repeat(seg_before, layout.n_bins, axis=1)
    left = np.where(layout.is_numeric_pos, numeric_left, fh)
    right = totals[:, None] - left

    GL, HL, CL = left
    GR, HR, CR = right
    G, H, _ = totals
    valid = (CL >= min_data_in_leaf) & (CR >= min_data_in_leaf)
    valid &= ~(layout.is_numeric_pos & layout.last_bin_pos)
    dl, dr, dp = HL + l2_lambda, HR + l2_lambda, H + l2_lambda
    valid &= (dl > 0) & (dr > 0) & (dp > 0)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = GL * GL / dl + GR * GR / dr - G * G / dp
    gain = np.where(valid, gain, -np.inf)
    best = int(np.argmax(gain))
    if not gain[best] > 0:
        return None
    f = int(layout.pos_feature[best])
    return SplitInfo(float(gain[best]), f, int(layout.pos_bin[best]), bool(layout.categorical[f]))


@dataclass(order=True)
class _Candidate:
    neg_gain: float
    node: int
    split: SplitInfo = field(compare=False)
    rows: np.ndarray = field(compare=False)
    hist: np.ndarray = field(compare=False)


def grow_tree(
    binned: np.ndarray,
    bundles: Optional[list[FeatureBundle]],
    g: np.ndarray,
    h: np.ndarray,
    weights: Optional[np.ndarray],
    config,
    n_bins=None,
    categorical=None,
    layout: Optional[HistogramLayout] = None,
    n_jobs: int = 1,
) -> Tree:
    """Grow one tree leaf-wise on weighted gradient statistics.

    The frontier leaf with the largest split gain is expanded until
    ``num_leaves`` is reached or no admissible split has positive gain.
    Rows with zero weight do not take part. Leaf values are the Newton step
    ``-G / (H + lambda)``.
    """
    if layout is None:
        binned = np.asarray(binned, dtype=np.int32)
        if n_bins is None:
            n_bins = binned.max(axis=0) + 1
        if bundles is None:
            bundles = singleton_bundles(n_bins)
        layout = HistogramLayout(binned, bundles, n_bins, categorical)
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    w = np.ones(len(g)) if weights is None else np.asarray(weights, dtype=np.float64)
    gw, hw = g * w, h * w
    lam = config.l2_lambda
    min_data = config.min_data_in_leaf

    feature, threshold, categorical_, left, right = [], [], [], [], []
    gain, value, count, depth = [], [], [], []

    def new_node(rows, d) -> int:
        G, H = float(np.sum(gw[rows])), float(np.sum(hw[rows]))
        feature.append(-1)
        threshold.append(-1)
        categorical_.append(False)
        left.append(-1)
        right.append(-1)
        gain.append(0.0)
        value.append(-G / (H + lam) if H + lam > 0 else 0.0)
        count.append(len(rows))
        depth.append(d)
        return len(feature) - 1

    def candidate(node: int, rows: np.ndarray, hist: np.ndarray):
        if depth[node] >= config.max_depth or len(rows) < 2 * min_data:
            return None
        totals = np.array([np.sum(gw[rows]), np.sum(hw[rows]), float(len(rows))])
        split = find_best_split(layout, hist, totals, lam, min_data)
        if split is None:
            return None
        return _Candidate(-split.gain, node, split, rows, hist)

    root_rows = np.flatnonzero(w > 0)
    root = new_node(root_rows, 0)
    heap: list[_Candidate] = []
    if len(root_rows):
        c = candidate(root, root_rows, layout.build(root_rows, gw, hw, n_jobs))
        if c is not None:
            heap.append(c)
    n_leaves = 1
    while heap and n_leaves < config.num_leaves:
        cand = heapq.heappop(heap)
        sp, rows = cand.split, cand.rows
        vals = layout.binned_T[sp.feature, rows]
        go_left = vals == sp.threshold if sp.categorical else vals <= sp.threshold
        rows_l, rows_r = rows[go_left], rows[~go_left]
        node = cand.node
        feature[node], threshold[node], categorical_[node], gain[node] = sp.feature, sp.threshold, sp.categorical, sp.gain
        d = depth[node] + 1
        ln, rn = new_node(rows_l, d), new_node(rows_r, d)
        left[node], right[node] = ln, rn
        n_leaves += 1
        # histogram subtraction: build the smaller child, derive the larger
        if len(rows_l) <= len(rows_r):
            hl = layout.build(rows_l, gw, hw, n_jobs)
            hr = cand.hist - hl
        else:
            hr = layout.build(rows_r, gw, hw, n_jobs)
            hl = cand.hist - hr
        for child, crow, chist in ((ln, rows_l, hl), (rn, rows_r, hr)):
            c = candidate(child, crow, chist)
            if c is not None:
                heapq.heappush(heap, c)

    return Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.int64),
        categorical=np.array(categorical_, dtype=bool),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        gain=np.array(gain, dtype=np.float64),
        value=np.array(value, dtype=np.float64),
        count=np.array(count, dtype=np.int64),
        depth=np.array(depth, dtype=np.int64),
    )
