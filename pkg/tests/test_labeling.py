"""1-D K-means damage classes and elbow diagnostics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodnow.dataset import GridCell
from floodnow.labeling import (
    elbow_curve,
    kmeans_1d,
    label_cells,
    read_labels_csv,
    write_elbow_csv,
    write_labels_csv,
)
from oracles import contiguous_kmeans_optimum


def test_exact_clusters():
    res = kmeans_1d([0, 0, 10, 10], 2)
    np.testing.assert_array_equal(res.centroids, [0.0, 10.0])
    assert res.wcss == 0.0


def test_two_pairs_matches_partition_oracle():
    res = kmeans_1d([0, 1, 9, 10], 2)
    assert contiguous_kmeans_optimum([0, 1, 9, 10], 2) == 1.0
    np.testing.assert_allclose(res.centroids, [0.5, 9.5])
    assert res.wcss == pytest.approx(1.0, abs=1e-12)


def test_one_cluster_per_distinct_value():
    pts = [3.0, 1.0, 1.0, 7.5, 3.0, 2.0]
    assert kmeans_1d(pts, 4).wcss == 0.0


def test_k_exceeding_distinct_values_errors():
    with pytest.raises(ValueError, match="distinct"):
        kmeans_1d([5, 5, 5], 2)
    with pytest.raises(ValueError):
        kmeans_1d([], 1)


def test_result_invariants():
    rng = np.random.default_rng(3)
    pts = np.r_[rng.normal(0, 1, 50), rng.normal(8, 1, 30), rng.normal(20, 2, 20)]
    res = kmeans_1d(pts, 3)
    assert np.all(np.diff(res.centroids) > 0)
    nearest = np.argmin(np.abs(pts[:, None] - res.centroids[None, :]), axis=1)
    np.testing.assert_array_equal(res.assignments, nearest)
    assert res.wcss == pytest.approx(np.sum((pts - res.centroids[res.assignments]) ** 2), rel=1e-12)


def test_elbow_single_k_is_total_scatter():
    pts = np.array([1.0, 2.0, 4.0, 9.0])
    (k, w), = elbow_curve(pts, (1, 1))
    assert k == 1
    assert w == pytest.approx(pts.var() * len(pts), rel=1e-12)
    assert elbow_curve([5, 5, 5], (1, 1)) == [(1, 0.0)]


def test_elbow_monotone_on_three_clusters():
    rng = np.random.default_rng(0)
    pts = np.r_[rng.normal(0, 0.2, 80), rng.normal(5, 0.2, 60), rng.normal(12, 0.2, 40)]
    curve = elbow_curve(pts, (1, 6))
    w = [v for _, v in curve]
    assert [k for k, _ in curve] == [1, 2, 3, 4, 5, 6]
    assert all(b <= a for a, b in zip(w, w[1:]))
    # the bend sits at k = 3: beyond it gains are small relative to the total
    assert w[2] < 0.01 * w[0]


def test_label_cells_orders_classes_by_damage():
    sums = [0.0] * 96 + [0.5] + [3.0] * 3
    cells = [GridCell((i, 0), s, int(s > 0)) for i, s in enumerate(sums)]
    labels = dict(label_cells(cells, k=3))
    assert [labels[(i, 0)] for i in range(96)] == [0] * 96
    assert labels[(96, 0)] == 1
    assert [labels[(i, 0)] for i in (97, 98, 99)] == [2, 2, 2]


def test_label_cells_constant_sums_error():
    cells = [GridCell((i, 0), 0.2, 1) for i in range(5)]
    with pytest.raises(ValueError):
        label_cells(cells, k=3)


def test_label_cells_reproduces_imbalanced_histogram():
    # 10,000 cells shaped as 96.4% / 0.8% / 2.8% around well separated levels
    rng = np.random.default_rng(11)
    sums = np.r_[rng.uniform(0, 0.3, 9640), rng.uniform(2.0, 2.5, 80), rng.uniform(6.0, 7.0, 280)]
    rng.shuffle(sums)
    cells = [GridCell((i % 100, i // 100), float(s), 1) for i, s in enumerate(sums)]
    hist = np.bincount([c for _, c in label_cells(cells)], minlength=3)
    np.testing.assert_array_equal(hist, [9640, 80, 280])


def test_csv_writers(tmp_path):
    cells = [GridCell((0, 0), 0.0, 0), GridCell((1, 0), 2.5, 3)]
    write_labels_csv(tmp_path / "labels.csv", cells, [((0, 0), 0), ((1, 0), 2)])
    assert (tmp_path / "labels.csv").read_text().splitlines()[0] == "cell_col,cell_row,claim_sum,pde_class"
    assert read_labels_csv(tmp_path / "labels.csv") == {(0, 0): 0, (1, 0): 2}
    write_elbow_csv(tmp_path / "elbow.csv", [(1, 4.0), (2, 1.0)])
    assert (tmp_path / "elbow.csv").read_text().splitlines() == ["k,wcss", "1,4.0", "2,1.0"]


# -- properties -----------------------------------------------------------

points_st = st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=40)


@settings(max_examples=60, deadline=None)
@given(points_st, st.integers(1, 3), st.integers(0, 10**6))
def test_matches_contiguous_optimum(points, k, seed):
    if len(set(points)) < k:
        return
    res = kmeans_1d(points, k, restarts=10, seed=seed)
    assert abs(res.wcss - contiguous_kmeans_optimum(points, k)) <= 1e-9 * max(1.0, res.wcss)


@settings(max_examples=40, deadline=None)
@given(points_st, st.integers(0, 10**6))
def test_deterministic_and_permutation_invariant(points, seed):
    k = min(3, len(set(points)))
    a = kmeans_1d(points, k, seed=seed)
    b = kmeans_1d(points, k, seed=seed)
    assert a.wcss == b.wcss and np.array_equal(a.assignments, b.assignments)
    perm = np.random.default_rng(seed).permutation(len(points))
    c = kmeans_1d(np.asarray(points)[perm], k, seed=seed)
    np.testing.assert_array_equal(c.centroids, a.centroids)
    assert c.wcss == a.wcss
    np.testing.assert_array_equal(c.assignments, a.assignments[perm])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 50), min_size=6, max_size=60), st.integers(0, 10**6))
def test_label_ordinality(sums, seed):
    if len(set(sums)) < 3:
        return
    cells = [GridCell((i, 0), s, 1) for i, s in enumerate(sums)]
    labels = np.array([c for _, c in label_cells(cells, seed=seed)])
    s = np.asarray(sums)
    means = [s[labels == c].mean() for c in range(3) if np.any(labels == c)]
    assert all(a < b for a, b in zip(means, means[1:]))
