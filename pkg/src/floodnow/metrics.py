"""
Classification metrics for imbalanced multiclass problems, and the
real-vs-synthetic marginal similarity score.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .dataset import TabularDataset

SIMILARITY_BINS = 20


@dataclass
class ConfusionMatrix:
    """Counts indexed ``[actual, predicted]``."""

    counts: np.ndarray

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def normalized(self) -> np.ndarray:
        """Row-normalized view; rows with no examples stay all-zero."""
        rows = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    def one_vs_rest(self, c: int) -> tuple[int, int, int, int]:
        """(tp, fp, fn, tn) treating class ``c`` as positive."""
        tp = int(self.counts[c, c])
        fp = int(self.counts[:, c].sum()) - tp
        fn = int(self.counts[c, :].sum()) - tp
        return tp, fp, fn, self.total - tp - fp - fn


def confusion(actual: Sequence[int], predicted: Sequence[int], k: int) -> ConfusionMatrix:
    a = np.asarray(actual, dtype=np.int64)
    p = np.asarray(predicted, dtype=np.int64)
    if a.shape != p.shape:
        raise ValueError(f"length mismatch: {len(a)} actual vs {len(p)} predicted")
    if len(a) and (min(a.min(), p.min()) < 0 or max(a.max(), p.max()) >= k):
        raise ValueError(f"labels outside 0..{k - 1}")
    counts = np.bincount(a * k + p, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts)


class PrecisionRecall(NamedTuple):
    precision: float
    recall: float
    precision_undefined: bool
    recall_undefined: bool


def precision_recall(tp: int, fp: int, fn: int) -> PrecisionRecall:
    """P = tp/(tp+fp), R = tp/(tp+fn); a zero denominator gives 0 and sets its flag."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    p_undef = tp + fp == 0
    r_undef = tp + fn == 0
    p = 0.0 if p_undef else tp / (tp + fp)
    r = 0.0 if r_undef else tp / (tp + fn)
    return PrecisionRecall(p, r, p_undef, r_undef)


@dataclass
class PrCurve:
    thresholds: np.ndarray
    recall: np.ndarray
    precision: np.ndarray


def pr_curve(scores: Sequence[float], positives: Sequence[bool]) -> PrCurve:
    """Operating points at every distinct score, highest threshold first.

    Rows with equal scores enter together as one operating point.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(positives, dtype=bool)
    if s.shape != y.shape:
        raise ValueError("scores and positives differ in length")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("average precision is undefined without positives")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(y)[last]
    pp = np.flatnonzero(last) + 1
    return PrCurve(thresholds=s[last], recall=tp / n_pos, precision=tp / pp)


def average_precision(scores: Sequence[float], positives: Sequence[bool]) -> float:
    """Sum over operating points of (R_i - R_{i-1}) * P_i, with R_0 = 0."""
    curve = pr_curve(scores, positives)
    d_recall = np.diff(np.r_[0.0, curve.recall])
    return float(np.sum(d_recall * curve.precision))


def per_class_ap(probs: np.ndarray, labels: Sequence[int]) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    k = probs.shape[1]
    absent = [c for c in range(k) if not np.any(labels == c)]
    if absent:
        raise ValueError(f"classes absent from labels: {absent}")
    return np.array([average_precision(probs[:, c], labels == c) for c in range(k)])


def mean_average_precision(probs: np.ndarray, labels: Sequence[int]) -> float:
    aps = per_class_ap(probs, labels)
    return float(np.sum(aps) / len(aps))


def accuracy(actual: Sequence[int], predicted: Sequence[int]) -> float:
    a, p = np.asarray(actual), np.asarray(predicted)
    if len(a) == 0:
        raise ValueError("accuracy of an empty set is undefined")
    if a.shape != p.shape:
        raise ValueError("length mismatch")
    return float(np.mean(a == p))


def _frequencies(col: np.ndarray, categorical: bool, n_levels: int) -> np.ndarray:
    if len(col) == 0:
        raise ValueError("cannot compare an empty dataset")
    if categorical:
        counts = np.bincount(col.astype(np.int64), minlength=n_levels)
    else:
        counts, _ = np.histogram(np.clip(col, 0.0, 1.0), bins=SIMILARITY_BINS, range=(0.0, 1.0))
    return counts / counts.sum()


def marginal_similarity(real: TabularDataset, synthetic: TabularDataset) -> tuple[np.ndarray, float]:
    """Per-feature ``1 - total variation`` between binned marginals, and their mean.

    Numeric features use 20 equal-width bins on [0, 1]; categorical features
    compare level frequencies.
    """
    if real.schema != synthetic.schema:
        raise ValueError("datasets have different schemas")
    scores = []
    for j, f in enumerate(real.schema):
        n_levels = len(f.levels)
        p = _frequencies(real.X[:, j], f.is_categorical, n_levels)
        q = _frequencies(synthetic.X[:, j], f.is_categorical, n_levels)
        scores.append(1.0 - 0.5 * float(np.sum(np.abs(p - q))))
    scores = np.array(scores)
    return scores, float(scores.mean())


def classwise_similarity(real: TabularDataset, synthetic: TabularDataset) -> dict[int, float]:
    """Mean marginal similarity computed separately within each class."""
    out = {}
    for c in range(real.n_classes):
        r = real.subset(np.flatnonzero(real.labels == c))
        s = synthetic.subset(np.flatnonzero(synthetic.labels == c))
        if r.n_rows and s.n_rows:
            out[c] = marginal_similarity(r, s)[1]
    return out


# -- report files ---------------------------------------------------------


@dataclass
class Evaluation:
    accuracy: float
    per_class_ap: np.ndarray
    mean_ap: float
    confusion: ConfusionMatrix
    curves: list[PrCurve]


def evaluate(probs: np.ndarray, labels: Sequence[int]) -> Evaluation:
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    k = probs.shape[1]
    pred = np.argmax(probs, axis=1)
    aps = per_class_ap(probs, labels)
    return Evaluation(
        accuracy=accuracy(labels, pred),
        per_class_ap=aps,
        mean_ap=float(aps.sum() / k),
        confusion=confusion(labels, pred, k),
        curves=[pr_curve(probs[:, c], labels == c) for c in range(k)],
    )


def write_pr_csv(path: str | Path, curves: Sequence[PrCurve]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "threshold", "recall", "precision"])
        for c, cv in enumerate(curves):
            for t, r, p in zip(cv.thresholds, cv.recall, cv.precision):
                w.writerow([c, repr(float(t)), repr(float(r)), repr(float(p))])


def format_report(ev: Evaluation, title: str = "evaluation") -> str:
    k = ev.confusion.k
    lines = [f"[{title}]", f"rows = {ev.confusion.total}", f"accuracy = {ev.accuracy:.6f}"]
    for c in range(k):
        tp, fp, fn, _ = ev.confusion.one_vs_rest(c)
        pr = precision_recall(tp, fp, fn)
        lines.append(
            f"class {c}: ap = {ev.per_class_ap[c]:.6f} precision = {pr.precision:.6f}"
            f"{' (undefined)' if pr.precision_undefined else ''} recall = {pr.recall:.6f}"
        )
    lines.append(f"mAP = {ev.mean_ap:.6f}")
    lines.append("confusion (rows actual, columns predicted):")
    lines += ["  " + " ".join(f"{v:7d}" for v in row) for row in ev.confusion.counts]
    lines.append("confusion, row-normalized:")
    lines += ["  " + " ".join(f"{v:7.4f}" for v in row) for row in ev.confusion.normalized()]
    return "\n".join(lines) + "\n"
