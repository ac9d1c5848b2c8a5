"""Quantile histogram binning of tabular features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dataset import IngestError, TabularDataset

DEFAULT_MAX_BINS = 255


class UnseenCategoryError(IngestError):
    pass


@dataclass
class BinMapper:
    """Per-feature value -> bin index mapping.

    Numeric feature ``j`` stores strictly increasing cut points ``cuts[j]``;
    bin ``i`` covers ``(cuts[i-1], cuts[i]]`` and values above the last cut
    land in the top bin. Categorical features use the level code as the bin.
    """

    kinds: list[str]
    cuts: list[np.ndarray]
    n_bins: np.ndarray
    max_bins: int

    @property
    def n_features(self) -> int:
        return len(self.kinds)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} columns, got {X.shape[1]}")
        out = np.empty(X.shape, dtype=np.int32)
        for j, kind in enumerate(self.kinds):
            col = X[:, j]
            if kind == "categorical":
                bad = (col != np.round(col)) | (col < 0) | (col >= self.n_bins[j]) | ~np.isfinite(col)
                if bad.any():
                    raise UnseenCategoryError(f"feature {j}: unseen categorical value {col[bad][0]!r}")
                out[:, j] = col.astype(np.int32)
            else:
                if not np.all(np.isfinite(col)):
                    raise IngestError(f"feature {j}: non-finite value at predict time")
                out[:, j] = np.searchsorted(self.cuts[j], col, side="left")
        return out

    def to_dict(self) -> dict:
        return {
            "kinds": list(self.kinds),
            "cuts": [c.tolist() for c in self.cuts],
            "n_bins": [int(n) for n in self.n_bins],
            "max_bins": int(self.max_bins),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BinMapper":
        return cls(
            kinds=list(d["kinds"]),
            cuts=[np.array(c, dtype=np.float64) for c in d["cuts"]],
            n_bins=np.array(d["n_bins"], dtype=np.int64),
            max_bins=int(d["max_bins"]),
        )


def numeric_cuts(values: np.ndarray, max_bins: int) -> np.ndarray:
    """Cut points splitting ``values`` into at most ``max_bins`` quantile bins.

    With no more distinct values than bins, every distinct value gets its own
    bin (cuts at midpoints). Otherwise cuts sit at the empirical quantiles
    ``j/max_bins``; a quantile falling inside a run of equal values puts the
    whole run in the lower bin.
    """
    vals = np.sort(np.asarray(values, dtype=np.float64))
    distinct = np.unique(vals)
    if len(distinct) <= max_bins:
        cuts = (distinct[:-1] + distinct[1:]) / 2.0
        # adjacent floats: the midpoint may round up onto the upper value
        return np.where(cuts >= distinct[1:], distinct[:-1], cuts)
    n = len(vals)
    top = vals[-1]
    cuts = []
    for j in range(1, max_bins):
        idx = int(round(j * n / max_bins))
        if idx <= 0 or idx >= n:
            continue
        lo, hi = vals[idx - 1], vals[idx]
        cut = (lo + hi) / 2.0 if lo < hi else lo
        if cut >= hi and lo < hi:
            cut = lo
        if cut < top:
            cuts.append(cut)
    return np.unique(np.array(cuts, dtype=np.float64))


def quantile_bin(dataset: TabularDataset, max_bins: int = DEFAULT_MAX_BINS) -> tuple[BinMapper, np.ndarray]:
    if max_bins < 2:
        raise ValueError(f"max_bins must be >= 2, got {max_bins}")
    kinds, cuts, n_bins = [], [], []
    for j, f in enumerate(dataset.schema):
        if f.is_categorical:
            kinds.append("categorical")
            cuts.append(np.empty(0))
            n_bins.append(len(f.levels))
        else:
            c = numeric_cuts(dataset.X[:, j], max_bins) if dataset.n_rows else np.empty(0)
            kinds.append("numeric")
            cuts.append(c)
            n_bins.append(len(c) + 1)
    mapper = BinMapper(kinds, cuts, np.array(n_bins, dtype=np.int64), max_bins)
    return mapper, mapper.transform(dataset.X)
