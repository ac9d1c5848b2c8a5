"""
Exclusive feature bundling.

Bin 0 is each feature's default bin (the bin holding its minimum, which is
zero for normalized or one-hot columns). A bundle stores member ``j``'s
non-default bin ``b`` as ``offset_j + b``; rows where every member sits at
its default map to bundled bin 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class FeatureBundle:
    members: list[int]
    offsets: list[int]
    n_bins: int

    def to_dict(self) -> dict:
        return {"members": list(self.members), "offsets": list(self.offsets), "n_bins": self.n_bins}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureBundle":
        return cls([int(m) for m in d["members"]], [int(o) for o in d["offsets"]], int(d["n_bins"]))


def _make_bundle(members: list[int], n_bins: np.ndarray) -> FeatureBundle:
    offsets, off = [], 0
    for m in members:
        offsets.append(off)
        off += int(n_bins[m]) - 1
    return FeatureBundle(members, offsets, off + 1)


def singleton_bundles(n_bins) -> list[FeatureBundle]:
    n_bins = np.asarray(n_bins)
    return [_make_bundle([j], n_bins) for j in range(len(n_bins))]


def efb_bundle(binned: np.ndarray, max_conflict: float = 0.0, n_bins=None) -> list[FeatureBundle]:
    """Greedy bundling of rarely co-active features.

    Features are visited by descending non-default count (ties by index) and
    placed in the first bundle whose accumulated conflict count stays within
    ``max_conflict * n_rows``. Bundles come back ordered by their smallest
    member so the column layout does not depend on visiting order.
    """
    binned = np.asarray(binned)
    n, m = binned.shape
    if n_bins is None:
        n_bins = binned.max(axis=0) + 1 if n else np.ones(m, dtype=np.int64)
    n_bins = np.asarray(n_bins)
    active = binned != 0
    counts = active.sum(axis=0)
    order = sorted(range(m), key=lambda j: (-counts[j], j))
    budget = max_conflict * n

    groups: list[list[int]] = []
    masks: list[np.ndarray] = []
    conflicts: list[int] = []
    for j in order:
        for b, mask in enumerate(masks):
            extra = int(np.count_nonzero(mask & active[:, j]))
            if conflicts[b] + extra <= budget:
                groups[b].append(j)
                masks[b] = mask | active[:, j]
                conflicts[b] += extra
                break
        else:
            groups.append([j])
            masks.append(active[:, j].copy())
            conflicts.append(0)
    bundles = [_make_bundle(sorted(g), n_bins) for g in groups]
    return sorted(bundles, key=lambda bd: bd.members[0])


def bundle_matrix(binned: np.ndarray, bundles: list[FeatureBundle]) -> np.ndarray:
    """Bundled column per bundle; on conflict the lowest-index member wins."""
    binned = np.asarray(binned)
    out = np.zeros((binned.shape[0], len(bundles)), dtype=np.int32)
    for c, bd in enumerate(bundles):
        col = np.zeros(binned.shape[0], dtype=np.int32)
        for m, off in reversed(list(zip(bd.members, bd.offsets))):
            v = binned[:, m]
            col = np.where(v != 0, v + off, col)
        out[:, c] = col
    return out


def unbundle(bundled_col: np.ndarray, bundle: FeatureBundle, member: int, member_bins: int) -> np.ndarray:
    """Recover one member's bins from its bundle column."""
    off = bundle.offsets[bundle.members.index(member)]
    v = np.asarray(bundled_col)
    inside = (v > off) & (v < off + member_bins)
    return np.where(inside, v - off, 0).astype(np.int32)
