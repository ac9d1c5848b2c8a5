"""
Deterministic synthetic data standing in for real claim and feature data.

``make_imbalanced_tabular`` plants class signal on a few leading columns:
signal column j of a class-c row is drawn from ``Beta(1 + a, 1)`` with
``a = strength * 0.7**j * c / (k - 1)``, so class means rise with both the
class index and the strength. The likelihood ratio against class 0 is
bounded by ``1 + a``; with a rare class this keeps the accuracy-optimal
classifier on raw data from ever predicting it, while a rebalanced
classifier still can. Remaining columns are noise. Numeric columns are
min-max normalized at the end.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .dataset import (
    ClaimRecord,
    Feature,
    FeatureSchema,
    GridSpec,
    TabularDataset,
    min_max_normalize,
    write_claims_csv,
)
from .synth.model import class_counts

SIGNAL_DECAY = 0.7
CATEGORICAL_LEVELS = (4, 3)


@dataclass
class FixtureSpec:
    n_rows: int = 5000
    prevalences: tuple[float, ...] = (0.964, 0.008, 0.028)
    signal_strength: float = 8.0
    n_signal: int = 1
    n_noise: int = 13
    n_categorical: int = 2
    seed: int = 0

    def __post_init__(self):
        if abs(sum(self.prevalences) - 1.0) > 1e-9:
            raise ValueError("prevalences must sum to 1")
        if self.signal_strength < 0:
            raise ValueError("signal strength must be >= 0")


def fixture_schema(spec: FixtureSpec) -> FeatureSchema:
    feats = [Feature(f"signal_{j:02d}") for j in range(spec.n_signal)]
    feats += [Feature(f"noise_{j:02d}") for j in range(spec.n_noise)]
    for j in range(spec.n_categorical):
        n_levels = CATEGORICAL_LEVELS[j % len(CATEGORICAL_LEVELS)]
        feats.append(Feature(f"cat_{j:02d}", "categorical", tuple(f"level_{i}" for i in range(n_levels))))
    return FeatureSchema(tuple(feats))


def _normalize_columns(Z: np.ndarray) -> np.ndarray:
    out = np.empty_like(Z)
    for j in range(Z.shape[1]):
        out[:, j] = min_max_normalize(Z[:, j].tolist())
    return out


def make_imbalanced_tabular(spec: FixtureSpec) -> TabularDataset:
    rng = np.random.default_rng(spec.seed)
    k = len(spec.prevalences)
    counts = class_counts(spec.n_rows, spec.prevalences)
    labels = rng.permutation(np.repeat(np.arange(k), counts))
    level = labels / max(k - 1, 1)
    weights = SIGNAL_DECAY ** np.arange(spec.n_signal)
    shape = 1.0 + spec.signal_strength * level[:, None] * weights[None, :]
    signal = rng.beta(shape, 1.0)
    noise = rng.standard_normal((spec.n_rows, spec.n_noise))
    schema = fixture_schema(spec)
    n_num = spec.n_signal + spec.n_noise
    cats = [rng.integers(len(f.levels), size=spec.n_rows) for f in schema.features[n_num:]]
    X = np.column_stack([_normalize_columns(np.hstack([signal, noise]))] + cats)
    return TabularDataset(schema, X, labels, k)


def make_gaussian_mixture(
    n_rows: int = 2000, k: int = 3, n_numeric: int = 4, n_categorical: int = 1, separation: float = 2.0, seed: int = 0
) -> TabularDataset:
    """Balanced k-class table; each class is one Gaussian blob plus class-skewed categoricals."""
    rng = np.random.default_rng(seed)
    counts = class_counts(n_rows, [1.0 / k] * k)
    labels = rng.permutation(np.repeat(np.arange(k), counts))
    means = rng.uniform(-separation, separation, size=(k, n_numeric))
    scales = rng.uniform(0.5, 1.0, size=(k, n_numeric))
    Z = means[labels] + scales[labels] * rng.standard_normal((n_rows, n_numeric))
    feats = [Feature(f"x{j}") for j in range(n_numeric)]
    cols = [_normalize_columns(Z)]
    for j in range(n_categorical):
        n_levels = 3
        feats.append(Feature(f"c{j}", "categorical", tuple(f"v{i}" for i in range(n_levels))))
        probs = rng.dirichlet(np.ones(n_levels), size=k)
        u = rng.random(n_rows)
        cols.append((u[:, None] > np.cumsum(probs[labels], axis=1)).sum(axis=1).clip(0, n_levels - 1))
    return TabularDataset(FeatureSchema(tuple(feats)), np.column_stack(cols), labels, k)


def make_claim_fixture(
    grid: GridSpec,
    hotspot_cells: Sequence[tuple[int, int]],
    n_claims: int = 100,
    seed: int = 0,
    hotspot_fraction: float = 0.95,
    ia_fraction: float = 0.4,
) -> tuple[list[ClaimRecord], list[ClaimRecord]]:
    """Claims clustered in hotspot cells, split into NFIP and IA lists.

    Exactly ``round(hotspot_fraction * n_claims)`` points fall inside hotspot
    cells. When there are at least two claims, one IA claim shares its
    building with an NFIP claim so the precedence rule has work to do.
    """
    for col, row in hotspot_cells:
        if not (0 <= col < grid.n_cols and 0 <= row < grid.n_rows):
            raise ValueError(f"hotspot {(col, row)} outside the grid")
    if n_claims == 0:
        return [], []
    if not hotspot_cells:
        hotspot_fraction = 0.0
    rng = np.random.default_rng(seed)
    n_hot = int(round(hotspot_fraction * n_claims))
    pts = []
    for i in range(n_claims):
        if i < n_hot:
            col, row = hotspot_cells[rng.integers(len(hotspot_cells))]
            fx, fy = rng.uniform(0.05, 0.95, size=2)
            pts.append((float(grid.origin_x + (col + fx) * grid.cell_size), float(grid.origin_y + (row + fy) * grid.cell_size)))
        else:
            fx, fy = rng.uniform(0.0, 1.0, size=2)
            pts.append((float(grid.origin_x + fx * grid.n_cols * grid.cell_size * (1 - 1e-9)),
                        float(grid.origin_y + fy * grid.n_rows * grid.cell_size * (1 - 1e-9))))
    order = rng.permutation(n_claims)
    is_ia = np.zeros(n_claims, dtype=bool)
    is_ia[order[: int(round(ia_fraction * n_claims))]] = True
    if n_claims >= 2:
        is_ia[0], is_ia[1] = False, True
    nfip, ia = [], []
    for i, (x, y) in enumerate(pts):
        building = f"B{i:06d}"
        if i == 1:
            building = "B000000"  # shared with the NFIP claim 0
        if is_ia[i]:
            ia.append(ClaimRecord(f"IA{i:06d}", "IA", building, x, y, float(round(rng.lognormal(8.0, 1.0), 2)) + 1.0))
        else:
            nfip.append(ClaimRecord(f"NF{i:06d}", "NFIP", building, x, y, float(round(rng.lognormal(10.0, 1.0), 2)) + 1.0))
    return nfip, ia


def write_demo_project(out_dir: str | Path, seed: int = 0, n_cols: int = 40, n_rows: int = 40) -> Path:
    """Claims CSV, features CSV and a config file for a self-contained CLI run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = GridSpec(0.0, 0.0, n_cols, n_rows)
    rng = np.random.default_rng(seed)
    n_cells = n_cols * n_rows
    hot_idx = rng.choice(n_cells, size=max(3, n_cells // 25), replace=False)
    hotspots = [(int(i % n_cols), int(i // n_cols)) for i in hot_idx]
    nfip, ia = make_claim_fixture(grid, hotspots, n_claims=max(60, n_cells // 4), seed=seed)
    write_claims_csv(out / "claims.csv", sorted(nfip + ia, key=lambda r: r.claim_id))

    # features: a few columns rise toward hotspot cells, the rest is noise
    hot = np.zeros((n_rows, n_cols))
    for col, row in hotspots:
        hot[row, col] = 1.0
    names = ["poi_density", "elevation", "distance_to_stream", "rainfall", "building_age", "imperviousness"]
    with open(out / "features.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_col", "cell_row"] + names + ["stream_status"])
        for row in range(n_rows):
            for col in range(n_cols):
                h = hot[row, col]
                vals = [
                    3.0 * h + rng.normal(),
                    -2.0 * h + rng.normal(),
                    -1.5 * h + rng.normal(),
                    1.0 * h + rng.normal(),
                    rng.normal(),
                    rng.normal(),
                ]
                status = ["non_flooding", "flooding_potential", "flooding_likely"][int(rng.integers(3))]
                w.writerow([col, row] + [f"{v:.6f}" for v in vals] + [status])

    schema = [{"name": n, "kind": "numeric"} for n in names]
    schema.append({"name": "stream_status", "kind": "categorical",
                   "levels": ["non_flooding", "flooding_potential", "flooding_likely"]})
    config = {
        "seed": seed,
        "paths": {"claims": "claims.csv", "features": "features.csv", "output": "out"},
        "grid": {"origin_x": 0.0, "origin_y": 0.0, "cell_size": 500.0, "n_cols": n_cols, "n_rows": n_rows},
        "cap_percentile": 0.99,
        "labeling": {"k": 3, "restarts": 10, "elbow_max_k": 6},
        "schema": schema,
        "synth": {"max_epochs": 100, "checkpoint_every": 50, "batch_size": 200, "hidden_dims": [64, 64],
                  "latent_dim": 16, "gen_lr": 1e-3, "disc_lr": 1e-3},
        "augment": {"n_rows": 5000, "class_ratios": [0.6, 0.2, 0.2], "train_frac": 0.8},
        "gbdt": {"num_trees": 30},
        "tune": {"iterations": 5,
                 "space": {"class0_count": [300, 2400], "class1_count": [100, 800], "class2_count": [100, 800],
                           "num_leaves": [10, 50], "max_depth": [3, 15], "min_data_in_leaf": [20, 100]}},
        "train": {"source": "augmented", "use_tuned": True},
        "plots": True,
    }
    cfg_path = out / "config.yaml"
    cfg_path.write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    return cfg_path

