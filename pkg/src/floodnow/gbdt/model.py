"""Boosting loop, prediction, split importance and the model file format."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..dataset import FeatureSchema, IngestError, TabularDataset
from .binning import BinMapper, UnseenCategoryError, quantile_bin
from .bundling import FeatureBundle, efb_bundle, singleton_bundles
from .goss import goss_sample
from .objective import cross_entropy, softmax, softmax_gradients
from .tree import HistogramLayout, Tree, grow_tree

MODEL_FORMAT = "floodnow-gbdt"
MODEL_VERSION = 1
PRIOR_FLOOR = 1e-12


class TrainingError(ValueError):
    pass


@dataclass
class TrainConfig:
    num_trees: int = 100
    learning_rate: float = 0.1
    num_leaves: int = 31
    max_depth: int = 10
    min_data_in_leaf: int = 20
    l2_lambda: float = 1.0
    goss_enabled: bool = True
    goss_a: float = 0.2
    goss_b: float = 0.1
    efb_enabled: bool = True
    efb_max_conflict: float = 0.0
    max_bins: int = 255
    seed: int = 0

    def __post_init__(self):
        if self.num_leaves < 2:
            raise ValueError("num_leaves must be >= 2")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_data_in_leaf < 1:
            raise ValueError("min_data_in_leaf must be >= 1")
        if self.goss_a < 0 or self.goss_b < 0 or self.goss_a + self.goss_b > 1:
            raise ValueError("GOSS fractions need 0 <= a, b and a + b <= 1")
        if self.num_trees < 0 or self.learning_rate <= 0:
            raise ValueError("num_trees must be >= 0 and learning_rate > 0")
        if self.max_bins < 2:
            raise ValueError("max_bins must be >= 2")

    def replace(self, **changes) -> "TrainConfig":
        d = asdict(self)
        d.update(changes)
        return TrainConfig(**d)

    @classmethod
    def from_mapping(cls, d: Optional[dict]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d or {}) - known
        if unknown:
            raise ValueError(f"unknown GBDT settings: {sorted(unknown)}")
        return cls(**(d or {}))


@dataclass
class GbdtModel:
    schema: FeatureSchema
    n_classes: int
    learning_rate: float
    base_score: np.ndarray
    bin_mapper: BinMapper
    bundles: list[FeatureBundle]
    trees: list[list[Tree]] = field(default_factory=list)
    config: TrainConfig = field(default_factory=TrainConfig)
    train_loss: list[float] = field(default_factory=list)

    @property
    def n_iterations(self) -> int:
        return len(self.trees)

    def raw_scores(self, X) -> np.ndarray:
        Xb = self.bin_mapper.transform(X)
        scores = np.tile(self.base_score, (Xb.shape[0], 1))
        for round_trees in self.trees:
            for c, tree in enumerate(round_trees):
                scores[:, c] += self.learning_rate * tree.predict_binned(Xb)
        return scores

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "schema": self.schema.to_list(),
            "n_classes": self.n_classes,
            "learning_rate": self.learning_rate,
            "base_score": self.base_score.tolist(),
            "config": asdict(self.config),
            "bin_mapper": self.bin_mapper.to_dict(),
            "bundles": [b.to_dict() for b in self.bundles],
            "train_loss": list(self.train_loss),
            "trees": [[t.to_dict() for t in rnd] for rnd in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbdtModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a {MODEL_FORMAT} model file")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')}")
        return cls(
            schema=FeatureSchema.from_list(d["schema"]),
            n_classes=int(d["n_classes"]),
            learning_rate=float(d["learning_rate"]),
            base_score=np.array(d["base_score"], dtype=np.float64),
            bin_mapper=BinMapper.from_dict(d["bin_mapper"]),
            bundles=[FeatureBundle.from_dict(b) for b in d["bundles"]],
            trees=[[Tree.from_dict(t) for t in rnd] for rnd in d["trees"]],
            config=TrainConfig(**d["config"]),
            train_loss=[float(v) for v in d["train_loss"]],
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "GbdtModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def train(
    dataset: TabularDataset,
    config: TrainConfig | None = None,
    n_classes: int | None = None,
    allow_single_class: bool = False,
    n_jobs: int = 1,
) -> GbdtModel:
    """Fit a softmax-boosted forest, one tree per class per iteration.

    Each iteration computes gradients at the current raw scores, optionally
    subsamples rows with GOSS on the row-wise largest class-gradient
    magnitude, grows ``k`` trees and adds ``learning_rate * tree`` to the
    scores. Initial scores are the log class priors.
    """
    config = config or TrainConfig()
    if dataset.labels is None:
        raise TrainingError("training data has no labels")
    y = dataset.labels
    k = n_classes or dataset.n_classes
    if dataset.n_rows == 0:
        raise TrainingError("training data is empty")
    counts = np.bincount(y, minlength=k)
    if not allow_single_class and np.count_nonzero(counts) < 2:
        raise TrainingError("training labels contain a single class")
    if k < 1:
        raise TrainingError("need at least one class")

    mapper, Xb = quantile_bin(dataset, config.max_bins)
    if config.efb_enabled:
        bundles = efb_bundle(Xb, config.efb_max_conflict, mapper.n_bins)
    else:
        bundles = singleton_bundles(mapper.n_bins)
    categorical = [kind == "categorical" for kind in mapper.kinds]
    layout = HistogramLayout(Xb, bundles, mapper.n_bins, categorical)

    prior = np.maximum(counts / counts.sum(), PRIOR_FLOOR)
    base = np.log(prior)
    scores = np.tile(base, (dataset.n_rows, 1))
    model = GbdtModel(
        schema=dataset.schema,
        n_classes=k,
        learning_rate=config.learning_rate,
        base_score=base,
        bin_mapper=mapper,
        bundles=bundles,
        config=config,
    )
    model.train_loss.append(cross_entropy(y, scores))
    for t in range(config.num_trees):
        g, h = softmax_gradients(y, scores)
        if config.goss_enabled:
            idx, wts = goss_sample(np.abs(g).max(axis=1), config.goss_a, config.goss_b, seed=[config.seed, t])
            weights = np.zeros(dataset.n_rows)
            weights[idx] = wts
        else:
            weights = np.ones(dataset.n_rows)
        round_trees = []
        for c in range(k):
            tree = grow_tree(None, None, g[:, c], h[:, c], weights, config, layout=layout, n_jobs=n_jobs)
            round_trees.append(tree)
        for c, tree in enumerate(round_trees):
            scores[:, c] += config.learning_rate * tree.predict_binned(Xb)
        model.trees.append(round_trees)
        model.train_loss.append(cross_entropy(y, scores))
    return model


def _as_matrix(model: GbdtModel, rows) -> np.ndarray:
    if isinstance(rows, TabularDataset):
        return rows.X
    arr = np.asarray(rows, dtype=object)
    if arr.ndim == 1:
        arr = arr[None, :]
    X = np.empty(arr.shape, dtype=np.float64)
    for j, f in enumerate(model.schema):
        try:
            X[:, j] = [f.code(v) if f.is_categorical else float(v) for v in arr[:, j]]
        except IngestError as exc:
            raise UnseenCategoryError(str(exc)) from None
    return X


def predict_proba(model: GbdtModel, rows) -> np.ndarray:
    """Class probabilities for one row (shape ``(k,)``) or many (``(n, k)``).

    Categorical entries may be level strings or integer codes; an unknown
    level raises.
    """
    single = not isinstance(rows, TabularDataset) and np.ndim(rows) == 1
    X = _as_matrix(model, rows)
    p = softmax(model.raw_scores(X))
    return p[0] if single else p


def predict(model: GbdtModel, rows) -> np.ndarray:
    return np.argmax(predict_proba(model, rows), axis=-1)


def split_importance(model: GbdtModel) -> np.ndarray:
    """Number of internal nodes splitting on each feature, over the whole forest."""
    counts = np.zeros(len(model.schema), dtype=np.int64)
    for rnd in model.trees:
        for tree in rnd:
            used = tree.feature[tree.feature >= 0]
            counts += np.bincount(used, minlength=len(counts))
    return counts


def importance_table(model: GbdtModel) -> list[tuple[str, int]]:
    """(feature, split_count) sorted by count descending, ties by schema order."""
    counts = split_importance(model)
    order = sorted(range(len(counts)), key=lambda j: (-counts[j], j))
    return [(model.schema.names[j], int(counts[j])) for j in order]
