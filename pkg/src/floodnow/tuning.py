"""
Two-stage hyperparameter search.

Stage one grid-searches synthesizer learning rates and stopping epochs,
scoring each cell by a GBDT trained on its synthetic data. Stage two
under-samples a synthetic pool per class and random-searches GBDT
hyperparameters, scoring mAP on real held-out rows.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import TabularDataset
from .gbdt import GbdtModel, TrainConfig, predict_proba, train
from .metrics import mean_average_precision
from .synth import SynthConfig, SynthDivergenceError, fit, sample

SEARCH_KEYS = ("class0_count", "class1_count", "class2_count", "num_leaves", "max_depth", "min_data_in_leaf")
COUNT_KEYS = SEARCH_KEYS[:3]
TREE_KEYS = SEARCH_KEYS[3:]
TRIALS_HEADER = ["trial", "class0", "class1", "class2", "num_leaves", "max_depth", "min_data_in_leaf", "map_eval", "status"]
GRID_HEADER = ["rank", "gen_lr", "disc_lr", "epochs", "map_pretrain", "map_real", "status"]


class TuningError(RuntimeError):
    pass


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# -- search space -----------------------------------------------------------


@dataclass(frozen=True)
class SearchSpace:
    """Inclusive ranges; integer bounds mean integer-valued draws."""

    ranges: dict

    def __post_init__(self):
        missing = [k for k in SEARCH_KEYS if k not in self.ranges]
        extra = sorted(set(self.ranges) - set(SEARCH_KEYS))
        if missing or extra:
            raise ValueError(f"search space keys: missing {missing}, unknown {extra}")
        for key, (lo, hi) in self.ranges.items():
            if lo > hi:
                raise ValueError(f"{key}: lower bound {lo} exceeds upper bound {hi}")
            if key in COUNT_KEYS and lo < 1:
                raise ValueError(f"{key}: counts must be >= 1")

    @classmethod
    def default(cls) -> "SearchSpace":
        return cls({
            "class0_count": (1000, 24000),
            "class1_count": (1000, 8000),
            "class2_count": (1000, 8000),
            "num_leaves": (10, 50),
            "max_depth": (3, 15),
            "min_data_in_leaf": (20, 100),
        })

    @classmethod
    def from_mapping(cls, d: Optional[dict]) -> "SearchSpace":
        if not d:
            return cls.default()
        return cls({k: tuple(v) for k, v in d.items()})

    def is_integer(self, key: str) -> bool:
        lo, hi = self.ranges[key]
        return isinstance(lo, (int, np.integer)) and isinstance(hi, (int, np.integer))

    def sample(self, rng: np.random.Generator) -> dict:
        out = {}
        for key in SEARCH_KEYS:
            lo, hi = self.ranges[key]
            if self.is_integer(key):
                out[key] = int(rng.integers(lo, hi + 1))
            else:
                out[key] = float(rng.uniform(lo, hi))
        return out

    def contains(self, point: dict) -> bool:
        return all(self.ranges[k][0] <= point[k] <= self.ranges[k][1] for k in SEARCH_KEYS)


# -- partitioning and under-sampling ------------------------------------------


@dataclass
class Partition:
    train: np.ndarray
    test: np.ndarray
    seed: int


def stratified_split(labels: Sequence[int], train_frac: float = 0.8, seed: int = 0) -> Partition:
    """Per-class shuffled split.

    Each class gets ``floor(frac * n_c)`` training rows; the leftover rows
    needed to reach ``round(frac * n)`` overall go to the classes with the
    largest fractional parts (lower class first on ties). Every class keeps
    at least one row on each side.
    """
    y = np.asarray(labels)
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must lie strictly between 0 and 1")
    classes = np.unique(y)
    sizes = np.array([np.sum(y == c) for c in classes])
    small = [int(c) for c, n in zip(classes, sizes) if n < 2]
    if small:
        raise ValueError(f"classes with fewer than 2 rows cannot be split: {small}")
    exact = train_frac * sizes
    n_train = np.floor(exact).astype(np.int64)
    extra = int(round(train_frac * len(y))) - int(n_train.sum())
    order = sorted(range(len(classes)), key=lambda i: (-(exact[i] - n_train[i]), i))
    for i in order[:max(0, extra)]:
        if n_train[i] < exact[i]:
            n_train[i] += 1
    n_train = np.clip(n_train, 1, sizes - 1)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c, n in zip(classes, n_train):
        idx = rng.permutation(np.flatnonzero(y == c))
        train_idx.append(idx[:n])
        test_idx.append(idx[n:])
    return Partition(np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx)), seed)


def undersample(dataset: TabularDataset, target_counts: Sequence[int], seed: int = 0) -> TabularDataset:
    """Uniform per-class sampling without replacement to exactly ``target_counts``."""
    if dataset.labels is None:
        raise ValueError("under-sampling needs labels")
    if len(target_counts) != dataset.n_classes:
        raise ValueError(f"expected {dataset.n_classes} target counts, got {len(target_counts)}")
    rng = np.random.default_rng(seed)
    keep = []
    for c, target in enumerate(target_counts):
        idx = np.flatnonzero(dataset.labels == c)
        if target < 0:
            raise ValueError(f"class {c}: negative target count {target}")
        if target > len(idx):
            raise ValueError(f"class {c}: target {target} exceeds the {len(idx)} rows available")
        keep.append(rng.choice(idx, size=int(target), replace=False))
    return dataset.subset(np.sort(np.concatenate(keep)))


# -- random search ------------------------------------------------------------


@dataclass
class Trial:
    index: int
    params: dict
    seed: int
    map_eval: float = math.nan
    status: str = "ok"
    model: Optional[GbdtModel] = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def counts(self) -> list[int]:
        return [int(self.params[k]) for k in COUNT_KEYS]

    def to_dict(self) -> dict:
        return {"trial": self.index, "seed": self.seed, "params": self.params,
                "map_eval": self.map_eval, "status": self.status}


def _tree_config(fixed: TrainConfig, params: dict, seed: int) -> TrainConfig:
    return fixed.replace(
        num_leaves=int(params["num_leaves"]),
        max_depth=int(params["max_depth"]),
        min_data_in_leaf=int(params["min_data_in_leaf"]),
        seed=seed,
    )


def _run_trial(t, pool, eval_set, space, fixed, seed, keep_model) -> Trial:
    rng = np.random.default_rng([seed, t])
    params = space.sample(rng)
    trial = Trial(t, params, _derive_seed(seed, t))
    try:
        data = undersample(pool, trial.counts, seed=trial.seed)
        model = train(data, _tree_config(fixed, params, trial.seed), n_classes=pool.n_classes)
        trial.map_eval = mean_average_precision(predict_proba(model, eval_set), eval_set.labels)
        if keep_model:
            trial.model = model
    except (ValueError, FloatingPointError) as exc:
        trial.status = f"failed: {exc}"
    return trial


def best_trial(trials: Sequence[Trial]) -> Trial:
    """Highest mAP among successful trials; the lower index wins ties."""
    ok = [t for t in trials if t.ok]
    if not ok:
        raise TuningError("every trial failed")
    return max(ok, key=lambda t: (t.map_eval, -t.index))


def random_search(
    pool: TabularDataset,
    eval_set: TabularDataset,
    space: Optional[SearchSpace] = None,
    iterations: int = 1000,
    fixed: Optional[TrainConfig] = None,
    seed: int = 0,
    n_jobs: int = 1,
    keep_models: bool = False,
) -> tuple[Trial, list[Trial]]:
    """Under-sample the pool and train one GBDT per trial; score mAP on ``eval_set``.

    Trial ``t`` draws its hyperparameters from ``default_rng([seed, t])``,
    so results do not depend on ``n_jobs``. The best trial keeps its model.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if eval_set.labels is None:
        raise ValueError("evaluation rows need labels")
    absent = [c for c in range(pool.n_classes) if not np.any(eval_set.labels == c)]
    if absent:
        raise ValueError(f"evaluation rows lack classes {absent}")
    space = space or SearchSpace.default()
    fixed = fixed or TrainConfig()
    args = (pool, eval_set, space, fixed, seed, keep_models)
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            trials = list(ex.map(lambda t: _run_trial(t, *args), range(iterations)))
    else:
        trials = [_run_trial(t, *args) for t in range(iterations)]
    best = best_trial(trials)
    if best.model is None:
        data = undersample(pool, best.counts, seed=best.seed)
        best.model = train(data, _tree_config(fixed, best.params, best.seed), n_classes=pool.n_classes)
    return best, trials


def write_trials_csv(path: str | Path, trials: Sequence[Trial]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIALS_HEADER)
        for t in sorted(trials, key=lambda t: t.index):
            p = t.params
            w.writerow([t.index, p["class0_count"], p["class1_count"], p["class2_count"], p["num_leaves"],
                        p["max_depth"], p["min_data_in_leaf"], "" if math.isnan(t.map_eval) else repr(t.map_eval),
                        t.status])


def read_trials_csv(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_best_trial(path: str | Path, trial: Trial) -> None:
    Path(path).write_text(json.dumps(trial.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def read_best_trial(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


# -- synthesizer grid ---------------------------------------------------------


@dataclass
class SynthGrid:
    gen_lrs: Sequence[float]
    disc_lrs: Sequence[float]
    epochs: Sequence[int]

    def __post_init__(self):
        if not (self.gen_lrs and self.disc_lrs and self.epochs):
            raise ValueError("every grid axis needs at least one value")

    def __len__(self):
        return len(self.gen_lrs) * len(self.disc_lrs) * len(self.epochs)

    @classmethod
    def from_mapping(cls, d: dict) -> "SynthGrid":
        return cls([float(v) for v in d["gen_lr"]], [float(v) for v in d["disc_lr"]], [int(v) for v in d["epochs"]])


@dataclass
class GridResult:
    index: int
    gen_lr: float
    disc_lr: float
    epochs: int
    map_pretrain: float = math.nan
    map_real: float = math.nan
    status: str = "ok"
    rank: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def _score_cell(cell, synth_model, train80, test20, n_rows, ratios, holdout_frac, gbdt, seed):
    aug = sample(synth_model, n_rows, ratios, seed=_derive_seed(seed, cell.index, 0))
    part = stratified_split(aug.labels, 1.0 - holdout_frac, seed=_derive_seed(seed, cell.index, 1))
    fit_rows, holdout = aug.subset(part.train), aug.subset(part.test)
    model = train(fit_rows, gbdt.replace(seed=_derive_seed(seed, cell.index, 2)), n_classes=train80.n_classes)
    cell.map_pretrain = mean_average_precision(predict_proba(model, holdout), holdout.labels)
    cell.map_real = mean_average_precision(predict_proba(model, test20), test20.labels)


def grid_search_synth(
    train80: TabularDataset,
    test20: TabularDataset,
    grid: SynthGrid,
    base: Optional[SynthConfig] = None,
    gbdt: Optional[TrainConfig] = None,
    n_rows: int = 50000,
    ratios: Sequence[float] = (0.6, 0.2, 0.2),
    holdout_frac: float = 0.2,
    seed: int = 0,
    n_jobs: int = 1,
) -> list[GridResult]:
    """Score every (gen_lr, disc_lr, epochs) cell and rank by pretraining mAP.

    One synthesizer is fit per learning-rate pair up to the largest epoch;
    the epoch axis reads its checkpoints. Each cell's synthetic rows are split
    into a GBDT training part and a held-out part: ``map_pretrain`` is scored
    on the held-out synthetic rows, ``map_real`` on ``test20``. A diverging
    synthesizer fails all its cells; the search goes on.
    """
    base = base or SynthConfig()
    gbdt = gbdt or TrainConfig()
    epochs = sorted(set(int(e) for e in grid.epochs))
    cells, idx = [], 0
    for g, d in itertools.product(grid.gen_lrs, grid.disc_lrs):
        for e in grid.epochs:
            cells.append(GridResult(idx, float(g), float(d), int(e)))
            idx += 1

    def run_pair(pair_idx: int, g: float, d: float) -> None:
        n_ep = len(grid.epochs)
        mine = cells[pair_idx * n_ep:(pair_idx + 1) * n_ep]
        cfg = base.replace(gen_lr=g, disc_lr=d, max_epochs=max(epochs), checkpoint_every=max(epochs),
                           seed=_derive_seed(seed, pair_idx))
        try:
            model = fit(train80, k=train80.n_classes, config=cfg, checkpoint_epochs=epochs)
        except (SynthDivergenceError, ValueError) as exc:
            for c in mine:
                c.status = f"failed: {exc}"
            return
        for c in mine:
            try:
                _score_cell(c, model.checkpoints[c.epochs], train80, test20, n_rows, ratios, holdout_frac, gbdt, seed)
            except (ValueError, FloatingPointError) as exc:
                c.status = f"failed: {exc}"

    pairs = list(enumerate(itertools.product(grid.gen_lrs, grid.disc_lrs)))
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            list(ex.map(lambda p: run_pair(p[0], *p[1]), pairs))
    else:
        for i, (g, d) in pairs:
            run_pair(i, g, d)

    ok = sorted((c for c in cells if c.ok), key=lambda c: (-c.map_pretrain, c.index))
    failed = [c for c in cells if not c.ok]
    ranked = ok + failed
    for r, c in enumerate(ranked, start=1):
        c.rank = r
    return ranked


def write_grid_csv(path: str | Path, results: Sequence[GridResult]) -> None:
    def fmt(v):
        return "" if math.isnan(v) else repr(v)

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_HEADER)
        for c in sorted(results, key=lambda c: c.rank):
            w.writerow([c.rank, repr(c.gen_lr), repr(c.disc_lr), c.epochs, fmt(c.map_pretrain), fmt(c.map_real), c.status])
