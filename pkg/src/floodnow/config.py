"""Pipeline configuration: one YAML file with paths, grid, model settings and the master seed."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .dataset import DEFAULT_CAP_PERCENTILE, FeatureSchema, GridSpec
from .gbdt import TrainConfig
from .synth import SynthConfig
from .tuning import SearchSpace, SynthGrid

TOP_LEVEL_KEYS = {
    "seed", "paths", "grid", "cap_percentile", "labeling", "schema", "synth", "augment",
    "gbdt", "tune", "train", "plots",
}


class ConfigError(ValueError):
    pass


@dataclass
class LabelingSettings:
    k: int = 3
    restarts: int = 10
    elbow_max_k: int = 8


@dataclass
class AugmentSettings:
    n_rows: int = 50000
    class_ratios: tuple[float, ...] = (0.6, 0.2, 0.2)
    train_frac: float = 0.8
    epoch: Optional[int] = None  # checkpoint to sample from; None means the final epoch


@dataclass
class TuneSettings:
    iterations: int = 1000
    space: SearchSpace = field(default_factory=SearchSpace.default)
    n_jobs: int = 1
    synth_grid: Optional[SynthGrid] = None
    grid_rows: int = 50000


@dataclass
class TrainSettings:
    source: str = "augmented"
    use_tuned: bool = False
    class_counts: Optional[tuple[int, ...]] = None


@dataclass
class PipelineConfig:
    seed: int
    base_dir: Path
    claims: Optional[Path]
    features: Optional[Path]
    output: Path
    grid: Optional[GridSpec]
    schema: Optional[FeatureSchema]
    cap_percentile: float = DEFAULT_CAP_PERCENTILE
    labeling: LabelingSettings = field(default_factory=LabelingSettings)
    synth: SynthConfig = field(default_factory=SynthConfig)
    augment: AugmentSettings = field(default_factory=AugmentSettings)
    gbdt: TrainConfig = field(default_factory=TrainConfig)
    tune: TuneSettings = field(default_factory=TuneSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    plots: bool = True
    digest: str = ""

    def require(self, name: str):
        value = getattr(self, name)
        if value is None:
            raise ConfigError(f"config is missing '{name}'")
        return value


def _section(raw: dict, key: str, allowed: set[str]) -> dict:
    d = raw.get(key) or {}
    if not isinstance(d, dict):
        raise ConfigError(f"'{key}' must be a mapping")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in '{key}': {sorted(unknown)}")
    return d


def load_config(path: str | Path, seed: Optional[int] = None) -> PipelineConfig:
    """Parse and validate a pipeline config; ``seed`` overrides the file's seed."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_bytes()
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(raw) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if seed is None:
        if "seed" not in raw:
            raise ConfigError("'seed' is mandatory")
        seed = raw["seed"]
    base = path.parent.resolve()

    def resolve(p):
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else base / p

    paths = _section(raw, "paths", {"claims", "features", "output"})
    lab = _section(raw, "labeling", {"k", "restarts", "elbow_max_k"})
    aug = _section(raw, "augment", {"n_rows", "class_ratios", "train_frac", "epoch"})
    tune = _section(raw, "tune", {"iterations", "space", "n_jobs", "synth_grid", "grid_rows"})
    trn = _section(raw, "train", {"source", "use_tuned", "class_counts"})
    try:
        cfg = PipelineConfig(
            seed=int(seed),
            base_dir=base,
            claims=resolve(paths.get("claims")),
            features=resolve(paths.get("features")),
            output=resolve(paths.get("output", "out")),
            grid=GridSpec.from_mapping(raw["grid"]) if raw.get("grid") else None,
            schema=FeatureSchema.from_list(raw["schema"]) if raw.get("schema") else None,
            cap_percentile=float(raw.get("cap_percentile", DEFAULT_CAP_PERCENTILE)),
            labeling=LabelingSettings(**lab),
            synth=SynthConfig.from_mapping({**(raw.get("synth") or {}), "seed": int(seed)}),
            augment=AugmentSettings(
                n_rows=int(aug.get("n_rows", 50000)),
                class_ratios=tuple(float(r) for r in aug.get("class_ratios", (0.6, 0.2, 0.2))),
                train_frac=float(aug.get("train_frac", 0.8)),
                epoch=None if aug.get("epoch") is None else int(aug["epoch"]),
            ),
            gbdt=TrainConfig.from_mapping({**(raw.get("gbdt") or {}), "seed": int(seed)}),
            tune=TuneSettings(
                iterations=int(tune.get("iterations", 1000)),
                space=SearchSpace.from_mapping(tune.get("space")),
                n_jobs=int(tune.get("n_jobs", 1)),
                synth_grid=SynthGrid.from_mapping(tune["synth_grid"]) if tune.get("synth_grid") else None,
                grid_rows=int(tune.get("grid_rows", 50000)),
            ),
            train=TrainSettings(
                source=str(trn.get("source", "augmented")),
                use_tuned=bool(trn.get("use_tuned", False)),
                class_counts=tuple(int(c) for c in trn["class_counts"]) if trn.get("class_counts") else None,
            ),
            plots=bool(raw.get("plots", True)),
            digest=hashlib.sha256(text).hexdigest(),
        )
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if cfg.train.source not in ("real", "augmented"):
        raise ConfigError("train.source must be 'real' or 'augmented'")
    if cfg.augment.epoch is not None and cfg.augment.epoch > cfg.synth.max_epochs:
        raise ConfigError("augment.epoch exceeds synth.max_epochs")
    return cfg
