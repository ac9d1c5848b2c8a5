"""
Claim ingestion, value scaling and spatial gridding.

Also home to the tabular containers (``FeatureSchema``, ``TabularDataset``)
shared by the learning modules. Categorical columns are stored as integer
level codes inside a float matrix; the schema maps codes back to strings.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SOURCES = ("NFIP", "IA")
CLAIMS_HEADER = ["claim_id", "source", "building_id", "x", "y", "amount"]
DEFAULT_CAP_PERCENTILE = 0.99


class IngestError(ValueError):
    """Malformed or out-of-contract input data."""


@dataclass(frozen=True)
class ClaimRecord:
    claim_id: str
    source: str
    building_id: str
    x: float
    y: float
    amount: float

    def __post_init__(self):
        if self.source not in SOURCES:
            raise IngestError(f"claim {self.claim_id!r}: unknown source {self.source!r}")
        if not self.amount > 0:
            raise IngestError(f"claim {self.claim_id!r}: amount must be > 0, got {self.amount}")


@dataclass(frozen=True)
class GridSpec:
    origin_x: float
    origin_y: float
    n_cols: int
    n_rows: int
    cell_size: float = 500.0

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        if self.n_cols < 1 or self.n_rows < 1:
            raise ValueError("grid needs at least one column and one row")

    @property
    def n_cells(self) -> int:
        return self.n_cols * self.n_rows

    @classmethod
    def from_mapping(cls, d: dict) -> "GridSpec":
        return cls(
            origin_x=float(d["origin_x"]),
            origin_y=float(d["origin_y"]),
            n_cols=int(d["n_cols"]),
            n_rows=int(d["n_rows"]),
            cell_size=float(d.get("cell_size", 500.0)),
        )


@dataclass
class GridCell:
    cell_id: tuple[int, int]
    claim_sum: float = 0.0
    claim_count: int = 0


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str = "numeric"
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise ValueError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if len(self.levels) < 1:
                raise ValueError(f"categorical feature {self.name!r} declares no levels")
            if len(set(self.levels)) != len(self.levels):
                raise ValueError(f"categorical feature {self.name!r} has duplicate levels")

    @property
    def is_categorical(self) -> bool:
        return self.kind == "categorical"

    def code(self, value) -> int:
        """Level string (or integer code) to integer code."""
        if isinstance(value, str):
            try:
                return self.levels.index(value)
            except ValueError:
                raise IngestError(
                    f"feature {self.name!r}: unknown level {value!r} (levels {list(self.levels)})"
                ) from None
        code = int(value)
        if code != value or not 0 <= code < len(self.levels):
            raise IngestError(f"feature {self.name!r}: invalid level code {value!r}")
        return code


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate feature names in schema: {names}")

    def __len__(self):
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    def __getitem__(self, i) -> Feature:
        return self.features[i]

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def to_list(self) -> list[dict]:
        out = []
        for f in self.features:
            d = {"name": f.name, "kind": f.kind}
            if f.is_categorical:
                d["levels"] = list(f.levels)
            out.append(d)
        return out

    @classmethod
    def from_list(cls, items: Iterable[dict]) -> "FeatureSchema":
        return cls(
            tuple(
                Feature(d["name"], d.get("kind", "numeric"), tuple(str(v) for v in d.get("levels", ())))
                for d in items
            )
        )

    @classmethod
    def numeric(cls, names: Sequence[str]) -> "FeatureSchema":
        return cls(tuple(Feature(n) for n in names))


@dataclass
class TabularDataset:
    """n x m feature matrix under a schema, with optional integer labels."""

    schema: FeatureSchema
    X: np.ndarray
    labels: np.ndarray | None = None
    n_classes: int | None = field(default=None)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[1] != len(self.schema):
            raise IngestError(
                f"data shape {self.X.shape} does not match schema width {len(self.schema)}"
            )
        if not np.all(np.isfinite(self.X)):
            raise IngestError("dataset contains missing or non-finite values")
        for j, f in enumerate(self.schema):
            if f.is_categorical:
                col = self.X[:, j]
                if np.any(col != np.round(col)) or np.any(col < 0) or np.any(col >= len(f.levels)):
                    raise IngestError(f"feature {f.name!r}: categorical codes outside declared levels")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.X.shape[0],):
                raise IngestError("labels length does not match row count")
            if self.n_classes is None:
                self.n_classes = int(self.labels.max()) + 1 if len(self.labels) else 0
            if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
                raise IngestError(f"labels outside 0..{self.n_classes - 1}")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> "TabularDataset":
        idx = np.asarray(idx)
        labels = None if self.labels is None else self.labels[idx]
        return TabularDataset(self.schema, self.X[idx], labels, self.n_classes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


# -- claims ---------------------------------------------------------------


def merge_claims(nfip: Sequence[ClaimRecord], ia: Sequence[ClaimRecord]) -> list[ClaimRecord]:
    """Union of both claim sources with NFIP taking precedence per building.

    IA records for a building that has any NFIP record are dropped. Output is
    sorted by ``claim_id``.
    """
    seen = {}
    for rec in list(nfip) + list(ia):
        if rec.claim_id in seen:
            raise IngestError(f"duplicate claim_id {rec.claim_id!r}")
        seen[rec.claim_id] = rec
    nfip_buildings = {r.building_id for r in nfip}
    kept = list(nfip) + [r for r in ia if r.building_id not in nfip_buildings]
    return sorted(kept, key=lambda r: r.claim_id)


def sum_by_building(records: Sequence[ClaimRecord]) -> list[ClaimRecord]:
    """Collapse records sharing (source, building) into one, summing amounts.

    The surviving record keeps the lowest claim_id and its coordinates.
    """
    groups: dict[tuple[str, str], list[ClaimRecord]] = defaultdict(list)
    for r in records:
        groups[(r.source, r.building_id)].append(r)
    out = []
    for recs in groups.values():
        recs = sorted(recs, key=lambda r: r.claim_id)
        first = recs[0]
        total = math.fsum(r.amount for r in recs)
        out.append(ClaimRecord(first.claim_id, first.source, first.building_id, first.x, first.y, total))
    return sorted(out, key=lambda r: r.claim_id)


def cap_values(values: Sequence[float], percentile: float = DEFAULT_CAP_PERCENTILE) -> list[float]:
    """Clip values above the nearest-rank percentile of the list."""
    if len(values) == 0:
        raise ValueError("cap_values needs a non-empty list")
    if not 0 < percentile <= 1:
        raise ValueError(f"percentile must lie in (0, 1], got {percentile}")
    ordered = sorted(values)
    rank = max(1, math.ceil(percentile * len(ordered)))
    cap = ordered[rank - 1]
    return [min(v, cap) for v in values]


def min_max_normalize(values: Sequence[float]) -> list[float]:
    if len(values) == 0:
        raise ValueError("min_max_normalize needs a non-empty list")
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.0] * len(values)
    span = hi - lo
    return [min(1.0, max(0.0, (v - lo) / span)) for v in values]


def normalize_claims(
    records: Sequence[ClaimRecord], percentile: float = DEFAULT_CAP_PERCENTILE
) -> list[tuple[ClaimRecord, float]]:
    """Cap then min-max normalize amounts separately within each source."""
    out: list[tuple[ClaimRecord, float]] = []
    for source in SOURCES:
        recs = [r for r in records if r.source == source]
        if not recs:
            continue
        scaled = min_max_normalize(cap_values([r.amount for r in recs], percentile))
        out.extend(zip(recs, scaled))
    return sorted(out, key=lambda t: t[0].claim_id)


# -- grid -----------------------------------------------------------------


def cell_of(point: tuple[float, float], grid: GridSpec) -> tuple[int, int]:
    x, y = point
    col = math.floor((x - grid.origin_x) / grid.cell_size)
    row = math.floor((y - grid.origin_y) / grid.cell_size)
    if not (0 <= col < grid.n_cols and 0 <= row < grid.n_rows):
        raise IngestError(f"point ({x}, {y}) lies outside the grid extent")
    return col, row


def aggregate_to_grid(
    claims: Iterable[tuple[tuple[float, float], float]], grid: GridSpec
) -> list[GridCell]:
    """Sum normalized claim values per grid cell.

    Every cell of the grid is returned, row-major by (row, col), including
    cells with no claims. Per-cell sums use compensated summation.
    """
    values: dict[tuple[int, int], list[float]] = defaultdict(list)
    for point, value in claims:
        if not 0.0 <= value <= 1.0:
            raise IngestError(f"normalized claim value {value} outside [0, 1]")
        values[cell_of(point, grid)].append(value)
    cells = []
    for row in range(grid.n_rows):
        for col in range(grid.n_cols):
            vs = values.get((col, row), ())
            cells.append(GridCell((col, row), math.fsum(vs), len(vs)))
    return cells


# -- CSV io ---------------------------------------------------------------


def read_claims_csv(path: str | Path) -> list[ClaimRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if [h.strip() for h in header] != CLAIMS_HEADER:
            raise IngestError(f"{path}:1: expected header {','.join(CLAIMS_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CLAIMS_HEADER):
                raise IngestError(f"{path}:{lineno}: expected {len(CLAIMS_HEADER)} fields, got {len(row)}")
            claim_id, source, building_id, x, y, amount = (c.strip() for c in row)
            try:
                records.append(ClaimRecord(claim_id, source, building_id, float(x), float(y), float(amount)))
            except ValueError as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from None
    return records


def write_claims_csv(path: str | Path, records: Iterable[ClaimRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CLAIMS_HEADER)
        for r in records:
            w.writerow([r.claim_id, r.source, r.building_id, repr(float(r.x)), repr(float(r.y)), repr(float(r.amount))])


def write_grid_csv(path: str | Path, cells: Iterable[GridCell]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_col", "cell_row", "claim_sum", "claim_count"])
        for c in cells:
            w.writerow([c.cell_id[0], c.cell_id[1], repr(c.claim_sum), c.claim_count])


def read_grid_csv(path: str | Path) -> list[GridCell]:
    cells = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            cells.append(
                GridCell((int(row["cell_col"]), int(row["cell_row"])), float(row["claim_sum"]), int(row["claim_count"]))
            )
    return cells


def read_features_csv(path: str | Path, schema: FeatureSchema) -> tuple[list[tuple[int, int]], TabularDataset]:
    """Read ``cell_col,cell_row,<features...>`` into cell ids and a dataset."""
    expected = ["cell_col", "cell_row"] + schema.names
    cell_ids, rows = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != expected:
            raise IngestError(f"{path}:1: expected header {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise IngestError(f"{path}:{lineno}: expected {len(expected)} fields, got {len(row)}")
            try:
                cell_ids.append((int(row[0]), int(row[1])))
                values = []
                for f, raw in zip(schema, row[2:]):
                    raw = raw.strip()
                    if raw == "":
                        raise IngestError(f"missing value for {f.name!r}")
                    values.append(float(f.code(raw)) if f.is_categorical else float(raw))
            except ValueError as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from None
            rows.append(values)
    if len(set(cell_ids)) != len(cell_ids):
        raise IngestError(f"{path}: duplicate cell ids")
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(schema))
    return cell_ids, TabularDataset(schema, X)


def write_table_csv(
    path: str | Path,
    dataset: TabularDataset,
    prefix_header: Sequence[str] = (),
    prefix_rows: Sequence[Sequence] = (),
    label_column: str | None = None,
) -> None:
    """Write a dataset with categorical codes decoded to their level strings."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = list(prefix_header) + dataset.schema.names
        if label_column:
            header.append(label_column)
        w.writerow(header)
        for i in range(dataset.n_rows):
            row = list(prefix_rows[i]) if prefix_header else []
            for f, v in zip(dataset.schema, dataset.X[i]):
                row.append(f.levels[int(v)] if f.is_categorical else repr(float(v)))
            if label_column:
                row.append(int(dataset.labels[i]))
            w.writerow(row)


def read_table_csv(
    path: str | Path, schema: FeatureSchema, label_column: str | None = None, n_classes: int | None = None
) -> TabularDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows, labels = [], []
        for lineno, rec in enumerate(reader, start=2):
            try:
                rows.append([float(f.code(rec[f.name])) if f.is_categorical else float(rec[f.name]) for f in schema])
            except (KeyError, ValueError) as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from None
            if label_column:
                labels.append(int(rec[label_column]))
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(schema))
    return TabularDataset(schema, X, np.array(labels) if label_column else None, n_classes)


def normalize_numeric_columns(dataset: TabularDataset) -> TabularDataset:
    """Min-max scale every numeric column to [0, 1]; categorical columns untouched."""
    X = dataset.X.copy()
    for j, f in enumerate(dataset.schema):
        if not f.is_categorical and X.shape[0]:
            X[:, j] = min_max_normalize(X[:, j].tolist())
    return TabularDataset(dataset.schema, X, dataset.labels, dataset.n_classes)
