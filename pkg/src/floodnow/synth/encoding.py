"""Feature encoding for the synthesizer: numeric pass-through, categorical one-hot."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dataset import FeatureSchema, IngestError, TabularDataset


@dataclass(frozen=True)
class ColumnSpan:
    feature: int
    start: int
    width: int
    categorical: bool


class EncodingLayout:
    def __init__(self, schema: FeatureSchema):
        self.schema = schema
        spans, pos = [], 0
        for j, f in enumerate(schema):
            w = len(f.levels) if f.is_categorical else 1
            spans.append(ColumnSpan(j, pos, w, f.is_categorical))
            pos += w
        self.spans = spans
        self.width = pos
        self.numeric_cols = np.array([s.start for s in spans if not s.categorical], dtype=np.int64)
        self.blocks = [(s.start, s.start + s.width) for s in spans if s.categorical]


def encode(dataset: TabularDataset, layout: EncodingLayout | None = None) -> np.ndarray:
    layout = layout or EncodingLayout(dataset.schema)
    out = np.zeros((dataset.n_rows, layout.width))
    for span in layout.spans:
        col = dataset.X[:, span.feature]
        if span.categorical:
            out[np.arange(dataset.n_rows), span.start + col.astype(np.int64)] = 1.0
        else:
            if np.any(col < 0) or np.any(col > 1):
                raise IngestError(
                    f"feature {dataset.schema[span.feature].name!r} must be min-max normalized to [0, 1]"
                )
            out[:, span.start] = col
    return out


def decode(encoded: np.ndarray, layout: EncodingLayout, labels=None, n_classes=None) -> TabularDataset:
    encoded = np.asarray(encoded, dtype=np.float64)
    X = np.empty((encoded.shape[0], len(layout.schema)))
    for span in layout.spans:
        block = encoded[:, span.start:span.start + span.width]
        X[:, span.feature] = np.argmax(block, axis=1) if span.categorical else block[:, 0]
    return TabularDataset(layout.schema, X, labels, n_classes)
