"""PNG figures rendered next to the CSV artifacts (headless Agg backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dataset import GridCell  # noqa: E402
from .metrics import ConfusionMatrix, PrCurve  # noqa: E402

# fixed metadata keeps repeated renders byte-identical
_PNG_META = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def _grid_image(cells: Sequence[GridCell], values: Sequence[float]) -> np.ndarray:
    n_cols = max(c.cell_id[0] for c in cells) + 1
    n_rows = max(c.cell_id[1] for c in cells) + 1
    img = np.full((n_rows, n_cols), np.nan)
    for c, v in zip(cells, values):
        img[c.cell_id[1], c.cell_id[0]] = v
    return img


def plot_grid(path, cells: Sequence[GridCell], values: Sequence[float], title: str, discrete: bool = False) -> Path:
    fig, ax = plt.subplots(figsize=(6, 5))
    img = _grid_image(cells, values)
    if discrete:
        k = int(np.nanmax(img)) + 1
        im = ax.imshow(img, origin="lower", cmap=plt.get_cmap("viridis", k), interpolation="nearest",
                       vmin=-0.5, vmax=k - 0.5)
        fig.colorbar(im, ax=ax, ticks=range(k))
    else:
        im = ax.imshow(img, origin="lower", cmap="viridis", interpolation="nearest")
        fig.colorbar(im, ax=ax)
    ax.set_xlabel("cell column")
    ax.set_ylabel("cell row")
    ax.set_title(title)
    return _save(fig, path)


def plot_elbow(path, curve: Sequence[tuple[int, float]]) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    ks, w = zip(*curve)
    ax.plot(ks, w, marker="o")
    ax.set_xlabel("k")
    ax.set_ylabel("within-cluster sum of squares")
    ax.set_xticks(list(ks))
    return _save(fig, path)


def plot_losses(path, gen_loss, disc_loss, gen_ma, disc_ma) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    epochs = np.arange(1, len(gen_loss) + 1)
    ax.plot(epochs, gen_loss, alpha=0.3, color="C0")
    ax.plot(epochs, disc_loss, alpha=0.3, color="C1")
    ma = lambda v: np.array([np.nan if x is None else x for x in v], dtype=float)  # noqa: E731
    ax.plot(epochs, ma(gen_ma), color="C0", label="generator (50-epoch mean)")
    ax.plot(epochs, ma(disc_ma), color="C1", label="discriminator (50-epoch mean)")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    return _save(fig, path)


def plot_pr_curves(path, curves: Sequence[PrCurve], aps: Sequence[float]) -> Path:
    fig, ax = plt.subplots(figsize=(5, 5))
    for c, (cv, ap) in enumerate(zip(curves, aps)):
        ax.step(np.r_[0.0, cv.recall], np.r_[cv.precision[0], cv.precision], where="pre", label=f"class {c} (AP {ap:.3f})")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.legend()
    return _save(fig, path)


def plot_confusion(path, cm: ConfusionMatrix) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 4))
    norm = cm.normalized()
    ax.imshow(norm, cmap="Blues", vmin=0, vmax=1)
    for i in range(cm.k):
        for j in range(cm.k):
            ax.text(j, i, f"{norm[i, j]:.2f}\n({cm.counts[i, j]})", ha="center", va="center",
                    color="white" if norm[i, j] > 0.5 else "black", fontsize=8)
    ax.set_xticks(range(cm.k))
    ax.set_yticks(range(cm.k))
    ax.set_xlabel("predicted class")
    ax.set_ylabel("actual class")
    return _save(fig, path)


def plot_importance(path, table: Sequence[tuple[str, int]]) -> Path:
    fig, ax = plt.subplots(figsize=(6, max(2.5, 0.3 * len(table) + 1)))
    names = [n for n, _ in table][::-1]
    counts = [c for _, c in table][::-1]
    ax.barh(names, counts)
    ax.set_xlabel("split count")
    return _save(fig, path)
