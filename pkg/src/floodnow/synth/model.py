"""
Conditional tabular GAN trained with training-by-sampling.

Generator input is ``[z, onehot(class)]``; its output has one logistic unit
per numeric feature and one softmax block per categorical feature
(Gumbel-softmax during training, Gumbel-max one-hot when sampling). The
discriminator sees ``[row, onehot(class)]`` and emits a single logit. The
class label of a synthetic row is the condition it was generated under.

Two stabilizers keep this plain setup from oscillating. Categorical blocks
are straight-through: the discriminator sees hard one-hot vectors, as in
real rows, while gradients flow through the Gumbel-softmax relaxation.
Sampling uses an exponential moving average of the generator weights.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..dataset import FeatureSchema, TabularDataset
from .encoding import EncodingLayout, decode, encode
from .network import AdamState, NetworkParams, adam_step, backward, forward

MODEL_FORMAT = "floodnow-synth"
MODEL_VERSION = 1
MA_WINDOW = 50
_OPEN_EPS = 1e-15


class SynthDivergenceError(FloatingPointError):
    def __init__(self, message: str, log: "TrainingLog"):
        super().__init__(message)
        self.log = log


@dataclass
class SynthConfig:
    latent_dim: int = 64
    hidden_dims: list[int] = field(default_factory=lambda: [128, 128])
    gen_lr: float = 2e-4
    disc_lr: float = 2e-4
    batch_size: int = 500
    max_epochs: int = 1000
    checkpoint_every: int = 50
    gumbel_tau: float = 0.2
    straight_through: bool = True
    ema_decay: float = 0.999
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        self.hidden_dims = [int(h) for h in self.hidden_dims]
        if not self.max_epochs >= self.checkpoint_every >= 1:
            raise ValueError("need max_epochs >= checkpoint_every >= 1")
        if self.gen_lr <= 0 or self.disc_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.gumbel_tau <= 0:
            raise ValueError("gumbel_tau must be positive")
        if self.batch_size < 1 or self.latent_dim < 1:
            raise ValueError("batch_size and latent_dim must be positive")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must be in [0, 1)")

    def replace(self, **changes) -> "SynthConfig":
        d = asdict(self)
        d.update(changes)
        return SynthConfig(**d)

    @classmethod
    def from_mapping(cls, d: Optional[dict]) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d or {}) - known
        if unknown:
            raise ValueError(f"unknown synthesizer settings: {sorted(unknown)}")
        return cls(**(d or {}))


@dataclass
class TrainingLog:
    gen_loss: list[float] = field(default_factory=list)
    disc_loss: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.gen_loss)

    @staticmethod
    def moving_average(values: Sequence[float], window: int = MA_WINDOW) -> list[Optional[float]]:
        """Trailing mean; undefined (None) before ``window`` points exist."""
        out: list[Optional[float]] = []
        for i in range(len(values)):
            out.append(math.fsum(values[i - window + 1:i + 1]) / window if i + 1 >= window else None)
        return out

    def write_csv(self, path: str | Path) -> None:
        gma = self.moving_average(self.gen_loss)
        dma = self.moving_average(self.disc_loss)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "gen_loss", "disc_loss", "gen_loss_ma50", "disc_loss_ma50"])
            for i, (g, d) in enumerate(zip(self.gen_loss, self.disc_loss)):
                w.writerow([i + 1, repr(g), repr(d), "" if gma[i] is None else repr(gma[i]),
                            "" if dma[i] is None else repr(dma[i])])


@dataclass
class SynthesizerModel:
    schema: FeatureSchema
    n_classes: int
    generator: NetworkParams
    discriminator: NetworkParams
    config: SynthConfig
    log: TrainingLog = field(default_factory=TrainingLog)
    epoch: int = 0
    checkpoints: dict[int, "SynthesizerModel"] = field(default_factory=dict, repr=False)

    @property
    def layout(self) -> EncodingLayout:
        return EncodingLayout(self.schema)

    def snapshot(self) -> "SynthesizerModel":
        return SynthesizerModel(
            self.schema, self.n_classes, self.generator.copy(), self.discriminator.copy(), self.config,
            TrainingLog(list(self.log.gen_loss), list(self.log.disc_loss)), self.epoch,
        )

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "schema": self.schema.to_list(),
            "n_classes": self.n_classes,
            "epoch": self.epoch,
            "config": asdict(self.config),
            "generator": self.generator.to_dict(),
            "discriminator": self.discriminator.to_dict(),
            "log": {"gen_loss": self.log.gen_loss, "disc_loss": self.log.disc_loss},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthesizerModel":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise ValueError("not a supported synthesizer model file")
        return cls(
            schema=FeatureSchema.from_list(d["schema"]),
            n_classes=int(d["n_classes"]),
            generator=NetworkParams.from_dict(d["generator"]),
            discriminator=NetworkParams.from_dict(d["discriminator"]),
            config=SynthConfig(**d["config"]),
            log=TrainingLog([float(v) for v in d["log"]["gen_loss"]], [float(v) for v in d["log"]["disc_loss"]]),
            epoch=int(d["epoch"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SynthesizerModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# -- forward passes -------------------------------------------------------


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def _softplus(x):
    return np.logaddexp(0.0, x)


def _softmax(u):
    u = u - u.max(axis=1, keepdims=True)
    e = np.exp(u)
    return e / e.sum(axis=1, keepdims=True)


def _onehot(labels, k) -> np.ndarray:
    out = np.zeros((len(labels), k))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _head(logits, layout: EncodingLayout, tau: float, gumbel=None, hard=False):
    out = np.empty_like(logits)
    cols = layout.numeric_cols
    out[:, cols] = _sigmoid(logits[:, cols])
    for s, e in layout.blocks:
        u = logits[:, s:e] if gumbel is None else logits[:, s:e] + gumbel[:, s:e]
        if hard:
            out[:, s:e] = _onehot(np.argmax(u, axis=1), e - s)
        else:
            out[:, s:e] = _softmax(u / tau)
    return out


def _head_backward(out, dout, layout: EncodingLayout, tau: float):
    dlogits = np.empty_like(out)
    cols = layout.numeric_cols
    y = out[:, cols]
    dlogits[:, cols] = dout[:, cols] * y * (1.0 - y)
    for s, e in layout.blocks:
        y, dy = out[:, s:e], dout[:, s:e]
        dlogits[:, s:e] = y * (dy - np.sum(dy * y, axis=1, keepdims=True)) / tau
    return dlogits


def generator_forward(
    params: NetworkParams,
    z: np.ndarray,
    condition: np.ndarray,
    layout: EncodingLayout,
    tau: float = 1.0,
    gumbel: Optional[np.ndarray] = None,
    hard: bool = False,
):
    """Encoded rows for latent ``z`` under one-hot ``condition``.

    Without ``gumbel`` noise the categorical blocks are plain softmax
    probabilities; ``hard=True`` replaces each block by the one-hot argmax.
    """
    z = np.atleast_2d(z)
    condition = np.atleast_2d(condition)
    logits, _ = forward(params, np.hstack([z, condition]))
    return _head(logits, layout, tau, gumbel, hard)


def _gumbel(rng, shape):
    u = rng.uniform(np.finfo(float).tiny, 1.0, size=shape)
    return -np.log(-np.log(u))


# -- losses and gradients -------------------------------------------------


def _disc_loss_grads(disc: NetworkParams, real, fake, cond):
    x = np.vstack([np.hstack([real, cond]), np.hstack([fake, cond])])
    s, cache = forward(disc, x)
    s = s[:, 0]
    b = len(real)
    s_real, s_fake = s[:b], s[b:]
    loss = float(np.mean(_softplus(-s_real)) + np.mean(_softplus(s_fake)))
    ds = np.concatenate([-_sigmoid(-s_real), _sigmoid(s_fake)]) / b
    grads, _ = backward(disc, cache, ds[:, None])
    return loss, grads


def _gen_loss_grads(gen: NetworkParams, disc: NetworkParams, z, cond, gumbel, layout, tau, straight_through=False):
    """Non-saturating generator loss and its gradients.

    With ``straight_through`` the discriminator is shown hard one-hot blocks
    while the backward pass uses the softmax relaxation.
    """
    logits, gcache = forward(gen, np.hstack([z, cond]))
    fake = _head(logits, layout, tau, gumbel)
    seen = _head(logits, layout, tau, gumbel, hard=True) if straight_through else fake
    s, dcache = forward(disc, np.hstack([seen, cond]))
    s = s[:, 0]
    loss = float(np.mean(_softplus(-s)))
    ds = -_sigmoid(-s) / len(s)
    _, dx = backward(disc, dcache, ds[:, None])
    dlogits = _head_backward(fake, dx[:, :layout.width], layout, tau)
    grads, _ = backward(gen, gcache, dlogits)
    return loss, grads


def _build_networks(width: int, k: int, config: SynthConfig, rng) -> tuple[NetworkParams, NetworkParams]:
    gen = NetworkParams.init([config.latent_dim + k, *config.hidden_dims, width], "relu", rng)
    disc = NetworkParams.init([width + k, *config.hidden_dims, 1], "leaky_relu", rng)
    return gen, disc


# -- training -------------------------------------------------------------


def fit(
    dataset: TabularDataset,
    k: Optional[int] = None,
    config: Optional[SynthConfig] = None,
    checkpoint_epochs: Optional[Sequence[int]] = None,
    checkpoint_dir: Optional[str | Path] = None,
) -> SynthesizerModel:
    """Adversarial training with uniformly sampled class conditions.

    Each step draws a class per row uniformly over all ``k`` classes and then
    a real row of that class (with replacement), so minority classes appear
    as often as the majority. One discriminator update is followed by one
    generator update (non-saturating loss). An epoch is
    ``max(1, n_rows // batch_size)`` steps; losses are the epoch means.
    The returned model and every snapshot carry the weight-averaged
    generator when ``ema_decay > 0``.

    Snapshots are kept at every ``checkpoint_every`` epochs (or at the
    explicit ``checkpoint_epochs``) in ``model.checkpoints`` and, when
    ``checkpoint_dir`` is given, written there as ``synth_epoch_NNNN.json``.
    """
    config = config or SynthConfig()
    if dataset.labels is None:
        raise ValueError("synthesizer training needs labels")
    k = k or dataset.n_classes
    y = dataset.labels
    by_class = [np.flatnonzero(y == c) for c in range(k)]
    empty = [c for c in range(k) if len(by_class[c]) == 0]
    if empty:
        raise ValueError(f"classes without training rows: {empty}")

    layout = EncodingLayout(dataset.schema)
    data = encode(dataset, layout)
    rng = np.random.default_rng(config.seed)
    gen, disc = _build_networks(layout.width, k, config, rng)
    g_state = AdamState.zeros_like(gen.arrays)
    d_state = AdamState.zeros_like(disc.arrays)
    model = SynthesizerModel(dataset.schema, k, gen, disc, config)
    if checkpoint_epochs is None:
        checkpoint_epochs = range(config.checkpoint_every, config.max_epochs + 1, config.checkpoint_every)
    ckpt = set(int(e) for e in checkpoint_epochs)
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)

    ema = gen.copy() if config.ema_decay > 0 else None
    steps = max(1, dataset.n_rows // config.batch_size)
    bsz = config.batch_size
    tau = config.gumbel_tau
    adam = dict(beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps)
    d_names = [f"discriminator.{n}" for n in disc.names]
    g_names = [f"generator.{n}" for n in gen.names]
    for epoch in range(1, config.max_epochs + 1):
        g_losses, d_losses = [], []
        for _ in range(steps):
            cls = rng.integers(k, size=bsz)
            pick = np.empty(bsz, dtype=np.int64)
            u = rng.random(bsz)
            for c in range(k):
                sel = cls == c
                pick[sel] = by_class[c][(u[sel] * len(by_class[c])).astype(np.int64)]
            cond = _onehot(cls, k)
            z = rng.standard_normal((bsz, config.latent_dim))
            noise = _gumbel(rng, (bsz, layout.width))
            logits, _ = forward(gen, np.hstack([z, cond]))
            fake = _head(logits, layout, tau, noise, hard=config.straight_through)
            d_loss, d_grads = _disc_loss_grads(disc, data[pick], fake, cond)
            try:
                adam_step(disc.arrays, d_grads, d_state, config.disc_lr, names=d_names, **adam)
            except FloatingPointError as exc:
                raise SynthDivergenceError(str(exc), model.log) from None

            cls = rng.integers(k, size=bsz)
            cond = _onehot(cls, k)
            z = rng.standard_normal((bsz, config.latent_dim))
            noise = _gumbel(rng, (bsz, layout.width))
            g_loss, g_grads = _gen_loss_grads(gen, disc, z, cond, noise, layout, tau, config.straight_through)
            try:
                adam_step(gen.arrays, g_grads, g_state, config.gen_lr, names=g_names, **adam)
            except FloatingPointError as exc:
                raise SynthDivergenceError(str(exc), model.log) from None
            if ema is not None:
                # short warm-up so early snapshots are not dominated by the initial weights
                d = min(config.ema_decay, (1.0 + g_state.step) / (10.0 + g_state.step))
                for a, e in zip(gen.arrays, ema.arrays):
                    e *= d
                    e += (1.0 - d) * a
            g_losses.append(g_loss)
            d_losses.append(d_loss)
        gl, dl = float(np.mean(g_losses)), float(np.mean(d_losses))
        if not (math.isfinite(gl) and math.isfinite(dl)):
            raise SynthDivergenceError(f"non-finite loss at epoch {epoch}", model.log)
        model.log.gen_loss.append(gl)
        model.log.disc_loss.append(dl)
        model.epoch = epoch
        if epoch in ckpt:
            snap = model.snapshot()
            if ema is not None:
                snap.generator = ema.copy()
            model.checkpoints[epoch] = snap
            if checkpoint_dir is not None:
                snap.save(Path(checkpoint_dir) / f"synth_epoch_{epoch:04d}.json")
    if ema is not None:
        model.generator = ema
    return model


# -- sampling -------------------------------------------------------------


def class_counts(n: int, ratios: Sequence[float]) -> np.ndarray:
    """Largest-remainder apportionment of ``n`` rows to the given ratios."""
    r = np.asarray(ratios, dtype=np.float64)
    if np.any(r < 0):
        raise ValueError(f"negative class ratio in {list(ratios)}")
    if abs(r.sum() - 1.0) > 1e-9:
        raise ValueError(f"class ratios must sum to 1, got {r.sum()}")
    if n < 1:
        raise ValueError("n must be >= 1")
    exact = n * r
    counts = np.floor(exact).astype(np.int64)
    rem = n - int(counts.sum())
    order = sorted(range(len(r)), key=lambda c: (-(exact[c] - counts[c]), c))
    for c in order[:rem]:
        counts[c] += 1
    return counts


def sample(model: SynthesizerModel, n: int, class_ratios: Sequence[float], seed: int = 0) -> TabularDataset:
    """Draw ``n`` labeled rows; per-class counts follow ``class_counts``."""
    if len(class_ratios) != model.n_classes:
        raise ValueError(f"expected {model.n_classes} class ratios, got {len(class_ratios)}")
    counts = class_counts(n, class_ratios)
    layout = model.layout
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(model.n_classes), counts)
    z = rng.standard_normal((n, model.config.latent_dim))
    noise = _gumbel(rng, (n, layout.width))
    enc = generator_forward(
        model.generator, z, _onehot(labels, model.n_classes), layout, model.config.gumbel_tau, noise, hard=True
    )
    enc[:, layout.numeric_cols] = np.clip(enc[:, layout.numeric_cols], _OPEN_EPS, 1.0 - _OPEN_EPS)
    perm = rng.permutation(n)
    return decode(enc[perm], layout, labels[perm], model.n_classes)


# -- gradient check -------------------------------------------------------


@dataclass
class GradientCheck:
    discriminator: float
    generator: float

    @property
    def worst(self) -> float:
        return max(self.discriminator, self.generator)


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def _fd(loss_fn, arrays: list[np.ndarray], h: float) -> list[np.ndarray]:
    out = []
    for p in arrays:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss_fn()
            flat[i] = old - h
            down = loss_fn()
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def gradient_check(
    config: SynthConfig, dataset: TabularDataset, batch: int = 16, seed: int = 0, h: float = 1e-6
) -> GradientCheck:
    """Analytic vs central-difference gradients of both adversarial losses.

    Noise (latent, Gumbel) and the batch are fixed, so both losses are
    deterministic functions of the parameters. The error for each parameter
    array is ``max|a - n| / max(|a|, |n|)`` over its entries; the worst array
    is reported per network.
    """
    k = dataset.n_classes
    layout = EncodingLayout(dataset.schema)
    data = encode(dataset, layout)
    rng = np.random.default_rng(seed)
    gen, disc = _build_networks(layout.width, k, config, rng)
    idx = rng.integers(dataset.n_rows, size=batch)
    real = data[idx]
    cond = _onehot(dataset.labels[idx], k)
    z = rng.standard_normal((batch, config.latent_dim))
    noise = _gumbel(rng, (batch, layout.width))
    logits, _ = forward(gen, np.hstack([z, cond]))
    fake = _head(logits, layout, config.gumbel_tau, noise)

    tau = config.gumbel_tau
    _, d_an = _disc_loss_grads(disc, real, fake, cond)
    d_num = _fd(lambda: _disc_loss_grads(disc, real, fake, cond)[0], disc.arrays, h)
    _, g_an = _gen_loss_grads(gen, disc, z, cond, noise, layout, tau)
    g_num = _fd(lambda: _gen_loss_grads(gen, disc, z, cond, noise, layout, tau)[0], gen.arrays, h)
    return GradientCheck(
        discriminator=max(_rel_error(a, n) for a, n in zip(d_an, d_num)),
        generator=max(_rel_error(a, n) for a, n in zip(g_an, g_num)),
    )
