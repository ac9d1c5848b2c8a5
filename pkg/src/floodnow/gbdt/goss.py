from __future__ import annotations

import math

import numpy as np


def goss_sample(grad_norms, a: float, b: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Gradient-based one-side sampling.

    Keeps the ``ceil(a*n)`` rows with the largest gradient magnitude at weight
    1 and draws ``ceil(b*n)`` of the rest uniformly without replacement at
    weight ``(1-a)/b``. Returns sorted row indices and matching weights.
    """
    g = np.abs(np.asarray(grad_norms, dtype=np.float64))
    n = len(g)
    if a < 0 or b < 0 or a + b > 1 + 1e-12:
        raise ValueError(f"GOSS fractions need 0 <= a, b and a + b <= 1 (a={a}, b={b})")
    n_top = min(n, math.ceil(a * n))
    # stable sort on -|g|: equal magnitudes keep the lower row first
    order = np.argsort(-g, kind="stable")
    top = order[:n_top]
    rest = order[n_top:]
    n_rand = min(len(rest), math.ceil(b * n)) if b > 0 else 0
    rng = np.random.default_rng(seed)
    picked = rng.choice(rest, size=n_rand, replace=False) if n_rand else np.empty(0, dtype=np.int64)

    idx = np.concatenate([top, picked]).astype(np.int64)
    w = np.concatenate([np.ones(n_top), np.full(n_rand, (1.0 - a) / b if n_rand else 1.0)])
    sort = np.argsort(idx, kind="stable")
    return idx[sort], w[sort]
