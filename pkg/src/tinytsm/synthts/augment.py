"""Univariate expansions, sparse mixing and post-transforms.

Series travel through the pipeline as ``(values, observed)`` pairs; values
stay finite everywhere and missingness lives only in the mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d, uniform_filter1d
from scipy.signal import lfilter


@dataclass
class AugmentationConfig:
    n_expansions_range: tuple[int, int] = (1, 5)
    mix_sparsity: int = 2
    mix_sparsity_jitter: int = 1
    pool_subsample: int = 8
    n_base_range: tuple[int, int] = (2, 6)
    post_transform_weights: dict = field(
        default_factory=lambda: {
            "identity": 3.0,
            "relu_floor": 1.0,
            "modulate": 1.0,
            "missing": 0.5,
            "outliers": 0.5,
            "spikes": 0.5,
        }
    )
    missing_rate_range: tuple[float, float] = (0.01, 0.1)
    real_mix_fraction: float = 0.0
    family_weights: dict | None = None
    p_calendar: float = 0.5
    max_channels: int | None = None

    def __post_init__(self):
        lo, hi = self.n_expansions_range
        if not 1 <= lo <= hi <= 5:
            raise ValueError("n_expansions_range must lie within 1..5")
        if self.mix_sparsity < 1:
            raise ValueError("mix_sparsity must be >= 1")
        if not 0.0 <= self.real_mix_fraction <= 1.0:
            raise ValueError("real_mix_fraction must lie in [0, 1]")
        if self.pool_subsample < 1:
            raise ValueError("pool_subsample must be >= 1")


# --- univariate expansions ----------------------------------------------------


def shift(x, k: int) -> np.ndarray:
    """Delay by ``k`` steps (advance if negative), padding with the edge value."""
    x = np.asarray(x, dtype=np.float64)
    if k == 0:
        return x.copy()
    n = len(x)
    k = int(np.clip(k, -(n - 1), n - 1))
    if k > 0:
        return np.r_[np.full(k, x[0]), x[: n - k]]
    return np.r_[x[-k:], np.full(-k, x[-1])]


def box_smooth(x, width: int) -> np.ndarray:
    return uniform_filter1d(np.asarray(x, dtype=np.float64), size=max(int(width), 1), mode="nearest")


def gaussian_smooth(x, sigma: float) -> np.ndarray:
    return gaussian_filter1d(np.asarray(x, dtype=np.float64), sigma=sigma, mode="nearest")


def ar_filter(x, alpha: float) -> np.ndarray:
    """Recursive filter ``z_t = alpha * z_{t-1} + x_t``."""
    return lfilter([1.0], [1.0, -alpha], np.asarray(x, dtype=np.float64))


def _random_expansion(x, mask, rng):
    kind = rng.choice(["shift", "box", "gauss", "ar"])
    n = len(x)
    if kind == "shift":
        k = int(rng.integers(-max(1, n // 20), max(2, n // 20)))
        return shift(x, k), shift(mask.astype(float), k) > 0.5
    if kind == "box":
        return box_smooth(x, int(rng.integers(2, 25))), mask
    if kind == "gauss":
        return gaussian_smooth(x, rng.uniform(0.5, 8.0)), mask
    alpha = rng.uniform(0.0, 0.95)
    # scale by (1 - alpha) so repeated rounds do not inflate the level
    return (1.0 - alpha) * ar_filter(x, alpha), mask


def univariate_expansions(x, rng, cfg: AugmentationConfig | None = None, mask=None) -> list:
    """Return ``N`` transformed copies of ``x`` as ``(values, mask)`` pairs."""
    cfg = cfg or AugmentationConfig()
    x = np.asarray(x, dtype=np.float64)
    mask = np.ones(len(x), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    lo, hi = cfg.n_expansions_range
    n_out = int(rng.integers(lo, hi + 1))
    return [_random_expansion(x, mask, rng) for _ in range(n_out)]


# --- sparse mixing ------------------------------------------------------------


def sample_mix_weights(n_pool: int, n_out: int, rng, cfg: AugmentationConfig) -> np.ndarray:
    """Sparse weight matrix of shape ``(n_out, n_pool)``; every row has >= 1 nonzero."""
    cap = min(5, n_pool)
    W = np.zeros((n_out, n_pool))
    for i in range(n_out):
        j = cfg.mix_sparsity_jitter
        k = int(np.clip(cfg.mix_sparsity + (rng.integers(-j, j + 1) if j else 0), 1, cap))
        idx = rng.choice(n_pool, k, replace=False)
        W[i, idx] = rng.choice([-1.0, 1.0], k) * rng.uniform(0.3, 1.5, k)
    return W


def sparse_mix(pool, rng, cfg: AugmentationConfig | None = None, noise_level: float = 0.0,
               n_out: int | None = None, masks=None, weights=None):
    """Sparse linear combinations of the pool.

    Inputs are rescaled to unit std before mixing so one large-scale member
    cannot dominate; the returned weights already include that rescaling, so
    each output equals ``weights[i] @ pool`` (plus noise). Pass ``weights``
    to bypass sampling.

    Returns ``(outputs, output_masks, weights)``.
    """
    cfg = cfg or AugmentationConfig()
    X = np.stack([np.asarray(p, dtype=np.float64) for p in pool])
    M = np.ones(X.shape, dtype=bool) if masks is None else np.stack(masks)
    n_out = len(pool) if n_out is None else n_out
    if weights is None:
        std = X.std(axis=1)
        inv = np.where(std > 0, 1.0 / np.where(std > 0, std, 1.0), 1.0)
        weights = sample_mix_weights(len(pool), n_out, rng, cfg) * inv[None, :]
    weights = np.asarray(weights, dtype=np.float64)
    Y = weights @ X
    if noise_level > 0:
        Y = Y + noise_level * Y.std(axis=1, keepdims=True) * rng.normal(size=Y.shape)
    out_masks = [M[w != 0].all(axis=0) for w in weights]
    return list(Y), out_masks, weights


# --- post-transforms ----------------------------------------------------------


def minmax_scale(x) -> np.ndarray | None:
    """Scale into [0, 1]; returns None for constant input."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi <= lo:
        return None
    return (x - lo) / (hi - lo)


def relu_floor(x) -> np.ndarray:
    s = minmax_scale(x)
    if s is None:
        return np.asarray(x, dtype=np.float64).copy()
    return np.maximum(s - 0.5, 0.0)


def amplitude_modulate(x1, x2) -> np.ndarray:
    s = minmax_scale(x2)
    x1 = np.asarray(x1, dtype=np.float64)
    return x1.copy() if s is None else x1 * s


def inject_missing(mask, rate: float, rng) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if rate <= 0:
        return mask.copy()
    out = mask & (rng.random(len(mask)) >= rate)
    if rng.random() < 0.5:
        # also knock out one contiguous gap
        n = len(mask)
        length = int(rng.integers(1, max(2, n // 20)))
        start = int(rng.integers(0, max(1, n - length)))
        out[start : start + length] = False
    if not out.any():
        out[-1] = True
    return out


def inject_outliers(x, rate: float, rng, scale: float = 5.0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).copy()
    hit = rng.random(len(x)) < rate
    sd = x.std() or 1.0
    x[hit] += rng.choice([-1.0, 1.0], hit.sum()) * scale * sd * rng.uniform(1, 2, hit.sum())
    return x


def inject_spikes(x, rate: float, rng) -> np.ndarray:
    """One-sided spikes that decay over a few steps."""
    x = np.asarray(x, dtype=np.float64)
    impulses = (rng.random(len(x)) < rate) * rng.exponential(3.0, len(x)) * (x.std() or 1.0)
    return x + lfilter([1.0], [1.0, -rng.uniform(0.0, 0.7)], impulses)


def post_transform(x, rng, cfg: AugmentationConfig | None = None, mask=None, x2=None, kind: str | None = None):
    """Apply one sampled post-transform. Returns ``(values, mask, kind)``."""
    cfg = cfg or AugmentationConfig()
    x = np.asarray(x, dtype=np.float64)
    mask = np.ones(len(x), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if kind is None:
        kinds = [k for k in cfg.post_transform_weights if k != "modulate" or x2 is not None]
        w = np.array([cfg.post_transform_weights[k] for k in kinds], dtype=float)
        kind = str(rng.choice(kinds, p=w / w.sum()))
    if kind == "identity":
        return x.copy(), mask.copy(), kind
    if kind == "relu_floor":
        return relu_floor(x), mask.copy(), kind
    if kind == "modulate":
        return amplitude_modulate(x, x2), mask.copy(), kind
    if kind == "missing":
        return x.copy(), inject_missing(mask, rng.uniform(*cfg.missing_rate_range), rng), kind
    if kind == "outliers":
        return inject_outliers(x, rng.uniform(0.001, 0.01), rng), mask.copy(), kind
    if kind == "spikes":
        return inject_spikes(x, rng.uniform(0.002, 0.02), rng), mask.copy(), kind
    raise ValueError(f"unknown post-transform {kind!r}")
