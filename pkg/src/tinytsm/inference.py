"""Inference-time enhancements around a forecaster.

A *forecaster* is any callable ``f(series, horizon, future=None)`` returning
an original-scale array of shape ``(n_predicted_channels, horizon)``, rows in
``series.predicted_channels`` order. ``future`` carries known-future covariate
values beyond the history, shape ``(len(known_future), >= horizon)``, rows in
sorted channel order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.ndimage import convolve1d

from .model import TinyTSM
from .series import TimeSeries, strided_views

Forecaster = Callable[..., np.ndarray]

AUGMENTATIONS = ("signed_square", "signed_sqrt", "smooth5")


@dataclass
class InferenceConfig:
    use_mirror: bool = False
    noise_ensembles: int = 0
    noise_frac: float = 0.01
    augment_channels: tuple[str, ...] = ()
    sifi_stride: int | str = "auto"
    seed: int = 0

    def __post_init__(self):
        self.augment_channels = tuple(self.augment_channels)
        if self.noise_frac < 0:
            raise ValueError("noise_frac must be >= 0")
        if self.noise_ensembles < 0:
            raise ValueError("noise_ensembles must be >= 0")
        if self.sifi_stride != "auto" and int(self.sifi_stride) < 1:
            raise ValueError("sifi_stride must be >= 1 or 'auto'")
        for a in self.augment_channels:
            if a not in AUGMENTATIONS:
                raise ValueError(f"unknown augmentation {a!r}")

    def stride_for(self, length: int, max_context: int) -> int:
        if self.sifi_stride == "auto":
            return auto_stride(length, max_context)
        return int(self.sifi_stride)


def auto_stride(length: int, max_context: int) -> int:
    return max(1, math.ceil(length / max_context))


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------


def _negate(series: TimeSeries) -> TimeSeries:
    return series.with_values(-series.values)


def mirror_ensemble(forecaster: Forecaster, series: TimeSeries, horizon: int, future=None) -> np.ndarray:
    """``(f(y) - f(-y)) / 2``; every channel and the supplied future are negated."""
    neg_future = None if future is None else -np.asarray(future, dtype=np.float64)
    a = forecaster(series, horizon, future)
    b = forecaster(_negate(series), horizon, neg_future)
    return (a - b) / 2.0


def noise_ensemble(forecaster: Forecaster, series: TimeSeries, horizon: int, k: int, noise_frac: float,
                   rng, future=None) -> np.ndarray:
    """Mean forecast over ``k`` inputs jittered with Gaussian noise of std ``noise_frac * std(channel)``.

    ``noise_frac == 0`` returns the plain forecast untouched.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if noise_frac == 0:
        return forecaster(series, horizon, future)
    rng = np.random.default_rng(rng)
    obs = series.missing_mask
    vals = np.where(obs, series.values, 0.0)
    n = np.maximum(obs.sum(1, keepdims=True), 1)
    mean = vals.sum(1, keepdims=True) / n
    std = np.sqrt((np.where(obs, vals - mean, 0.0) ** 2).sum(1, keepdims=True) / n)
    acc = None
    for _ in range(k):
        jitter = rng.normal(size=vals.shape) * noise_frac * std
        noisy = series.with_values(np.where(obs, series.values + jitter, series.values))
        out = forecaster(noisy, horizon, future)
        acc = out if acc is None else acc + out
    return acc / k


# ---------------------------------------------------------------------------
# Feature augmentation
# ---------------------------------------------------------------------------


def signed_square(y):
    y = np.asarray(y, dtype=np.float64)
    return np.sign(y) * y * y


def signed_sqrt(y):
    y = np.asarray(y, dtype=np.float64)
    return np.sign(y) * np.sqrt(np.abs(y))


def smooth5(y, mask=None):
    """Centered width-5 box mean over observed points; the window shrinks at both ends."""
    y = np.asarray(y, dtype=np.float64)
    mask = np.isfinite(y) if mask is None else np.asarray(mask, dtype=bool)
    w = np.ones(5)
    num = convolve1d(np.where(mask, y, 0.0), w, mode="constant")
    den = convolve1d(mask.astype(np.float64), w, mode="constant")
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0), den > 0


def augment_features(series: TimeSeries, transforms=AUGMENTATIONS) -> TimeSeries:
    """Append transformed copies of the target channel as plain covariates."""
    t = series.target_channel
    y = series.values[t]
    obs = series.missing_mask[t]
    name = series.channel_names[t]
    out = series
    for kind in transforms:
        if kind == "signed_square":
            vals, m = signed_square(np.where(obs, y, 0.0)), obs
        elif kind == "signed_sqrt":
            vals, m = signed_sqrt(np.where(obs, y, 0.0)), obs
        elif kind == "smooth5":
            vals, m = smooth5(y, obs)
        else:
            raise ValueError(f"unknown augmentation {kind!r}")
        out = out.append_channels(np.where(m, vals, np.nan), [f"{name}:{kind}"], mask=m[None])
    return out


# ---------------------------------------------------------------------------
# Stride-interleaved inference
# ---------------------------------------------------------------------------


def sifi_index_map(length: int, stride: int, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """For each fine step ``t`` of the forecast, the producing view and its coarse step.

    Fine step ``t`` sits at absolute index ``a = length + t``; it belongs to
    view ``k = a mod n`` and is that view's coarse step
    ``j = (a - first_k) / n`` where ``first_k`` is the view's first index at or
    after ``length``. When ``n`` divides ``length`` this is ``t = k + j n``.
    """
    a = length + np.arange(horizon)
    k = a % stride
    first = length + (k - length) % stride
    j = (a - first) // stride
    return k, j


def sifi_forecast(forecaster: Forecaster, series: TimeSeries, stride: int, horizon: int, future=None) -> np.ndarray:
    """Forecast each strided view at the coarse frequency and interleave onto the fine grid."""
    if stride == 1:
        return forecaster(series, horizon, future)
    views = strided_views(series, stride)
    L = len(series)
    ks, js = sifi_index_map(L, stride, horizon)
    coarse_h = math.ceil(horizon / stride)
    fut = None if future is None else np.asarray(future, dtype=np.float64)
    out = None
    for view in views:
        k = view.offset
        vfut = None
        if fut is not None:
            first = L + (k - L) % stride
            idx = first - L + stride * np.arange(coarse_h)
            vfut = np.full((fut.shape[0], coarse_h), np.nan)
            ok = idx < fut.shape[1]
            vfut[:, ok] = fut[:, idx[ok]]
        pred = forecaster(view.to_series(), coarse_h, vfut)
        if out is None:
            out = np.empty((pred.shape[0], horizon))
        sel = ks == k
        out[:, sel] = pred[:, js[sel]]
    return out


# ---------------------------------------------------------------------------
# Model plumbing
# ---------------------------------------------------------------------------


def model_forecaster(model: TinyTSM) -> Forecaster:
    """Wrap a model as a forecaster: forward at the last position, then denormalize.

    Histories longer than ``max_context`` keep only their most recent
    ``max_context`` steps.
    """

    def f(series: TimeSeries, horizon: int, future=None) -> np.ndarray:
        L = len(series)
        if L > model.cfg.max_context:
            series = series.window(L - model.cfg.max_context, L)
        return model.forecast_output(series, horizon, future).final(horizon)

    return f


@dataclass
class ForecastResult:
    values: np.ndarray  # (n_predicted, horizon), original scale
    channels: list[str]
    horizon: int
    provenance: dict = field(default_factory=dict)

    def target(self, series: TimeSeries) -> np.ndarray:
        return self.values[series.predicted_channels.index(series.target_channel)]


def predict(model: TinyTSM | Forecaster, series: TimeSeries, horizon: int, cfg: InferenceConfig | None = None,
            future=None) -> ForecastResult:
    """Augment, optionally stride-interleave, ensemble per call, denormalize."""
    cfg = cfg or InferenceConfig()
    base = model_forecaster(model) if isinstance(model, TinyTSM) else model
    max_context = model.cfg.max_context if isinstance(model, TinyTSM) else 4096
    n_orig = len(series.predicted_channels)
    work = augment_features(series, cfg.augment_channels) if cfg.augment_channels else series

    f = base
    if cfg.use_mirror:
        inner_m = f
        f = lambda s, h, fut=None: mirror_ensemble(inner_m, s, h, fut)  # noqa: E731
    if cfg.noise_ensembles > 0:
        inner_n = f
        # fresh generator per call so every view of a SIFI run draws identically seeded noise
        f = lambda s, h, fut=None: noise_ensemble(  # noqa: E731
            inner_n, s, h, cfg.noise_ensembles, cfg.noise_frac, np.random.default_rng(cfg.seed), fut
        )
    stride = cfg.stride_for(len(series), max_context)
    values = sifi_forecast(f, work, stride, horizon, future) if stride > 1 else f(work, horizon, future)
    # augmented channels are appended after the originals, so their rows come last
    values = values[:n_orig]
    provenance = {
        "augment_channels": list(cfg.augment_channels),
        "sifi_stride": stride,
        "mirror": cfg.use_mirror,
        "noise_ensembles": cfg.noise_ensembles,
        "noise_frac": cfg.noise_frac,
        "ensemble_order": (["noise"] if cfg.noise_ensembles else []) + (["mirror"] if cfg.use_mirror else []),
        "seed": cfg.seed,
    }
    names = [series.channel_names[c] for c in series.predicted_channels]
    return ForecastResult(values, names, horizon, provenance)
