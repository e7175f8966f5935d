"""Causal rolling normalization with drift features.

Every statistic at step ``t`` depends only on ``y[0..t]``. Alongside the
standardized values ``x`` two drift features are exposed: the mean step
``d`` (scaled by the previous std) and the log-std step ``r``. Forecast
targets are anchored to the statistics at the forecast origin and mapped
back with :func:`denormalize`.

Arrays may be 1-D ``(T,)`` or 2-D ``(channels, T)``; time is the last axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EPS_STD = 1e-8
DRIFT_CLIP = 10.0


class NormalizationError(ValueError):
    pass


@dataclass(frozen=True)
class RollingStats:
    m: np.ndarray
    s: np.ndarray
    s_clamped: np.ndarray
    count: np.ndarray


@dataclass(frozen=True)
class NormalizedView:
    x: np.ndarray
    d: np.ndarray
    r: np.ndarray
    mask: np.ndarray
    stats: RollingStats

    def features(self) -> np.ndarray:
        """Stack ``(x, d, r)`` on a new axis just before time."""
        return np.stack([self.x, self.d, self.r], axis=-2)


@dataclass(frozen=True)
class AnchoredTargets:
    anchor_index: int
    horizon: int
    targets: np.ndarray
    observed: np.ndarray
    anchor_stats: tuple[float, float]


def _prepare(y, mask):
    y = np.asarray(y, dtype=np.float64)
    if mask is None:
        mask = np.isfinite(y)
    else:
        mask = np.asarray(mask, dtype=bool) & np.isfinite(y)
    if y.shape != mask.shape:
        raise NormalizationError("y and mask shapes differ")
    return y, mask


def rolling_stats(y, mask=None) -> RollingStats:
    """Prefix mean and population std over observed points.

    Statistics carry forward across missing points. Steps before the first
    observation get ``m = 0, s = 0`` and ``count = 0``.
    """
    y, mask = _prepare(y, mask)
    if not mask.any(axis=-1).all():
        raise NormalizationError("no observations")
    count = np.cumsum(mask, axis=-1)
    # shift by the first observed value so that the second-moment sums stay small
    first = np.take_along_axis(y, np.argmax(mask, axis=-1)[..., None], axis=-1)
    z = np.where(mask, np.where(mask, y, 0.0) - first, 0.0)
    n = np.maximum(count, 1)
    sum_z = np.cumsum(z, axis=-1)
    mean_z = sum_z / n
    m2 = np.cumsum(z * z, axis=-1) - sum_z * mean_z
    var = np.maximum(m2, 0.0) / n
    started = count > 0
    m = np.where(started, mean_z + first, 0.0)
    s = np.where(started, np.sqrt(var), 0.0)
    return RollingStats(m=m, s=s, s_clamped=np.maximum(s, EPS_STD), count=count)


def _drift(y, mask, stats: RollingStats):
    m, s, sc, count = stats.m, stats.s, stats.s_clamped, stats.count
    d = np.zeros_like(y)
    r = np.zeros_like(y)
    prev_m = m[..., :-1]
    prev_s = s[..., :-1]
    prev_sc = sc[..., :-1]
    # the mean increment equals (y_t - m_{t-1}) / n_t on observed steps, 0 otherwise
    n_t = np.maximum(count[..., 1:], 1)
    dm = np.where(mask[..., 1:] & (count[..., :-1] > 0), (y[..., 1:] - prev_m) / n_t, 0.0)
    live = prev_s > EPS_STD
    with np.errstate(divide="ignore", invalid="ignore"):
        d[..., 1:] = np.where(live, dm / prev_sc, 0.0)
        r[..., 1:] = np.where(live, np.log(sc[..., 1:] / prev_sc), 0.0)
    np.clip(d, -DRIFT_CLIP, DRIFT_CLIP, out=d)
    np.clip(r, -DRIFT_CLIP, DRIFT_CLIP, out=r)
    return d, r


def normalize(y, mask=None) -> NormalizedView:
    y, mask = _prepare(y, mask)
    y = np.where(mask, y, 0.0)
    stats = rolling_stats(y, mask)
    x = np.where(mask, (y - stats.m) / stats.s_clamped, 0.0)
    d, r = _drift(y, mask, stats)
    return NormalizedView(x=x, d=d, r=r, mask=mask, stats=stats)


def anchored_targets(y, T: int, h: int, mask=None) -> AnchoredTargets:
    """Targets ``(y[T+1 : T+1+h] - m_T) / s_T`` for a 1-D series."""
    y, mask = _prepare(y, mask)
    if y.ndim != 1:
        raise NormalizationError("anchored_targets expects a 1-D series")
    max_h = len(y) - 1 - T
    if h > max_h:
        raise NormalizationError(f"horizon {h} exceeds available future; max feasible h is {max_h}")
    if not mask[: T + 1].any():
        raise NormalizationError("no observations")
    stats = rolling_stats(y[: T + 1], mask[: T + 1])
    m_T, s_T = float(stats.m[-1]), float(stats.s_clamped[-1])
    fut = y[T + 1 : T + 1 + h]
    obs = mask[T + 1 : T + 1 + h]
    targets = np.where(obs, (np.where(obs, fut, 0.0) - m_T) / s_T, 0.0)
    return AnchoredTargets(T, h, targets, obs, (m_T, s_T))


def denormalize(pred, anchor_stats) -> np.ndarray:
    """Inverse of the anchored-target map. ``anchor_stats`` is ``(m_T, s_clamped_T)``;
    both may be arrays broadcastable against ``pred``."""
    m_T, s_T = anchor_stats
    return np.asarray(pred, dtype=np.float64) * s_T + m_T


@dataclass
class OnlineState:
    """Welford accumulator for one channel."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    steps: int = 0

    @property
    def s(self) -> float:
        return math.sqrt(max(self.m2, 0.0) / self.count) if self.count else 0.0

    @classmethod
    def from_series(cls, y, mask=None) -> "OnlineState":
        state = cls()
        y, mask = _prepare(y, mask)
        for v, o in zip(y.tolist(), mask.tolist()):
            state, *_ = online_update(state, v, o)
        return state


def online_update(state: OnlineState, y_new: float, observed: bool = True):
    """Advance the normalizer by one point.

    Returns ``(new_state, x, d, r)`` matching what :func:`normalize` yields for
    the extended sequence. The input state is not modified.
    """
    observed = bool(observed) and math.isfinite(y_new)
    count, mean, m2 = state.count, state.mean, state.m2
    prev_s = state.s if state.steps else 0.0
    prev_mean = mean
    if observed:
        count += 1
        delta = y_new - mean
        mean += delta / count
        m2 += delta * (y_new - mean)
    new = OnlineState(count=count, mean=mean, m2=m2, steps=state.steps + 1)
    s = new.s
    sc = max(s, EPS_STD)
    x = (y_new - mean) / sc if observed else 0.0
    d = r = 0.0
    if state.steps and prev_s > EPS_STD:
        prev_sc = max(prev_s, EPS_STD)
        dm = (y_new - prev_mean) / count if observed and state.count else 0.0
        d = min(max(dm / prev_sc, -DRIFT_CLIP), DRIFT_CLIP)
        r = min(max(math.log(sc / prev_sc), -DRIFT_CLIP), DRIFT_CLIP)
    return new, x, d, r
