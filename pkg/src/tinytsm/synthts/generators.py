"""Registry of base series generators, grouped by qualitative family.

Each generator is a function ``(n, ctx, rng) -> ndarray`` where ``ctx`` is a
:class:`GenContext` carrying the batch-level period choices and any explicit
parameter overrides. Generators are pure given the RNG.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.signal import lfilter


class Family(str, enum.Enum):
    SUM_OF_SINUSOIDS = "sum_of_sinusoids"
    TREND_LINEAR_NONLINEAR = "trend_linear_nonlinear"
    PERIODIC_RANDOM_WALK = "periodic_random_walk"
    RESET_TREND = "reset_trend"
    CIRCULAR_REINDEX = "circular_reindex"
    EXPLOSIVE_PERIODIC = "explosive_periodic"
    PHASE_SHIFT_PERIODIC = "phase_shift_periodic"
    FLOORED_PERIODIC = "floored_periodic"
    INTEGER_COUNT = "integer_count"
    APPROX_PERIODIC_INTEGER = "approx_periodic_integer"
    PERIODIC_MIXTURE = "periodic_mixture"
    NOISE = "noise"
    NOISY_AR = "noisy_ar"
    EXPLOSIVE = "explosive"
    LOCAL_TREND = "local_trend"


PERIODIC_FAMILIES = frozenset(
    {
        Family.SUM_OF_SINUSOIDS,
        Family.PERIODIC_RANDOM_WALK,
        Family.EXPLOSIVE_PERIODIC,
        Family.PHASE_SHIFT_PERIODIC,
        Family.FLOORED_PERIODIC,
        Family.APPROX_PERIODIC_INTEGER,
        Family.PERIODIC_MIXTURE,
        Family.EXPLOSIVE,
    }
)
INTEGER_FAMILIES = frozenset({Family.INTEGER_COUNT, Family.APPROX_PERIODIC_INTEGER})


@dataclass
class GenContext:
    periods: np.ndarray
    weights: np.ndarray
    overrides: dict = field(default_factory=dict)

    def period(self, rng: np.random.Generator) -> int:
        if "period" in self.overrides:
            return int(self.overrides["period"])
        return int(rng.choice(self.periods, p=self.weights / self.weights.sum()))

    def get(self, key, default):
        return self.overrides.get(key, default)


@dataclass(frozen=True)
class Generator:
    name: str
    family: Family
    fn: Callable
    white: bool = False


REGISTRY: dict[str, Generator] = {}


def register(name: str, family: Family, white: bool = False):
    def deco(fn):
        if name in REGISTRY:
            raise KeyError(f"generator {name!r} registered twice")
        REGISTRY[name] = Generator(name, Family(family), fn, white)
        return fn

    return deco


def generators_in(family: Family) -> list[Generator]:
    return [g for g in REGISTRY.values() if g.family == Family(family)]


def _scale(rng):
    # log-uniform amplitude so that downstream normalization sees varied scales
    return float(np.exp(rng.uniform(np.log(0.1), np.log(100.0))))


def _level(rng):
    return float(rng.normal(0.0, 10.0)) if rng.random() < 0.5 else 0.0


def _t(n):
    return np.arange(n, dtype=np.float64)


def _sines(n, periods, amps, phases):
    t = _t(n)
    out = np.zeros(n)
    for p, a, ph in zip(periods, amps, phases):
        out += a * np.sin(2.0 * np.pi * t / p + ph)
    return out


def _periodic_profile(n, p, rng):
    """Smooth random profile of period ``p``: a few random harmonics."""
    k = int(rng.integers(1, 5))
    amps = rng.normal(0, 1, k) / np.arange(1, k + 1)
    amps[0] = np.sign(amps[0] or 1.0) * max(abs(amps[0]), 0.5)
    ph = rng.uniform(0, 2 * np.pi, k)
    return _sines(n, [p / (j + 1) for j in range(k)], amps, ph)


# --- sum of sinusoids -------------------------------------------------------


@register("sinusoid", Family.SUM_OF_SINUSOIDS)
def _sinusoid(n, ctx, rng):
    periods = ctx.get("periods", None)
    if periods is not None:
        amps = ctx.get("amplitudes", [1.0] * len(periods))
        phases = ctx.get("phases", [0.0] * len(periods))
        return _sines(n, periods, amps, phases)
    p = ctx.period(rng)
    return _level(rng) + _scale(rng) * np.sin(2 * np.pi * _t(n) / p + rng.uniform(0, 2 * np.pi))


@register("sinusoid_harmonics", Family.SUM_OF_SINUSOIDS)
def _sinusoid_harmonics(n, ctx, rng):
    return _level(rng) + _scale(rng) * _periodic_profile(n, ctx.period(rng), rng)


@register("sinusoid_multi_period", Family.SUM_OF_SINUSOIDS)
def _sinusoid_multi(n, ctx, rng):
    k = int(rng.integers(2, 4))
    ps = [ctx.period(rng) for _ in range(k)]
    amps = rng.uniform(0.2, 1.0, k)
    amps[0] = 1.0
    return _level(rng) + _scale(rng) * _sines(n, ps, amps, rng.uniform(0, 2 * np.pi, k))


# --- trends -----------------------------------------------------------------


@register("trend_linear", Family.TREND_LINEAR_NONLINEAR)
def _trend_linear(n, ctx, rng):
    return _level(rng) + _scale(rng) * rng.normal() * _t(n) / n


@register("trend_polynomial", Family.TREND_LINEAR_NONLINEAR)
def _trend_poly(n, ctx, rng):
    u = _t(n) / n
    coef = rng.normal(0, 1, int(rng.integers(2, 4)) + 1)
    return _level(rng) + _scale(rng) * np.polyval(coef, u - rng.uniform(0, 1))


@register("trend_exponential", Family.TREND_LINEAR_NONLINEAR)
def _trend_exp(n, ctx, rng):
    rate = rng.uniform(-3.0, 3.0)
    return _level(rng) + _scale(rng) * np.exp(rate * _t(n) / n)


@register("trend_logistic", Family.TREND_LINEAR_NONLINEAR)
def _trend_logistic(n, ctx, rng):
    mid, width = rng.uniform(0.2, 0.8) * n, rng.uniform(0.02, 0.2) * n
    return _level(rng) + _scale(rng) / (1.0 + np.exp(-(_t(n) - mid) / width))


# --- periodic random walks --------------------------------------------------


@register("tiled_random_walk", Family.PERIODIC_RANDOM_WALK)
def _tiled_rw(n, ctx, rng):
    p = ctx.period(rng)
    walk = np.cumsum(rng.normal(0, 1, p))
    walk -= np.linspace(0, walk[-1] - walk[0], p)  # close the loop so tiles join smoothly
    reps = -(-n // p)
    out = np.tile(walk, reps)[:n]
    return _level(rng) + _scale(rng) * (out + 0.05 * rng.normal(0, 1, n) * walk.std())


@register("seasonal_random_walk", Family.PERIODIC_RANDOM_WALK)
def _seasonal_rw(n, ctx, rng):
    p = ctx.period(rng)
    base = _periodic_profile(n, p, rng)[:p] * 3.0
    eps = rng.normal(0, 0.15, n)
    y = lfilter([1.0], np.r_[1.0, np.zeros(p - 1), -1.0], eps)
    y[:p] += base[: min(p, n)]
    y[p:] += np.tile(base, -(-n // p))[p:n]
    return _level(rng) + _scale(rng) * y


# --- trends with resets -----------------------------------------------------


def _reset_cumsum(incr, resets):
    c = np.cumsum(np.where(resets, 0.0, incr))
    group = np.cumsum(resets)
    base = np.r_[0.0, c[resets]]
    return c - base[group]


@register("ramp_reset", Family.RESET_TREND)
def _ramp_reset(n, ctx, rng):
    resets = rng.random(n) < rng.uniform(0.002, 0.03)
    return _scale(rng) * _reset_cumsum(np.full(n, rng.uniform(0.1, 1.0)), resets)


@register("drift_walk_reset", Family.RESET_TREND)
def _drift_reset(n, ctx, rng):
    resets = rng.random(n) < rng.uniform(0.002, 0.03)
    incr = rng.uniform(0.1, 1.0) + rng.normal(0, 0.5, n)
    return _scale(rng) * _reset_cumsum(incr, resets)


# --- circular reindexing ----------------------------------------------------


def circular_reindex(x, k: int) -> np.ndarray:
    """Return ``x[(k * i) % L]`` for ``i = 1..L``."""
    x = np.asarray(x)
    L = len(x)
    if L < 1 or k < 1:
        raise ValueError("circular_reindex needs L >= 1 and k >= 1")
    return x[(k * np.arange(1, L + 1)) % L]


def _coprime_k(n, rng):
    while True:
        k = int(rng.integers(2, max(3, n // 4)))
        if np.gcd(k, n) == 1:
            return k


@register("reindexed_periodic", Family.CIRCULAR_REINDEX)
def _reindex_periodic(n, ctx, rng):
    return circular_reindex(_sinusoid_harmonics(n, ctx, rng), _coprime_k(n, rng))


@register("reindexed_trend", Family.CIRCULAR_REINDEX)
def _reindex_trend(n, ctx, rng):
    base = _trend_poly(n, ctx, rng) if rng.random() < 0.5 else _local_linear(n, ctx, rng)
    return circular_reindex(base, int(rng.integers(2, 8)))


# --- explosive episodes on periodic signals ---------------------------------


def _episodes(n, rng, rate, max_len):
    env = np.ones(n)
    t = 0
    while True:
        t += int(rng.geometric(rate))
        if t >= n:
            return env
        length = int(rng.integers(max(2, max_len // 4), max_len))
        growth = rng.uniform(1.0, 3.0)
        seg = np.exp(np.linspace(0.0, np.log(growth), min(length, n - t)))
        env[t : t + len(seg)] *= seg
        t += length


@register("periodic_growth_bursts", Family.EXPLOSIVE_PERIODIC)
def _periodic_bursts(n, ctx, rng):
    p = ctx.period(rng)
    prof = _periodic_profile(n, p, rng)
    return _level(rng) + _scale(rng) * prof * _episodes(n, rng, 1.0 / max(4 * p, 64), max(p, 8))


@register("periodic_spike_bursts", Family.EXPLOSIVE_PERIODIC)
def _periodic_spikes(n, ctx, rng):
    p = ctx.period(rng)
    prof = _periodic_profile(n, p, rng)
    env = _episodes(n, rng, 1.0 / max(4 * p, 64), max(p // 2, 4))
    return _level(rng) + _scale(rng) * (prof + np.abs(prof) * (env - 1.0))


# --- phase shifts -------------------------------------------------------------


@register("phase_jumps", Family.PHASE_SHIFT_PERIODIC)
def _phase_jumps(n, ctx, rng):
    p = ctx.period(rng)
    k = int(rng.integers(1, 4))
    cuts = np.sort(rng.integers(0, n, k))
    phase = np.zeros(n)
    for c in cuts:
        phase[c:] += rng.uniform(-np.pi / 2, np.pi / 2)
    return _level(rng) + _scale(rng) * np.sin(2 * np.pi * _t(n) / p + phase)


@register("phase_drift", Family.PHASE_SHIFT_PERIODIC)
def _phase_drift(n, ctx, rng):
    p = ctx.period(rng)
    drift = np.cumsum(rng.normal(0, 0.3 / np.sqrt(n), n))
    return _level(rng) + _scale(rng) * np.sin(2 * np.pi * _t(n) / p + drift + rng.uniform(0, 2 * np.pi))


# --- floored periodic ---------------------------------------------------------


@register("floored_sine", Family.FLOORED_PERIODIC)
def _floored_sine(n, ctx, rng):
    p = ctx.period(rng)
    y = np.sin(2 * np.pi * _t(n) / p + rng.uniform(0, 2 * np.pi)) + rng.uniform(-0.5, 0.5)
    return _scale(rng) * np.maximum(y, 0.0)


@register("floored_profile", Family.FLOORED_PERIODIC)
def _floored_profile(n, ctx, rng):
    prof = _periodic_profile(n, ctx.period(rng), rng)
    prof = prof + 0.1 * prof.std() * rng.normal(0, 1, n)
    return _scale(rng) * np.maximum(prof - np.quantile(prof, rng.uniform(0.2, 0.6)), 0.0)


# --- integer counts ---------------------------------------------------------


@register("poisson_counts", Family.INTEGER_COUNT)
def _poisson(n, ctx, rng):
    lam = np.exp(rng.uniform(np.log(0.3), np.log(50)) + np.linspace(0, rng.normal(0, 0.7), n))
    return rng.poisson(lam).astype(np.float64)


@register("negbin_counts", Family.INTEGER_COUNT)
def _negbin(n, ctx, rng):
    mean = np.exp(rng.uniform(np.log(0.5), np.log(30)))
    r = rng.uniform(0.5, 5.0)
    return rng.negative_binomial(r, r / (r + mean), n).astype(np.float64)


@register("zero_inflated_counts", Family.INTEGER_COUNT)
def _zip(n, ctx, rng):
    lam = np.exp(rng.uniform(np.log(1.0), np.log(20)))
    return (rng.poisson(lam, n) * (rng.random(n) > rng.uniform(0.3, 0.9))).astype(np.float64)


# --- approximately periodic integers ---------------------------------------


@register("periodic_poisson", Family.APPROX_PERIODIC_INTEGER)
def _periodic_poisson(n, ctx, rng):
    p = ctx.period(rng)
    lam0 = np.exp(rng.uniform(np.log(5), np.log(80)))
    rate = lam0 * (1.0 + rng.uniform(0.5, 0.95) * np.sin(2 * np.pi * _t(n) / p + rng.uniform(0, 2 * np.pi)))
    return rng.poisson(rate).astype(np.float64)


@register("rounded_periodic", Family.APPROX_PERIODIC_INTEGER)
def _rounded_periodic(n, ctx, rng):
    prof = _periodic_profile(n, ctx.period(rng), rng)
    amp = rng.uniform(3, 40)
    jitter = rng.integers(-1, 2, n)
    return np.round(amp * prof + amp * 2) + jitter.astype(np.float64)


# --- mixtures of periodic generators ---------------------------------------

_PERIODIC_BASES = ("sinusoid", "sinusoid_harmonics", "tiled_random_walk", "floored_sine", "phase_drift")


def _unit(y):
    s = y.std()
    return (y - y.mean()) / s if s > 0 else y - y.mean()


@register("periodic_sum_mixture", Family.PERIODIC_MIXTURE)
def _periodic_mix(n, ctx, rng):
    k = int(rng.integers(2, 4))
    names = rng.choice(_PERIODIC_BASES, k, replace=False)
    w = rng.uniform(0.3, 1.0, k)
    out = sum(wi * _unit(REGISTRY[nm].fn(n, ctx, rng)) for wi, nm in zip(w, names))
    return _level(rng) + _scale(rng) * out


@register("periodic_regime_mixture", Family.PERIODIC_MIXTURE)
def _periodic_regimes(n, ctx, rng):
    a = _unit(_sinusoid_harmonics(n, ctx, rng))
    b = _unit(_sinusoid_harmonics(n, ctx, rng))
    switch = np.cumsum(rng.random(n) < 2.0 / n) % 2
    return _level(rng) + _scale(rng) * np.where(switch == 0, a, b)


# --- noise ------------------------------------------------------------------


@register("gaussian_noise", Family.NOISE, white=True)
def _gauss(n, ctx, rng):
    return _level(rng) + _scale(rng) * rng.normal(0, 1, n)


@register("uniform_noise", Family.NOISE, white=True)
def _uniform(n, ctx, rng):
    return _level(rng) + _scale(rng) * rng.uniform(-1, 1, n)


@register("student_t_noise", Family.NOISE, white=True)
def _student(n, ctx, rng):
    return _level(rng) + _scale(rng) * rng.standard_t(rng.uniform(2.5, 10), n)


@register("laplace_noise", Family.NOISE, white=True)
def _laplace(n, ctx, rng):
    return _level(rng) + _scale(rng) * rng.laplace(0, 1, n)


@register("random_walk", Family.NOISE)
def _random_walk(n, ctx, rng):
    return _level(rng) + _scale(rng) * np.cumsum(rng.normal(0, 1, n)) / np.sqrt(n)


# --- noisy autoregressive ---------------------------------------------------


@register("ar1", Family.NOISY_AR)
def _ar1(n, ctx, rng):
    phi = rng.uniform(-0.95, 0.99)
    y = lfilter([1.0], [1.0, -phi], rng.normal(0, 1, n))
    return _level(rng) + _scale(rng) * (y + rng.uniform(0, 0.5) * rng.normal(0, 1, n))


@register("ar2", Family.NOISY_AR)
def _ar2(n, ctx, rng):
    # stationary AR(2) from complex roots inside the unit circle
    rad, ang = rng.uniform(0.5, 0.98), rng.uniform(0.05, np.pi - 0.05)
    a = [1.0, -2 * rad * np.cos(ang), rad * rad]
    y = lfilter([1.0], a, rng.normal(0, 1, n))
    return _level(rng) + _scale(rng) * (y + rng.uniform(0, 0.5) * rng.normal(0, 1, n))


@register("arma11", Family.NOISY_AR)
def _arma(n, ctx, rng):
    phi, theta = rng.uniform(-0.9, 0.95), rng.uniform(-0.9, 0.9)
    y = lfilter([1.0, theta], [1.0, -phi], rng.normal(0, 1, n))
    return _level(rng) + _scale(rng) * y


# --- explosive stochastic processes ----------------------------------------


@register("explosive_ar", Family.EXPLOSIVE)
def _explosive_ar(n, ctx, rng):
    p = ctx.period(rng)
    season = 3.0 * _periodic_profile(n, p, rng)
    y = lfilter([1.0], [1.0, -rng.uniform(0.3, 0.8)], rng.normal(0, 0.5, n))
    return _level(rng) + _scale(rng) * (season + y) * _episodes(n, rng, 1.0 / 200, 48)


@register("volatility_bursts", Family.EXPLOSIVE)
def _vol_bursts(n, ctx, rng):
    p = ctx.period(rng)
    season = 3.0 * _periodic_profile(n, p, rng)
    vol = _episodes(n, rng, 1.0 / 150, 64) ** 2
    return _level(rng) + _scale(rng) * (season + vol * rng.normal(0, 0.5, n))


# --- local trends -------------------------------------------------------------


@register("piecewise_linear", Family.LOCAL_TREND)
def _piecewise(n, ctx, rng):
    k = int(rng.integers(2, 8))
    knots = np.sort(np.r_[0, rng.integers(1, n - 1, k - 1), n - 1])
    vals = np.cumsum(rng.normal(0, 1, len(knots)))
    y = np.interp(_t(n), knots, vals)
    return _level(rng) + _scale(rng) * (y + 0.05 * rng.normal(0, 1, n))


@register("local_linear_trend", Family.LOCAL_TREND)
def _local_linear(n, ctx, rng):
    slope = np.cumsum(rng.normal(0, 0.02, n))
    level = np.cumsum(slope + rng.normal(0, 0.2, n))
    return _level(rng) + _scale(rng) * level / np.sqrt(n)
