"""Batch parameter sampling, base sampling and the full generation pipeline."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..series import BaseUnit, FrequencyTag, TimeSeries
from .augment import AugmentationConfig, post_transform, sparse_mix, univariate_expansions
from .generators import REGISTRY, Family, GenContext, generators_in

log = logging.getLogger(__name__)

NATURAL_WEIGHT = 8.0
GENERIC_WEIGHT = 1.0

# natural seasonal periods expressed in base units
NATURAL_PERIODS = {
    BaseUnit.SECOND: (60, 3600),
    BaseUnit.MINUTE: (60, 1440, 10080),
    BaseUnit.HOUR: (24, 168),
    BaseUnit.DAY: (7, 30, 365),
    BaseUnit.WEEK: (4, 52),
    BaseUnit.MONTH: (3, 12),
}
_MULTIPLIERS = {
    BaseUnit.SECOND: (1, 5, 10, 30),
    BaseUnit.MINUTE: (1, 5, 10, 15, 30),
    BaseUnit.HOUR: (1, 1, 1, 2, 6),
    BaseUnit.DAY: (1,),
    BaseUnit.WEEK: (1,),
    BaseUnit.MONTH: (1,),
}
_SECONDS = {
    BaseUnit.SECOND: 1,
    BaseUnit.MINUTE: 60,
    BaseUnit.HOUR: 3600,
    BaseUnit.DAY: 86400,
    BaseUnit.WEEK: 604800,
}


def natural_periods(freq: FrequencyTag) -> list[int]:
    m = freq.multiplier
    return [p // m for p in NATURAL_PERIODS[freq.base_unit] if p % m == 0 and p // m >= 2]


def dominant_period(freq: FrequencyTag | None) -> int:
    """Shortest natural period for the frequency, or 1 when none applies."""
    if freq is None:
        return 1
    ps = natural_periods(freq)
    return min(ps) if ps else 1


@dataclass
class GenBatchParams:
    seq_len: int
    base_frequency: FrequencyTag | None
    time_index: np.ndarray | None
    compatible_periods: np.ndarray
    period_weights: np.ndarray
    noise_level: float = 0.0
    rounds: int = 2

    def __post_init__(self):
        self.compatible_periods = np.asarray(self.compatible_periods, dtype=np.int64)
        self.period_weights = np.asarray(self.period_weights, dtype=np.float64)
        if len(self.compatible_periods) != len(self.period_weights) or len(self.compatible_periods) == 0:
            raise ValueError("compatible_periods and period_weights must be non-empty and aligned")
        if np.any(self.compatible_periods < 1):
            raise ValueError("periods must be positive integers")
        if not 2 <= self.rounds <= 5:
            raise ValueError("rounds must lie in [2, 5]")
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")

    @classmethod
    def fixed(cls, seq_len: int, period: int, **kw) -> "GenBatchParams":
        """Parameters with a single compatible period and no time index."""
        return cls(seq_len, kw.pop("base_frequency", None), None, [period], [1.0], **kw)

    def weight_of(self, period: int) -> float:
        hit = self.compatible_periods == period
        return float(self.period_weights[hit].sum())

    def context(self, overrides: dict | None = None) -> GenContext:
        return GenContext(self.compatible_periods, self.period_weights, dict(overrides or {}))


def _time_index(freq: FrequencyTag, n: int, rng) -> np.ndarray:
    if freq.base_unit == BaseUnit.MONTH:
        start = np.datetime64("2000-01", "M") + int(rng.integers(0, 300))
        return start + np.arange(n) * freq.multiplier
    sec = _SECONDS[freq.base_unit] * freq.multiplier
    start = np.datetime64("2000-01-01T00:00:00", "s") + int(rng.integers(0, 25 * 365 * 86400 // sec)) * sec
    return start + np.arange(n) * np.timedelta64(sec, "s")


def sample_batch_params(
    rng: np.random.Generator,
    *,
    p_no_index: float = 0.2,
    seq_len_range: tuple[int, int] = (256, 2048),
    base_unit: BaseUnit | str | None = None,
    n_generic: tuple[int, int] = (2, 6),
    noise_range: tuple[float, float] = (0.0, 0.3),
) -> GenBatchParams:
    unit = BaseUnit(base_unit) if base_unit is not None else BaseUnit(rng.choice([u.value for u in BaseUnit]))
    freq = FrequencyTag(unit, int(rng.choice(_MULTIPLIERS[unit])))
    seq_len = int(rng.integers(seq_len_range[0], seq_len_range[1] + 1))
    natural = natural_periods(freq)
    upper = max(4, seq_len // 4)
    generic = set(int(g) for g in rng.integers(2, upper, int(rng.integers(*n_generic) + 1))) - set(natural)
    periods = natural + sorted(generic)
    weights = [NATURAL_WEIGHT] * len(natural) + [GENERIC_WEIGHT] * len(generic)
    ti = None if rng.random() < p_no_index else _time_index(freq, seq_len, rng)
    return GenBatchParams(
        seq_len=seq_len,
        base_frequency=freq,
        time_index=ti,
        compatible_periods=periods,
        period_weights=weights,
        noise_level=float(rng.uniform(*noise_range)),
        rounds=int(rng.integers(2, 6)),
    )


@dataclass(frozen=True)
class BaseGeneratorSpec:
    name: str
    params: dict = field(default_factory=dict)

    @property
    def family(self) -> Family:
        return REGISTRY[self.name].family


def sample_base(spec: BaseGeneratorSpec | str, params: GenBatchParams, rng) -> np.ndarray:
    if isinstance(spec, str):
        spec = BaseGeneratorSpec(spec)
    if spec.name not in REGISTRY:
        raise KeyError(f"unknown generator {spec.name!r}")
    if params.seq_len < 8:
        raise ValueError("seq_len must be >= 8")
    y = np.asarray(REGISTRY[spec.name].fn(params.seq_len, params.context(spec.params), rng), dtype=np.float64)
    assert y.shape == (params.seq_len,), spec.name
    return y


def pick_generator(rng, family_weights: dict | None = None) -> BaseGeneratorSpec:
    fams = list(Family)
    w = np.array([1.0 if family_weights is None else float(family_weights.get(f.value, 0.0)) for f in fams])
    fam = fams[int(rng.choice(len(fams), p=w / w.sum()))]
    gens = generators_in(fam)
    return BaseGeneratorSpec(gens[int(rng.integers(len(gens)))].name)


def calendar_features(ti: np.ndarray, freq: FrequencyTag) -> tuple[np.ndarray, list[str]]:
    """Sine/cosine phase encodings of the natural periods, computed from timestamps."""
    if freq.base_unit == BaseUnit.MONTH:
        units = ti.astype("datetime64[M]").astype(np.int64).astype(np.float64)
    else:
        units = ti.astype("datetime64[s]").astype(np.int64) / _SECONDS[freq.base_unit]
    rows, names = [], []
    for p in NATURAL_PERIODS[freq.base_unit][:2]:
        ang = 2 * np.pi * np.mod(units, p) / p
        rows += [np.sin(ang), np.cos(ang)]
        names += [f"cal_sin{p}", f"cal_cos{p}"]
    return np.array(rows), names


def _as_rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _match_real(ts: TimeSeries, params: GenBatchParams, rng):
    if ts.frequency is not None and params.base_frequency is not None and ts.frequency != params.base_frequency:
        return None, "frequency"
    n = params.seq_len
    if len(ts) < n:
        return None, "length"
    start = int(rng.integers(0, len(ts) - n + 1))
    c = ts.target_channel
    return (ts.values[c, start : start + n], ts.missing_mask[c, start : start + n]), None


def generate(
    config: AugmentationConfig,
    params: GenBatchParams,
    real_pool=(),
    rng=None,
) -> TimeSeries:
    """Run the full pipeline and assemble one multivariate series.

    Each base series draws from its own child seed, so generation is a pure
    function of ``(config, params, seed)``.
    """
    rng = _as_rng(rng)
    ss = np.random.SeedSequence(int(rng.integers(2**63)))
    child = iter([np.random.default_rng(s) for s in ss.spawn(64)])
    n = params.seq_len

    pool_vals, pool_masks, names = [], [], []
    n_base = int(rng.integers(config.n_base_range[0], config.n_base_range[1] + 1))
    specs = [pick_generator(rng, config.family_weights) for _ in range(n_base)]
    for i, spec in enumerate(specs):
        pool_vals.append(sample_base(spec, params, next(child)))
        pool_masks.append(np.ones(n, dtype=bool))
        names.append(f"base{i}_{spec.name}")

    skipped = {"frequency": 0, "length": 0}
    n_real = int(round(config.real_mix_fraction * n_base)) if real_pool else 0
    for j in range(n_real):
        src = real_pool[int(rng.integers(len(real_pool)))]
        got, why = _match_real(src, params, rng)
        if got is None:
            skipped[why] += 1
            log.warning("skipping real series (%s mismatch)", why)
            continue
        vals, mask = got
        pool_vals.append(np.where(mask, vals, np.interp(np.arange(n), np.flatnonzero(mask), vals[mask])))
        pool_masks.append(mask.copy())
        names.append(f"real{j}")

    growth = []
    for r in range(params.rounds):
        k = min(config.pool_subsample, len(pool_vals))
        sub = rng.choice(len(pool_vals), k, replace=False)
        exp_vals, exp_masks = [], []
        for i in sub:
            for v, m in univariate_expansions(pool_vals[i], rng, config, pool_masks[i]):
                exp_vals.append(v)
                exp_masks.append(m)
        mixed, mixed_masks, _ = sparse_mix(exp_vals, rng, config, params.noise_level, n_out=k, masks=exp_masks)
        for j in range(k):
            partner = mixed[(j + 1) % k] if k > 1 else None
            v, m, kind = post_transform(mixed[j], rng, config, mixed_masks[j], x2=partner)
            pool_vals.append(v)
            pool_masks.append(m)
            names.append(f"aug{r}_{j}_{kind}")
        growth.append(k)

    keep = list(range(len(pool_vals)))
    if config.max_channels is not None and len(keep) > config.max_channels:
        keep = sorted(rng.choice(len(keep), config.max_channels, replace=False).tolist())
    values = np.stack([pool_vals[i] for i in keep])
    masks = np.stack([pool_masks[i] for i in keep])
    chan_names = [names[i] for i in keep]
    target = int(rng.integers(len(keep)))

    known = []
    if params.time_index is not None and params.base_frequency is not None and rng.random() < config.p_calendar:
        cal, cal_names = calendar_features(params.time_index, params.base_frequency)
        known = list(range(len(keep), len(keep) + len(cal)))
        values = np.concatenate([values, cal])
        masks = np.concatenate([masks, np.ones(cal.shape, dtype=bool)])
        chan_names += cal_names

    values = np.where(masks, values, np.nan)
    return TimeSeries(
        values,
        masks,
        time_index=params.time_index,
        frequency=params.base_frequency,
        target_channel=target,
        known_future=frozenset(known),
        channel_names=tuple(chan_names),
        metadata={
            "generators": [s.name for s in specs],
            "n_real": sum(nm.startswith("real") for nm in names),
            "skipped_real": skipped,
            "round_growth": growth,
        },
    )


PERIODIC_HEAVY = {f.value: 1.0 for f in Family} | {
    Family.SUM_OF_SINUSOIDS.value: 6.0,
    Family.PERIODIC_RANDOM_WALK.value: 3.0,
    Family.PHASE_SHIFT_PERIODIC.value: 2.0,
    Family.FLOORED_PERIODIC.value: 2.0,
    Family.APPROX_PERIODIC_INTEGER.value: 2.0,
    Family.PERIODIC_MIXTURE.value: 3.0,
}


@dataclass
class StreamConfig:
    batch_size: int = 4
    seq_len_range: tuple[int, int] = (320, 640)
    n_channels: int = 3
    p_no_index: float = 0.2
    augmentation: AugmentationConfig = field(
        default_factory=lambda: AugmentationConfig(pool_subsample=4, n_base_range=(2, 4), family_weights=PERIODIC_HEAVY)
    )
    max_rounds: int = 2
    # i.i.d. observation noise on every channel: probability per series and
    # the range of its std relative to the channel std
    obs_noise_prob: float = 0.0
    obs_noise_range: tuple[float, float] = (0.05, 0.5)
    # probability that a batch uses one season drawn from ``single_periods``
    # instead of the frequency-derived period mix
    single_period_prob: float = 0.0
    single_periods: tuple[int, ...] = (4, 7, 12, 24, 48, 52)


def add_observation_noise(ts: TimeSeries, sigma: float, rng) -> TimeSeries:
    """Add Gaussian noise of std ``sigma * std(channel)`` to observed points of non-known-future channels."""
    vals = ts.values.copy()
    for c in ts.predicted_channels:
        obs = ts.missing_mask[c]
        sd = float(np.std(vals[c, obs])) if obs.any() else 0.0
        vals[c] = np.where(obs, vals[c] + sigma * sd * rng.normal(size=vals.shape[1]), np.nan)
    return ts.with_values(vals)


class SynthStream:
    """Endless iterator of uniform-shape training batches drawn from :func:`generate`.

    Every batch shares ``seq_len`` and channel count so it can be stacked.
    Channels are sub-selected from each generated series, always keeping the
    target.
    """

    def __init__(self, cfg: StreamConfig | None = None, seed: int = 0):
        self.cfg = cfg or StreamConfig()
        self.seed = seed
        self.batches_drawn = 0

    def __iter__(self):
        return self

    def last_batch_seed(self) -> tuple[int, int]:
        return (self.seed, self.batches_drawn - 1)

    def __next__(self) -> list[TimeSeries]:
        cfg = self.cfg
        rng = np.random.default_rng([self.seed, self.batches_drawn])
        self.batches_drawn += 1
        base = sample_batch_params(rng, p_no_index=cfg.p_no_index, seq_len_range=cfg.seq_len_range)
        periods, weights = base.compatible_periods, base.period_weights
        if cfg.single_period_prob > 0 and rng.random() < cfg.single_period_prob:
            periods, weights = [int(rng.choice(cfg.single_periods))], [1.0]
        out = []
        for _ in range(cfg.batch_size):
            params = GenBatchParams(
                seq_len=base.seq_len,
                base_frequency=base.base_frequency,
                time_index=base.time_index,
                compatible_periods=periods,
                period_weights=weights,
                noise_level=float(rng.uniform(0.0, 0.3)),
                rounds=int(rng.integers(2, cfg.max_rounds + 1)),
            )
            ts = _select(generate(cfg.augmentation, params, rng=rng), cfg.n_channels, rng)
            if cfg.obs_noise_prob > 0 and rng.random() < cfg.obs_noise_prob:
                ts = add_observation_noise(ts, float(rng.uniform(*cfg.obs_noise_range)), rng)
            out.append(ts)
        return out


def _select(ts: TimeSeries, n_channels: int, rng) -> TimeSeries:
    # batch members must agree on channel roles, so calendar channels ride along as plain covariates
    ts = ts.replace(known_future=frozenset())
    others = [c for c in range(ts.n_channels) if c != ts.target_channel]
    rng.shuffle(others)
    chosen = [ts.target_channel] + others[: n_channels - 1]
    while len(chosen) < n_channels:
        chosen.append(ts.target_channel)  # duplicate the target when the series is too narrow
    if len(set(chosen)) < len(chosen):
        vals = ts.values[chosen]
        masks = ts.missing_mask[chosen]
        return TimeSeries(vals, masks, time_index=ts.time_index, frequency=ts.frequency, target_channel=0,
                          channel_names=tuple(f"c{i}" for i in range(len(chosen))))
    return ts.select_channels(chosen)
