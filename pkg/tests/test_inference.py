import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinytsm.inference import (
    InferenceConfig,
    augment_features,
    auto_stride,
    mirror_ensemble,
    model_forecaster,
    noise_ensemble,
    predict,
    sifi_forecast,
    sifi_index_map,
    signed_sqrt,
    signed_square,
    smooth5,
)
from tinytsm.model import ModelConfig, TinyTSM
from tinytsm.series import SeriesError, TimeSeries, strided_views


def rand_series(C=2, T=120, seed=0, known=frozenset()):
    rng = np.random.default_rng(seed)
    return TimeSeries(np.cumsum(rng.normal(size=(C, T)), axis=1) + 3.0, known_future=known)


def last_value(series, horizon, future=None):
    vals = series.values[series.predicted_channels]
    return np.repeat(vals[:, -1:], horizon, axis=1)


def quadratic(series, horizon, future=None):
    """Neither odd nor even: f(y) = y_last^2 + y_last."""
    last = series.values[series.predicted_channels, -1:]
    return np.repeat(last**2 + last, horizon, axis=1)


@pytest.fixture(scope="module")
def toy():
    return TinyTSM(ModelConfig.toy(), seed=0)


# --- mirror ---------------------------------------------------------------------------


def test_mirror_of_odd_forecaster_is_identity():
    ts = rand_series()
    np.testing.assert_array_equal(mirror_ensemble(last_value, ts, 5), last_value(ts, 5))


def test_mirror_of_constant_is_zero():
    const = lambda s, h, fut=None: np.full((len(s.predicted_channels), h), 7.5)  # noqa: E731
    assert np.array_equal(mirror_ensemble(const, rand_series(), 4), np.zeros((2, 4)))


def test_mirror_output_exactly_odd(toy):
    ts = rand_series(seed=3)
    neg = ts.with_values(-ts.values)
    f = model_forecaster(toy)
    a, b = mirror_ensemble(f, ts, 16), mirror_ensemble(f, neg, 16)
    assert np.array_equal(a, -b)
    a, b = mirror_ensemble(quadratic, ts, 3), mirror_ensemble(quadratic, neg, 3)
    assert np.array_equal(a, -b)


def test_mirror_idempotent_on_odd_part():
    ts = rand_series(seed=4)
    once = lambda s, h, fut=None: mirror_ensemble(quadratic, s, h, fut)  # noqa: E731
    np.testing.assert_array_equal(mirror_ensemble(once, ts, 3), once(ts, 3))


def test_mirror_negates_future():
    seen = []

    def f(s, h, fut=None):
        seen.append(None if fut is None else fut.copy())
        return np.zeros((1, h))

    mirror_ensemble(f, rand_series(C=2, known={1}), 3, future=np.array([[1.0, 2.0, 3.0]]))
    np.testing.assert_array_equal(seen[1], -seen[0])


# --- noise ---------------------------------------------------------------------------------


def test_noise_frac_zero_bit_exact(toy):
    ts = rand_series(seed=5)
    f = model_forecaster(toy)
    assert np.array_equal(noise_ensemble(f, ts, 8, 4, 0.0, 0), f(ts, 8))
    res = predict(toy, ts, 8, InferenceConfig(noise_ensembles=4, noise_frac=0.0))
    assert np.array_equal(res.values, predict(toy, ts, 8).values)


def test_noise_ensemble_linear_oracle():
    ts = rand_series(C=1, T=200, seed=6)
    w = np.random.default_rng(0).normal(size=200)

    def linear(s, h, fut=None):
        return np.repeat((s.values[0] @ w)[None, None], h, axis=1)

    k, frac = 400, 0.01
    plain = linear(ts, 1)[0, 0]
    est = noise_ensemble(linear, ts, 1, k, frac, 123)[0, 0]
    sigma = frac * np.std(ts.values[0]) * np.linalg.norm(w)
    assert abs(est - plain) <= 3 * sigma / np.sqrt(k)


def test_noise_ensemble_seeded_and_validated():
    ts = rand_series()
    a = noise_ensemble(quadratic, ts, 2, 1, 0.05, 9)
    b = noise_ensemble(quadratic, ts, 2, 1, 0.05, 9)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, quadratic(ts, 2))
    with pytest.raises(ValueError):
        noise_ensemble(quadratic, ts, 2, 0, 0.05, 9)
    with pytest.raises(ValueError):
        InferenceConfig(noise_frac=-0.1)


# --- augmentation ---------------------------------------------------------------------------


def test_signed_transforms_examples():
    np.testing.assert_array_equal(signed_square([-4.0, 9.0]), [-16.0, 81.0])
    np.testing.assert_array_equal(signed_sqrt([-4.0, 9.0]), [-2.0, 3.0])


def test_smooth5_shrinking_window():
    vals, ok = smooth5(np.arange(6.0))
    np.testing.assert_allclose(vals, [1.0, 1.5, 2.0, 3.0, 3.5, 4.0])
    assert ok.all()
    vals, _ = smooth5(np.array([1.0, np.nan, 3.0]))
    np.testing.assert_allclose(vals, [2.0, 2.0, 2.0])


def test_augment_features_contract():
    ts = rand_series(C=2, known={1})
    out = augment_features(ts, ("signed_square", "signed_sqrt", "smooth5"))
    assert out.n_channels == ts.n_channels + 3
    np.testing.assert_array_equal(out.values[: ts.n_channels], ts.values)
    assert out.target_channel == ts.target_channel and out.known_future == ts.known_future
    assert out.channel_names[-3:] == ("ch0:signed_square", "ch0:signed_sqrt", "ch0:smooth5")
    np.testing.assert_array_equal(out.values[2], signed_square(ts.values[0]))
    with pytest.raises(ValueError):
        augment_features(ts, ("cube",))


def test_predict_with_augmentation_returns_original_rows(toy):
    ts = rand_series(C=2)
    res = predict(toy, ts, 10, InferenceConfig(augment_channels=("signed_square", "smooth5")))
    assert res.values.shape == (2, 10) and res.channels == ["ch0", "ch1"]
    assert res.provenance["augment_channels"] == ["signed_square", "smooth5"]


# --- SIFI --------------------------------------------------------------------------------------


def test_sifi_interleave_example():
    ts = TimeSeries(np.arange(8.0))

    def by_offset(s, h, fut=None):
        off = int(s.values[0, 0])
        return np.array([[10.0 + off, 20.0 + off]])[:, :h]

    np.testing.assert_array_equal(sifi_forecast(by_offset, ts, 2, 4), [[10.0, 11.0, 20.0, 21.0]])


def test_sifi_stride_one_is_plain():
    ts = rand_series()
    np.testing.assert_array_equal(sifi_forecast(quadratic, ts, 1, 7), quadratic(ts, 7))


def test_sifi_index_map_bijective_exhaustive():
    for n in range(1, 9):
        for L in (n, 4 * n, 4 * n + 1, 4 * n + n - 1):
            k_all, j_all = sifi_index_map(L, n, 960)
            for h in range(1, 961):
                k, j = k_all[:h], j_all[:h]
                coarse_h = -(-h // n)
                pairs = set(zip(k.tolist(), j.tolist()))
                assert len(pairs) == h
                assert j.max() < coarse_h and np.all(k < n)
                if L % n == 0:
                    assert np.array_equal(np.arange(h), k + j * n)


@given(st.integers(1, 8), st.integers(1, 300), st.integers(1, 200))
@settings(max_examples=200, deadline=None)
def test_sifi_index_map_matches_absolute_positions(n, L, h):
    if n > L:
        return
    k, j = sifi_index_map(L, n, h)
    views = strided_views(TimeSeries(np.zeros(L)), n)
    for t in range(h):
        view = views[k[t]]
        # coarse step j of view k is absolute index offset + (len(view) + j) * n
        assert view.offset + (len(view) + j[t]) * n == L + t


def test_sifi_periodic_oracle_exact():
    period, L, h = 24, 480, 96
    cycle = np.sin(2 * np.pi * np.arange(period) / period) + 0.3 * np.cos(6 * np.pi * np.arange(period) / period)
    wave = np.tile(cycle, (L + h) // period)  # bit-exactly periodic
    ts = TimeSeries(wave[None, :L])

    def oracle(s, hz, fut=None):
        # periodic series: the future repeats the last full cycle of the view
        y = s.values[0]
        p = period // (len(wave[:L]) // len(y)) if len(y) < L else period
        return np.array([[y[len(y) - p + (i % p)] for i in range(hz)]])

    for n in (1, 2, 3, 4, 6, 8):
        out = sifi_forecast(oracle, ts, n, h)
        assert np.array_equal(out[0], wave[L:]), n


def test_sifi_errors_and_auto_stride():
    with pytest.raises(SeriesError):
        sifi_forecast(quadratic, TimeSeries(np.arange(3.0)), 4, 2)
    assert auto_stride(10_000, 4096) == 3
    assert max(len(v) for v in strided_views(TimeSeries(np.zeros(10_000)), 3)) <= 3334
    assert auto_stride(4096, 4096) == 1
    assert InferenceConfig(sifi_stride=2).stride_for(100, 4096) == 2


def test_sifi_passes_future_per_view():
    ts = rand_series(C=2, T=40, known={1})
    fut = np.arange(10.0)[None]
    seen = []

    def f(s, h, future=None):
        seen.append(future.copy())
        return np.zeros((1, h))

    sifi_forecast(f, ts, 2, 10, future=fut)
    np.testing.assert_array_equal(seen[0], [[0, 2, 4, 6, 8]])
    np.testing.assert_array_equal(seen[1], [[1, 3, 5, 7, 9]])


# --- predict -------------------------------------------------------------------------------------


def test_predict_identity_composition(toy):
    ts = rand_series(seed=8)
    res = predict(toy, ts, 12)
    np.testing.assert_array_equal(res.values, toy.forecast_output(ts, 12).final(12))
    assert res.provenance["sifi_stride"] == 1 and not res.provenance["mirror"]
    np.testing.assert_array_equal(res.target(ts), res.values[0])


def test_predict_mirror_smoke(toy):
    ts = rand_series(seed=9)
    cfg = InferenceConfig(use_mirror=True, noise_ensembles=2)
    a, b = predict(toy, ts, 12, cfg), predict(toy, ts, 12, cfg)
    assert np.all(np.isfinite(a.values)) and np.array_equal(a.values, b.values)
    assert a.provenance["ensemble_order"] == ["noise", "mirror"]
    assert predict(toy, ts, 4, InferenceConfig(use_mirror=True)).provenance["ensemble_order"] == ["mirror"]
    assert predict(toy, ts, 4, InferenceConfig(noise_ensembles=2)).provenance["ensemble_order"] == ["noise"]
    assert predict(toy, ts, 4).provenance["ensemble_order"] == []


def test_predict_long_history_triggers_sifi():
    model = TinyTSM(ModelConfig.toy(max_context=256), seed=0)
    ts = rand_series(C=1, T=700)
    res = predict(model, ts, 9)
    assert res.provenance["sifi_stride"] == 3 and res.values.shape == (1, 9)
    truncated = model_forecaster(model)(ts, 5)
    np.testing.assert_array_equal(truncated, model.forecast_output(ts.window(444, 700), 5).final(5))


def test_predict_accepts_plain_callable():
    ts = rand_series()
    np.testing.assert_array_equal(predict(last_value, ts, 3).values, last_value(ts, 3))
