"""scikit-learn style wrappers over the functional core.

``fit`` trains (or just validates, for the stateless pieces) and ``predict``
forecasts; constructor arguments are plain hyperparameters so
``get_params``/``set_params``/``clone`` work as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import dart_norm
from .inference import InferenceConfig, predict
from .model import ModelConfig, TinyTSM
from .series import TimeSeries, seasonal_naive
from .synthts import StreamConfig, SynthStream
from .training import TrainConfig, WindowStream, train


def as_timeseries(X) -> TimeSeries:
    """Accept a TimeSeries, a 1-D array (one channel) or a ``(channels, T)`` array (NaN = missing)."""
    if isinstance(X, TimeSeries):
        return X
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim not in (1, 2) or arr.shape[-1] == 0:
        raise ValueError(f"expected a 1-D or (channels, T) array, got shape {arr.shape}")
    return TimeSeries(arr)


def as_series_list(X) -> list[TimeSeries]:
    if isinstance(X, (list, tuple)):
        return [as_timeseries(x) for x in X]
    return [as_timeseries(X)]


class DartNormalizer(TransformerMixin, BaseEstimator):
    """Stateless causal normalizer: ``transform`` maps ``(channels, T)`` to ``(channels, 3, T)`` of ``x, d, r``."""

    def fit(self, X, y=None):
        self.n_channels_ = as_timeseries(X).n_channels
        return self

    def transform(self, X):
        check_is_fitted(self, "n_channels_")
        ts = as_timeseries(X)
        if ts.n_channels != self.n_channels_:
            raise ValueError(f"fitted on {self.n_channels_} channels, got {ts.n_channels}")
        view = dart_norm.normalize(np.where(ts.missing_mask, ts.values, 0.0), ts.missing_mask)
        return view.features()


class SeasonalNaiveForecaster(BaseEstimator):
    """Repeat the last season of each predicted channel."""

    def __init__(self, season: int = 1):
        self.season = season

    def fit(self, X=None, y=None):
        if self.season < 1:
            raise ValueError("season must be >= 1")
        self.fitted_ = True
        return self

    def predict(self, X, horizon: int) -> np.ndarray:
        check_is_fitted(self, "fitted_")
        ts = as_timeseries(X)
        rows = [seasonal_naive(np.where(ts.missing_mask[c], ts.values[c], np.nan), self.season, horizon).values
                for c in ts.predicted_channels]
        return np.stack(rows)


class TinyTSMForecaster(BaseEstimator):
    """Train the patched forecaster on series (or the synthetic stream when ``X`` is None) and forecast."""

    def __init__(self, preset: str = "toy", steps: int = 1000, learning_rate: float = 1e-4, batch_size: int = 4,
                 window: int = 512, max_horizon: int = 64, use_mirror: bool = False, noise_ensembles: int = 0,
                 augment_channels: tuple = (), seed: int = 0):
        self.preset = preset
        self.steps = steps
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.window = window
        self.max_horizon = max_horizon
        self.use_mirror = use_mirror
        self.noise_ensembles = noise_ensembles
        self.augment_channels = augment_channels
        self.seed = seed

    def _model_config(self) -> ModelConfig:
        if self.preset == "toy":
            return ModelConfig.toy(max_horizon=self.max_horizon)
        if self.preset == "full":
            return ModelConfig.full(max_horizon=self.max_horizon)
        raise ValueError(f"unknown preset {self.preset!r}")

    def fit(self, X=None, y=None):
        cfg = TrainConfig(batch_size=self.batch_size, learning_rate=self.learning_rate, steps=self.steps,
                          seed=self.seed, max_horizon=self.max_horizon)
        if X is None:
            stream = SynthStream(StreamConfig(batch_size=self.batch_size), self.seed)
        else:
            stream = WindowStream(as_series_list(X), self.window, self.batch_size, self.seed)
        self.model_ = TinyTSM(self._model_config(), seed=self.seed)
        self.loss_curve_ = train(self.model_, stream, cfg).curve
        return self

    @classmethod
    def from_model(cls, model: TinyTSM, **params) -> "TinyTSMForecaster":
        est = cls(max_horizon=model.cfg.max_horizon, **params)
        est.model_ = model
        est.loss_curve_ = []
        return est

    def predict(self, X, horizon: int, future=None) -> np.ndarray:
        """Original-scale forecasts of the predicted channels, shape ``(n_predicted, horizon)``."""
        check_is_fitted(self, "model_")
        icfg = InferenceConfig(use_mirror=self.use_mirror, noise_ensembles=self.noise_ensembles,
                               augment_channels=tuple(self.augment_channels), seed=self.seed)
        return predict(self.model_, as_timeseries(X), horizon, icfg, future=future).values
