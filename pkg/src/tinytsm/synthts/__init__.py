"""Synthetic series generation and augmentation."""

from .augment import (
    AugmentationConfig,
    amplitude_modulate,
    ar_filter,
    box_smooth,
    gaussian_smooth,
    inject_missing,
    inject_outliers,
    inject_spikes,
    minmax_scale,
    post_transform,
    relu_floor,
    shift,
    sparse_mix,
    univariate_expansions,
)
from .generators import INTEGER_FAMILIES, PERIODIC_FAMILIES, REGISTRY, Family, circular_reindex, generators_in
from .pipeline import (
    BaseGeneratorSpec,
    GenBatchParams,
    StreamConfig,
    SynthStream,
    add_observation_noise,
    calendar_features,
    dominant_period,
    generate,
    natural_periods,
    sample_base,
    sample_batch_params,
)

__all__ = [
    "AugmentationConfig",
    "BaseGeneratorSpec",
    "Family",
    "GenBatchParams",
    "INTEGER_FAMILIES",
    "PERIODIC_FAMILIES",
    "REGISTRY",
    "StreamConfig",
    "SynthStream",
    "add_observation_noise",
    "amplitude_modulate",
    "ar_filter",
    "box_smooth",
    "calendar_features",
    "circular_reindex",
    "dominant_period",
    "gaussian_smooth",
    "generate",
    "generators_in",
    "inject_missing",
    "inject_outliers",
    "inject_spikes",
    "minmax_scale",
    "natural_periods",
    "post_transform",
    "relu_floor",
    "sample_base",
    "sample_batch_params",
    "shift",
    "sparse_mix",
    "univariate_expansions",
]
