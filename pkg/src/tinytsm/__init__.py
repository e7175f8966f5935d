"""Small patched-encoder time-series forecaster.

Modules:

- ``series``: the ``TimeSeries`` container, patching, seasonal naive, strided views, dataset I/O
- ``dart_norm``: causal rolling normalization with drift features
- ``synthts``: synthetic series generators and augmentation pipeline
- ``model``: the encoder, its configuration and checkpoints
- ``training``: dense next-token training and the test-at-end comparator
- ``inference``: mirror/noise ensembles, feature augmentation, stride-interleaved inference
- ``harness``: relative-error evaluation, reports, plots
- ``estimators``: scikit-learn style wrappers
- ``cli``: the ``tinytsm`` command
"""

from .dart_norm import denormalize, normalize
from .harness import EvalReport, EvalTask, relative_error, run_eval, synthetic_tasks
from .inference import InferenceConfig, predict
from .model import ModelConfig, TinyTSM, load_params, param_count, save_params
from .series import FrequencyTag, TimeSeries, read_dataset, seasonal_naive, write_dataset
from .training import TrainConfig, train, train_test_at_end

__version__ = "0.1.0"

__all__ = [
    "EvalReport",
    "EvalTask",
    "FrequencyTag",
    "InferenceConfig",
    "ModelConfig",
    "TimeSeries",
    "TinyTSM",
    "TrainConfig",
    "denormalize",
    "load_params",
    "normalize",
    "param_count",
    "predict",
    "read_dataset",
    "relative_error",
    "run_eval",
    "save_params",
    "seasonal_naive",
    "synthetic_tasks",
    "train",
    "train_test_at_end",
    "write_dataset",
]
