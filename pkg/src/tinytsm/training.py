"""Dense next-token training with Huber loss and coarse-grid masking.

Every non-pad patch position is supervised with the next ``h`` steps after
its last time index, normalized by the rolling statistics at that index.
Each step samples a maximum horizon ``h`` and, for a fraction of batches, a
stride ``n`` so that only every ``n``-th horizon step (from a random phase)
enters the loss.
"""

from __future__ import annotations

import csv
import math
import time
from collections.abc import Iterator
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .model import PatchBatch, TinyTSM, make_batch, save_params, windows
from .series import TimeSeries

POWER_OF_TWO_STRIDES = (1, 2, 4, 8, 16, 32, 64, 128)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 4
    learning_rate: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    max_horizon: int = 960
    coarse_grid_strides: tuple[int, ...] = POWER_OF_TWO_STRIDES
    coarse_grid_prob: float = 0.5
    huber_delta: float = 1.0
    horizon_law: str = "uniform"
    steps: int = 1000
    seed: int = 0
    loss_curve_path: str | None = None
    checkpoint_path: str | None = None
    checkpoint_every: int = 0
    test_fraction: float = 0.2
    target_clip: float = 100.0
    # "constant" keeps learning_rate fixed; "cosine" warms up linearly over
    # warmup_steps and then decays to min_lr_ratio * learning_rate at the last step
    lr_schedule: str = "constant"
    warmup_steps: int = 0
    min_lr_ratio: float = 0.0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.coarse_grid_strides = tuple(int(n) for n in self.coarse_grid_strides)
        for n in self.coarse_grid_strides:
            if n < 1 or n > 128 or n & (n - 1):
                raise ValueError(f"coarse-grid stride {n} is not a power of two in 1..128")
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be positive")
        if not 0.0 <= self.coarse_grid_prob <= 1.0:
            raise ValueError("coarse_grid_prob must lie in [0, 1]")
        if self.horizon_law not in ("uniform", "log-uniform"):
            raise ValueError(f"unknown horizon_law {self.horizon_law!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.warmup_steps < 0 or not 0.0 <= self.min_lr_ratio <= 1.0:
            raise ValueError("warmup_steps must be >= 0 and min_lr_ratio in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def huber(pred, target, delta: float = 1.0):
    """Elementwise Huber loss; works on floats, numpy arrays and tensors."""
    if isinstance(pred, torch.Tensor) or isinstance(target, torch.Tensor):
        e = (torch.as_tensor(pred) - torch.as_tensor(target)).abs()
        return torch.where(e <= delta, 0.5 * e * e, delta * (e - 0.5 * delta))
    e = np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64))
    out = np.where(e <= delta, 0.5 * e * e, delta * (e - 0.5 * delta))
    return float(out) if out.ndim == 0 else out


def sample_horizon(rng, max_horizon: int = 960, law: str = "uniform") -> int:
    if law == "uniform":
        return int(rng.integers(1, max_horizon + 1))
    if law == "log-uniform":
        return int(np.clip(np.floor(np.exp(rng.uniform(0.0, np.log(max_horizon + 1)))), 1, max_horizon))
    raise ValueError(f"unknown horizon law {law!r}")


@dataclass(frozen=True)
class LossMask:
    """Horizon-step inclusion shared by every (channel, position) of a batch."""

    steps: np.ndarray  # (width,) bool
    stride: int
    phase: int
    horizon: int


def coarse_grid_mask(h: int, n: int, rng=None, width: int | None = None, phase: int | None = None) -> LossMask:
    """Include steps ``j < h`` with ``j % n == phase``.

    ``phase`` is uniform in ``[0, min(n, h))`` unless given.
    """
    if n < 1:
        raise ValueError("stride must be >= 1")
    if h < 1:
        raise ValueError("horizon must be >= 1")
    width = h if width is None else width
    if phase is None:
        # drawn below min(n, h) so that at least one step survives
        phase = 0 if n == 1 else int(rng.integers(0, min(n, h)))
    j = np.arange(width)
    return LossMask((j % n == phase) & (j < h), n, phase, h)


def dense_mask(h: int, width: int | None = None) -> LossMask:
    width = h if width is None else width
    return LossMask(np.arange(width) < h, 1, 0, h)


@dataclass
class DenseTargets:
    values: torch.Tensor  # (B, C, P, H) anchored normalized targets
    valid: torch.Tensor  # (B, C, P, H) bool


def _targets(series, batch: PatchBatch, ends, positions, width, clip, dtype) -> DenseTargets:
    values = np.stack([np.where(s.missing_mask, s.values, 0.0) for s in series])
    mask = np.stack([s.missing_mask for s in series])
    tv, ta = windows(values, mask, ends, width)  # (B, C, P, H)
    m, s = batch.anchor_m[..., positions, None], batch.anchor_s[..., positions, None]
    valid = ta & (batch.anchor_ok & batch.anchor_live)[..., positions, None]
    valid[:, batch.known] = False
    targets = np.where(valid, (tv - m) / s, 0.0)
    if clip is not None:
        np.clip(targets, -clip, clip, out=targets)
    return DenseTargets(torch.as_tensor(targets, dtype=dtype or batch.features.dtype), torch.as_tensor(valid))


def dense_targets(series: list[TimeSeries], batch: PatchBatch, width: int, dtype=None,
                  clip: float | None = None) -> DenseTargets:
    """Targets for every position: ``(y[e+1+j] - m_e) / s_e`` with ``e`` the position end.

    Invalid entries: beyond the series, missing, known-future channels,
    positions with no observation up to ``e`` and zero-variance anchors
    (whose clamped std would blow targets up by ``1 / EPS_STD``). ``clip``
    optionally bounds the magnitude of the remaining targets.
    """
    return _targets(series, batch, batch.position_end, slice(None), width, clip, dtype)


def final_targets(series: list[TimeSeries], batch: PatchBatch, width: int, dtype=None,
                  clip: float | None = None) -> DenseTargets:
    """Targets of the last position of ``batch``, read from the (longer) ``series``."""
    return _targets(series, batch, batch.position_end[-1:], slice(-1, None), width, clip, dtype)


def batch_loss(pred: torch.Tensor, targets: DenseTargets, mask: LossMask, delta: float = 1.0) -> torch.Tensor:
    """Flat mean Huber loss over included (series, channel, position, step) entries."""
    width = pred.shape[-1]
    steps = torch.as_tensor(mask.steps[:width])
    if steps.shape[0] < width:
        steps = torch.cat([steps, torch.zeros(width - steps.shape[0], dtype=torch.bool)])
    include = targets.valid & steps
    if not bool(include.any()):
        raise ValueError("no supervised positions")
    # masked sum rather than boolean indexing keeps the shape static (vmap-friendly)
    per = torch.where(include, huber(pred, targets.values, delta), torch.zeros((), dtype=pred.dtype))
    return per.sum() / include.sum()


# ---------------------------------------------------------------------------
# Data streams
# ---------------------------------------------------------------------------


class WindowStream:
    """Random fixed-length windows from a list of series (e.g. read from files)."""

    def __init__(self, series: list[TimeSeries], window: int, batch_size: int = 4, seed: int = 0):
        self.series = [s for s in series if len(s) >= window]
        if not self.series:
            raise ValueError(f"no series of length >= {window}")
        shapes = {(s.n_channels, s.known_future) for s in self.series}
        if len(shapes) > 1:
            raise ValueError("all series must share channel count and roles")
        self.window, self.batch_size, self.seed = window, batch_size, seed
        self.batches_drawn = 0

    def __iter__(self):
        return self

    def last_batch_seed(self):
        return (self.seed, self.batches_drawn - 1)

    def __next__(self) -> list[TimeSeries]:
        rng = np.random.default_rng([self.seed, self.batches_drawn])
        self.batches_drawn += 1
        out = []
        for _ in range(self.batch_size):
            s = self.series[int(rng.integers(len(self.series)))]
            start = int(rng.integers(0, len(s) - self.window + 1))
            out.append(s.window(start, start + self.window))
        return out


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: TinyTSM
    curve: list[dict] = field(default_factory=list)
    skipped_steps: list[int] = field(default_factory=list)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r["loss"] for r in self.curve])


def make_optimizer(model: TinyTSM, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(
        model.parameters(), lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay
    )


def lr_factor(cfg: TrainConfig, step: int) -> float:
    """Multiplier on ``learning_rate`` applied at optimizer step ``step``."""
    if cfg.lr_schedule == "constant":
        return 1.0
    if step < cfg.warmup_steps:
        return (step + 1) / cfg.warmup_steps
    span = max(cfg.steps - cfg.warmup_steps - 1, 1)
    progress = min((step - cfg.warmup_steps) / span, 1.0)
    return cfg.min_lr_ratio + (1.0 - cfg.min_lr_ratio) * 0.5 * (1.0 + math.cos(math.pi * progress))


def step_schedule(cfg: TrainConfig, step: int, width: int) -> LossMask:
    """Horizon and stride for one step, a pure function of (seed, step)."""
    rng = np.random.default_rng([cfg.seed, step, 7])
    h = sample_horizon(rng, min(cfg.max_horizon, width), cfg.horizon_law)
    n = 1
    if rng.random() < cfg.coarse_grid_prob:
        n = int(rng.choice(cfg.coarse_grid_strides))
    return coarse_grid_mask(h, n, rng, width=width)


def _batch_seed(stream) -> object:
    return stream.last_batch_seed() if hasattr(stream, "last_batch_seed") else None


def _write_curve(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["step", "wall_ms", "loss", "stride", "horizon"])
        w.writeheader()
        for r in rows:
            w.writerow({**r, "loss": repr(r["loss"])})


def _loop(model: TinyTSM, stream: Iterator, cfg: TrainConfig, loss_fn, callback=None) -> TrainResult:
    opt = make_optimizer(model, cfg)
    width = model.cfg.head_horizon
    result = TrainResult(model)
    t0 = time.perf_counter()
    model.train()
    for step in range(cfg.steps):
        series = next(stream)
        mask = step_schedule(cfg, step, width)
        try:
            loss = loss_fn(series, mask)
        except ValueError as exc:
            if "no supervised positions" not in str(exc):
                raise
            result.skipped_steps.append(step)
            if callback is not None:
                callback(step, result)
            continue
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss.item()} at step {step} (batch seed {_batch_seed(stream)})")
        for group in opt.param_groups:
            group["lr"] = cfg.learning_rate * lr_factor(cfg, step)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        result.curve.append(
            {
                "step": step,
                "wall_ms": round((time.perf_counter() - t0) * 1000.0, 3),
                "loss": float(loss.item()),
                "stride": mask.stride,
                "horizon": mask.horizon,
            }
        )
        if cfg.checkpoint_path and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_params(model, cfg.checkpoint_path)
        if callback is not None:
            callback(step, result)
    model.eval()
    if cfg.loss_curve_path:
        _write_curve(cfg.loss_curve_path, result.curve)
    if cfg.checkpoint_path:
        save_params(model, cfg.checkpoint_path)
    return result


def dense_loss(model: TinyTSM, series: list[TimeSeries], mask: LossMask, delta: float = 1.0,
               clip: float | None = None) -> torch.Tensor:
    batch = make_batch(series, model.cfg, dtype=model.dtype)
    targets = dense_targets(series, batch, model.cfg.head_horizon, clip=clip)
    return batch_loss(model(batch), targets, mask, delta)


def split_point(length: int, test_fraction: float = 0.2) -> int:
    return int(np.floor(length * (1.0 - test_fraction)))


def test_at_end_loss(model: TinyTSM, series: list[TimeSeries], mask: LossMask, delta: float = 1.0,
                     test_fraction: float = 0.2, clip: float | None = None, fixed_stats: bool = True) -> torch.Tensor:
    """Loss on the suffix after a fixed prefix, normalized with prefix-only statistics.

    Only the final position of the prefix is supervised. With
    ``fixed_stats=False`` the prefix is fed through the ordinary causal
    normalization instead (same targets: the rolling statistics at the last
    prefix index equal the whole-prefix statistics).
    """
    split = split_point(len(series[0]), test_fraction)
    prefix = [s.window(0, split) for s in series]
    batch = make_batch(prefix, model.cfg, dtype=model.dtype, fixed_stats=fixed_stats)
    targets = final_targets(series, batch, model.cfg.head_horizon, clip=clip)
    return batch_loss(model(batch)[:, :, -1:, :], targets, mask, delta)


def train(model: TinyTSM, data_stream: Iterator, cfg: TrainConfig, callback=None) -> TrainResult:
    """Dense next-token training; see module docstring."""
    torch.manual_seed(cfg.seed)
    return _loop(model, data_stream, cfg, lambda s, m: dense_loss(model, s, m, cfg.huber_delta, cfg.target_clip),
                 callback)


def train_test_at_end(model: TinyTSM, data_stream: Iterator, cfg: TrainConfig, callback=None) -> TrainResult:
    """Baseline comparator: prefix-normalized input, loss on the suffix only."""
    torch.manual_seed(cfg.seed)
    return _loop(
        model, data_stream, cfg,
        lambda s, m: test_at_end_loss(model, s, m, cfg.huber_delta, cfg.test_fraction, cfg.target_clip), callback,
    )


def validation_loss(model: TinyTSM, batches: list[list[TimeSeries]], mode: str, horizon: int,
                    delta: float = 1.0, test_fraction: float = 0.2, clip: float | None = 100.0) -> float:
    """Shared yardstick for both objectives: Huber loss on the suffix after the split point.

    The final-position anchor statistics coincide in both input modes, so the
    targets are identical; only the input representation differs.
    """
    if mode not in ("dense", "test_at_end"):
        raise ValueError(f"unknown mode {mode!r}")
    mask = dense_mask(horizon, model.cfg.head_horizon)
    losses = []
    with torch.no_grad():
        for series in batches:
            loss = test_at_end_loss(model, series, mask, delta, test_fraction, clip, fixed_stats=mode == "test_at_end")
            losses.append(float(loss))
    return float(np.mean(losses))


@dataclass
class ConvergenceExhibit:
    """Validation-loss trajectories of both objectives and the derived step ratio."""

    eval_steps: list[int]
    dense_val: list[float]
    tae_val: list[float]
    reference_step: int
    reference_loss: float
    dense_steps_to_reference: int | None

    @property
    def ratio(self) -> float | None:
        if self.dense_steps_to_reference is None:
            return None
        return self.reference_step / self.dense_steps_to_reference

    def to_rows(self) -> list[dict]:
        return [{"step": s, "dense_val": d, "test_at_end_val": t}
                for s, d, t in zip(self.eval_steps, self.dense_val, self.tae_val)]


def convergence_exhibit(model_factory, stream_factory, cfg: TrainConfig, val_batches: list[list[TimeSeries]],
                        eval_every: int = 100, horizon: int | None = None) -> ConvergenceExhibit:
    """Train both objectives from identical initializations and streams and compare validation losses.

    The reference is the test-at-end run's validation loss at its final step;
    the exhibit reports the first evaluated dense step that reaches it.
    """
    horizon = horizon or min(cfg.max_horizon, model_factory().cfg.head_horizon)
    eval_steps = [s for s in range(eval_every, cfg.steps + 1, eval_every)]
    if not eval_steps or eval_steps[-1] != cfg.steps:
        eval_steps.append(cfg.steps)
    curves = {}
    for mode, fn in (("dense", train), ("test_at_end", train_test_at_end)):
        model = model_factory()
        vals = []

        def cb(step, result, model=model, vals=vals, mode=mode):
            if step + 1 in eval_steps:
                model.eval()
                vals.append(validation_loss(model, val_batches, mode, horizon, cfg.huber_delta, cfg.test_fraction,
                                            cfg.target_clip))
                model.train()

        fn(model, stream_factory(), TrainConfig(**{**cfg.to_dict(), "loss_curve_path": None, "checkpoint_path": None}), cb)
        curves[mode] = vals
    ref = curves["test_at_end"][-1]
    reached = next((s for s, v in zip(eval_steps, curves["dense"]) if v <= ref), None)
    return ConvergenceExhibit(eval_steps, curves["dense"], curves["test_at_end"], cfg.steps, ref, reached)
