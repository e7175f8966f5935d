"""Evaluation against a seasonal-naive baseline, reports and plots."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .inference import Forecaster, InferenceConfig, predict
from .model import TinyTSM, load_params
from .series import TimeSeries, seasonal_naive
from .synthts import PERIODIC_FAMILIES, AugmentationConfig, Family, GenBatchParams, dominant_period, generate

UNDEFINED = "undefined-baseline"

HORIZON_CLASSES = {"short": (1, 48), "medium": (49, 480), "long": (481, 960)}

REPORT_COLUMNS = [
    "task_id", "horizon", "class", "mse_model", "mse_naive", "rel_mse", "mae_model", "mae_naive", "rel_mae", "wall_ms",
]


def horizon_class(h: int) -> str:
    for name, (lo, hi) in HORIZON_CLASSES.items():
        if lo <= h <= hi:
            return name
    raise ValueError(f"horizon {h} outside every class (1..960)")


@dataclass
class EvalTask:
    task_id: str
    dataset: TimeSeries
    context_len: int
    horizon: int
    season: int | None = None
    horizon_class: str | None = None

    def __post_init__(self):
        if self.context_len + self.horizon > len(self.dataset):
            raise ValueError("context_len + horizon exceeds series length")
        if self.season is None:
            self.season = dominant_period(self.dataset.frequency)
        if self.season < 1:
            raise ValueError("season must be >= 1")
        if self.horizon_class is None:
            self.horizon_class = horizon_class(self.horizon)

    def split(self):
        """History window, target truth with its mask, and known-future values over the horizon."""
        L = len(self.dataset)
        start, cut = L - self.horizon - self.context_len, L - self.horizon
        hist = self.dataset.window(start, cut)
        t = self.dataset.target_channel
        truth = self.dataset.values[t, cut:]
        obs = self.dataset.missing_mask[t, cut:]
        known = sorted(self.dataset.known_future)
        future = self.dataset.values[known, cut:] if known else None
        return hist, truth, obs, future


def _metric(pred, truth, obs, metric: str) -> float:
    e = np.asarray(pred, dtype=np.float64)[obs] - np.asarray(truth, dtype=np.float64)[obs]
    if metric == "MSE":
        return float(np.mean(e * e))
    if metric == "MAE":
        return float(np.mean(np.abs(e)))
    raise ValueError(f"unknown metric {metric!r}")


def relative_error(model_forecast, baseline_forecast, truth, metric: str = "MSE", observed=None):
    """Model error over baseline error on observed points; ``UNDEFINED`` when the baseline is perfect."""
    truth = np.asarray(truth, dtype=np.float64)
    obs = np.isfinite(truth) if observed is None else np.asarray(observed, dtype=bool) & np.isfinite(truth)
    if len(model_forecast) != len(truth) or len(baseline_forecast) != len(truth):
        raise ValueError("forecast and truth lengths differ")
    if not obs.any():
        raise ValueError("truth has no observed points")
    base = _metric(baseline_forecast, truth, obs, metric)
    if base == 0:
        return UNDEFINED
    return _metric(model_forecast, truth, obs, metric) / base


def _mean(xs):
    return float(np.mean(xs)) if xs else math.nan


def _gmean(xs):
    if not xs:
        return math.nan
    xs = np.asarray(xs, dtype=np.float64)
    if np.any(xs <= 0):
        return 0.0 if np.all(xs >= 0) else math.nan
    return float(np.exp(np.mean(np.log(xs))))


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)
    failed: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        """Per class (plus ``overall``): arithmetic and geometric means of relative errors."""
        out = {}
        for cls in ("overall", *HORIZON_CLASSES):
            rows = [r for r in self.rows if cls == "overall" or r["class"] == cls]
            entry = {"n_tasks": len(rows)}
            for key in ("rel_mse", "rel_mae"):
                vals = [r[key] for r in rows if r[key] != UNDEFINED]
                entry[f"{key}_mean"] = _mean(vals)
                entry[f"{key}_gmean"] = _gmean(vals)
                entry[f"{key}_undefined"] = len(rows) - len(vals)
            out[cls] = entry
        times = [r["wall_ms"] for r in self.rows]
        out["runtime"] = {"total_ms": float(np.sum(times)) if times else 0.0, "mean_ms": _mean(times)}
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

    @classmethod
    def from_csv(cls, path) -> "EvalReport":
        rows = []
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                row = {"task_id": r["task_id"], "horizon": int(r["horizon"]), "class": r["class"]}
                for k in REPORT_COLUMNS[3:]:
                    row[k] = r[k] if r[k] == UNDEFINED else float(r[k])
                rows.append(row)
        return cls(rows)

    def to_json(self, path) -> None:
        payload = {"rows": self.rows, "failed": self.failed, "summary": self.summary()}
        Path(path).write_text(json.dumps(payload, indent=2, allow_nan=True))

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.to_csv(out / "report.csv")
        self.to_json(out / "report.json")
        return {"csv": out / "report.csv", "json": out / "report.json"}


def naive_forecaster(season: int) -> Forecaster:
    """Seasonal naive on every predicted channel, as a forecaster."""

    def f(series: TimeSeries, horizon: int, future=None) -> np.ndarray:
        rows = []
        for c in series.predicted_channels:
            hist = np.where(series.missing_mask[c], series.values[c], np.nan)
            rows.append(seasonal_naive(hist, season, horizon).values)
        return np.stack(rows)

    return f


def resolve_forecaster(model) -> TinyTSM | Forecaster | None:
    """A model, a checkpoint path, a callable, or ``"naive"`` (returns None: per-task baseline)."""
    if isinstance(model, str) and model == "naive":
        return None
    if isinstance(model, (str, Path)):
        return load_params(model)[1]
    return model


def run_eval(model, tasks: list[EvalTask], cfg: InferenceConfig | None = None, out_dir=None) -> EvalReport:
    """Evaluate each task; failures are recorded and skipped."""
    if not tasks:
        raise ValueError("no tasks")
    cfg = cfg or InferenceConfig()
    fc = resolve_forecaster(model)
    report = EvalReport()
    for task in sorted(tasks, key=lambda t: t.task_id):
        t0 = time.perf_counter()
        try:
            hist, truth, obs, future = task.split()
            tgt = hist.predicted_channels.index(hist.target_channel)
            naive = seasonal_naive(np.where(hist.missing_mask[hist.target_channel], hist.values[hist.target_channel], np.nan),
                                   task.season, task.horizon).values
            if fc is None:
                pred = naive_forecaster(task.season)(hist, task.horizon, future)[tgt]
            else:
                pred = predict(fc, hist, task.horizon, cfg, future=future).values[tgt]
            if not np.all(np.isfinite(pred)):
                raise ValueError("non-finite forecast")
            row = {"task_id": task.task_id, "horizon": task.horizon, "class": task.horizon_class}
            obs = obs & np.isfinite(truth)
            for metric in ("MSE", "MAE"):
                key = metric.lower()
                row[f"{key}_model"] = _metric(pred, truth, obs, metric)
                row[f"{key}_naive"] = _metric(naive, truth, obs, metric)
                row[f"rel_{key}"] = relative_error(pred, naive, truth, metric, obs)
            row["wall_ms"] = round((time.perf_counter() - t0) * 1000.0, 3)
            report.rows.append(row)
        except Exception as exc:  # per-task failures are reported, not fatal
            report.failed.append({"task_id": task.task_id, "error": f"{type(exc).__name__}: {exc}"})
    if out_dir is not None:
        report.write(out_dir)
    return report


# ---------------------------------------------------------------------------
# Synthetic holdouts
# ---------------------------------------------------------------------------

HOLDOUT_PERIODS = (7, 12, 24, 48)


def synthetic_tasks(n: int = 50, kind: str = "seasonal", context_len: int = 512, horizon: int = 48,
                    seed: int = 12345, n_channels: int = 3, noise_range: tuple[float, float] = (0.1, 0.5)) -> list[EvalTask]:
    """Held-out generated tasks; the baseline season is the single period the generators use.

    ``kind="seasonal"`` draws only periodic families; ``"mixed"`` draws all.
    The target channel gets i.i.d. Gaussian observation noise with std
    ``sigma * std(target)``, ``sigma ~ U(noise_range)``, so that no task is
    trivially solved by repeating the last season.
    """
    if kind == "seasonal":
        weights = {f.value: (1.0 if f in PERIODIC_FAMILIES and f != Family.EXPLOSIVE else 0.0) for f in Family}
    elif kind == "mixed":
        weights = None
    else:
        raise ValueError(f"unknown holdout kind {kind!r}")
    aug = AugmentationConfig(pool_subsample=4, n_base_range=(2, 4), family_weights=weights, p_calendar=0.0)
    rng = np.random.default_rng([seed, 0 if kind == "seasonal" else 1])
    tasks = []
    for i in range(n):
        period = int(rng.choice(HOLDOUT_PERIODS))
        params = GenBatchParams.fixed(context_len + horizon, period, noise_level=float(rng.uniform(0.0, 0.2)))
        ts = generate(aug, params, rng=rng)
        others = [c for c in range(ts.n_channels) if c != ts.target_channel]
        chosen = [ts.target_channel] + list(rng.permutation(others)[: n_channels - 1])
        ts = ts.select_channels(chosen)
        y, obs = ts.values[0], ts.missing_mask[0]
        sd = float(np.std(y[obs])) or 1.0
        noisy = ts.values.copy()
        noisy[0] = np.where(obs, y + rng.uniform(*noise_range) * sd * rng.normal(size=len(y)), np.nan)
        ts = ts.with_values(noisy)
        tasks.append(EvalTask(f"{kind}-{i:03d}", ts, context_len, horizon, season=period))
    return tasks


# ---------------------------------------------------------------------------
# Plots
# ---------------------------------------------------------------------------


def emit_plots(report: EvalReport, loss_curves: dict[str, list[dict]] | None, out_dir) -> list[Path]:
    """Bar chart of per-class relative errors and loss curves, plus the CSVs they are drawn from."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if not report.rows:
        stub = out / "NO_PLOTS.txt"
        stub.write_text("The report has no successful tasks, so no plots were drawn.\n")
        return [stub]
    summary = report.summary()
    classes = [c for c in ("overall", *HORIZON_CLASSES) if summary[c]["n_tasks"]]
    summary_csv = out / "summary.csv"
    with open(summary_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "n_tasks", "rel_mse_mean", "rel_mae_mean", "rel_mse_gmean", "rel_mae_gmean"])
        for c in classes:
            s = summary[c]
            w.writerow([c, s["n_tasks"], repr(s["rel_mse_mean"]), repr(s["rel_mae_mean"]),
                        repr(s["rel_mse_gmean"]), repr(s["rel_mae_gmean"])])
    written.append(summary_csv)

    fig, ax = plt.subplots(figsize=(6, 3.5))
    x = np.arange(len(classes))
    ax.bar(x - 0.2, [summary[c]["rel_mse_mean"] for c in classes], 0.4, label="relative MSE")
    ax.bar(x + 0.2, [summary[c]["rel_mae_mean"] for c in classes], 0.4, label="relative MAE")
    ax.axhline(1.0, color="k", lw=0.8, ls="--")
    ax.set_xticks(x, classes)
    ax.set_ylabel("model / seasonal naive")
    ax.legend()
    fig.tight_layout()
    bar = out / "relative_errors.png"
    fig.savefig(bar, dpi=100, metadata={"Software": None})
    plt.close(fig)
    written.append(bar)

    if loss_curves:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for name, rows in sorted(loss_curves.items()):
            ax.plot([r["step"] for r in rows], [r["loss"] for r in rows], label=name, lw=0.8)
            path = out / f"loss_{name}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(rows[0]))
                w.writeheader()
                w.writerows(rows)
            written.append(path)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.legend()
        fig.tight_layout()
        lc = out / "loss_curves.png"
        fig.savefig(lc, dpi=100, metadata={"Software": None})
        plt.close(fig)
        written.append(lc)
    return written
