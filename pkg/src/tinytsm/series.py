"""Time-series data model, patching, strided views, seasonal-naive baseline and dataset I/O."""

from __future__ import annotations

import csv
import dataclasses
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple, Sequence

import numpy as np


class SeriesError(ValueError):
    """Raised for malformed series or dataset files."""


class BaseUnit(str, enum.Enum):
    SECOND = "second"
    MINUTE = "minute"
    HOUR = "hour"
    DAY = "day"
    WEEK = "week"
    MONTH = "month"


_UNIT_CODES = {
    BaseUnit.SECOND: "s",
    BaseUnit.MINUTE: "m",
    BaseUnit.HOUR: "h",
    BaseUnit.DAY: "D",
    BaseUnit.WEEK: "W",
    BaseUnit.MONTH: "M",
}


@dataclass(frozen=True)
class FrequencyTag:
    base_unit: BaseUnit
    multiplier: int = 1

    def __post_init__(self):
        object.__setattr__(self, "base_unit", BaseUnit(self.base_unit))
        if int(self.multiplier) < 1:
            raise SeriesError(f"frequency multiplier must be >= 1, got {self.multiplier}")
        object.__setattr__(self, "multiplier", int(self.multiplier))

    def scaled(self, n: int) -> "FrequencyTag":
        return FrequencyTag(self.base_unit, self.multiplier * n)

    def timedelta(self) -> np.timedelta64:
        return np.timedelta64(self.multiplier, _UNIT_CODES[self.base_unit])

    def to_dict(self) -> dict:
        return {"base_unit": self.base_unit.value, "multiplier": self.multiplier}

    @classmethod
    def from_dict(cls, d: dict) -> "FrequencyTag":
        return cls(BaseUnit(d["base_unit"]), int(d.get("multiplier", 1)))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _check_time_index(ti: np.ndarray) -> None:
    if len(ti) < 2:
        return
    diffs = np.diff(ti)
    if np.any(diffs == np.timedelta64(0)):
        raise SeriesError("duplicate timestamps")
    if np.any(diffs != diffs[0]) or diffs[0] <= np.timedelta64(0):
        raise SeriesError("irregular time index")


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Multivariate series of shape ``(n_channels, T)``.

    ``missing_mask`` is True where a value is observed. When omitted it is
    derived from the finiteness of ``values``.
    """

    values: np.ndarray
    missing_mask: np.ndarray | None = None
    time_index: np.ndarray | None = None
    frequency: FrequencyTag | None = None
    target_channel: int = 0
    known_future: frozenset = frozenset()
    channel_names: tuple = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[None, :]
        if values.ndim != 2:
            raise SeriesError(f"values must be 1-D or 2-D, got shape {values.shape}")
        if self.missing_mask is None:
            mask = np.isfinite(values)
        else:
            mask = np.asarray(self.missing_mask, dtype=bool)
            if mask.ndim == 1:
                mask = mask[None, :]
        if mask.shape != values.shape:
            raise SeriesError(f"mask shape {mask.shape} != values shape {values.shape}")
        n = values.shape[0]
        kf = frozenset(int(i) for i in self.known_future)
        if not 0 <= self.target_channel < n:
            raise SeriesError(f"target_channel {self.target_channel} out of range for {n} channels")
        if self.target_channel in kf:
            raise SeriesError("target channel cannot be a known-future covariate")
        if any(not 0 <= i < n for i in kf):
            raise SeriesError("known_future index out of range")
        names = tuple(self.channel_names) or tuple(f"ch{i}" for i in range(n))
        if len(names) != n:
            raise SeriesError("channel_names length does not match channel count")
        if self.time_index is not None:
            ti = np.asarray(self.time_index)
            if not np.issubdtype(ti.dtype, np.datetime64):
                ti = ti.astype("datetime64[ns]")
            if ti.shape != (values.shape[1],):
                raise SeriesError("time_index length does not match series length")
            _check_time_index(ti)
            object.__setattr__(self, "time_index", _frozen(ti))
        if self.frequency is not None and not isinstance(self.frequency, FrequencyTag):
            object.__setattr__(self, "frequency", FrequencyTag.from_dict(self.frequency))
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "missing_mask", _frozen(mask))
        object.__setattr__(self, "known_future", kf)
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(self, "target_channel", int(self.target_channel))

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.values.shape[1]

    @property
    def predicted_channels(self) -> list[int]:
        """Channels the model forecasts: everything except known-future covariates."""
        return [c for c in range(self.n_channels) if c not in self.known_future]

    def replace(self, **changes: Any) -> "TimeSeries":
        return dataclasses.replace(self, **changes)

    def with_values(self, values: np.ndarray) -> "TimeSeries":
        return dataclasses.replace(self, values=values, missing_mask=self.missing_mask)

    def window(self, start: int, stop: int) -> "TimeSeries":
        ti = None if self.time_index is None else self.time_index[start:stop]
        return dataclasses.replace(
            self,
            values=self.values[:, start:stop],
            missing_mask=self.missing_mask[:, start:stop],
            time_index=ti,
        )

    def select_channels(self, channels: Sequence[int]) -> "TimeSeries":
        channels = list(channels)
        remap = {c: i for i, c in enumerate(channels)}
        if self.target_channel not in remap:
            raise SeriesError("selection must keep the target channel")
        return dataclasses.replace(
            self,
            values=self.values[channels],
            missing_mask=self.missing_mask[channels],
            target_channel=remap[self.target_channel],
            known_future=frozenset(remap[c] for c in self.known_future if c in remap),
            channel_names=tuple(self.channel_names[c] for c in channels),
        )

    def append_channels(self, values: np.ndarray, names: Sequence[str], mask: np.ndarray | None = None) -> "TimeSeries":
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        if mask is None:
            mask = np.isfinite(values)
        return dataclasses.replace(
            self,
            values=np.concatenate([self.values, values]),
            missing_mask=np.concatenate([self.missing_mask, np.atleast_2d(mask)]),
            channel_names=self.channel_names + tuple(names),
        )

    def equals(self, other: "TimeSeries") -> bool:
        """Exact equality of observed values, masks, roles and index."""
        if self.values.shape != other.values.shape:
            return False
        if not np.array_equal(self.missing_mask, other.missing_mask):
            return False
        obs = self.missing_mask
        if not np.array_equal(self.values[obs], other.values[obs]):
            return False
        if (self.time_index is None) != (other.time_index is None):
            return False
        if self.time_index is not None and not np.array_equal(self.time_index, other.time_index):
            return False
        return (
            self.target_channel == other.target_channel
            and self.known_future == other.known_future
            and self.channel_names == other.channel_names
            and self.frequency == other.frequency
        )


# ---------------------------------------------------------------------------
# Patching
# ---------------------------------------------------------------------------


def patchify(series: np.ndarray, patch_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Chunk the last axis into patches, left-padding to a multiple of ``patch_len``.

    Returns ``(patches, pad)`` with shapes ``(..., num_patches, patch_len)``.
    Padded slots hold 0.0 and are flagged True in ``pad``.
    """
    if patch_len < 1:
        raise ValueError("patch_len must be >= 1")
    series = np.asarray(series)
    T = series.shape[-1]
    if T == 0:
        raise SeriesError("empty series")
    n_patches = -(-T // patch_len)
    n_pad = n_patches * patch_len - T
    lead = series.shape[:-1]
    padded = np.zeros(lead + (n_pad + T,), dtype=series.dtype)
    padded[..., n_pad:] = series
    pad = np.zeros(lead + (n_pad + T,), dtype=bool)
    pad[..., :n_pad] = True
    shape = lead + (n_patches, patch_len)
    return padded.reshape(shape), pad.reshape(shape)


def unpatchify(patches: np.ndarray, pad: np.ndarray) -> np.ndarray:
    """Flatten patches back to a sequence, dropping pad slots (1-D input only)."""
    return patches.reshape(-1)[~pad.reshape(-1)]


# ---------------------------------------------------------------------------
# Seasonal naive
# ---------------------------------------------------------------------------


class NaiveForecast(NamedTuple):
    values: np.ndarray
    season: int
    fell_back: bool


def _ffill(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    ok = np.isfinite(y)
    if ok.all() or not ok.any():
        return y
    idx = np.where(ok, np.arange(len(y)), 0)
    np.maximum.accumulate(idx, out=idx)
    out = y[idx]
    # leading gaps take the first observation
    first = np.argmax(ok)
    out[:first] = y[first]
    return out


def seasonal_naive(history: Sequence[float], season: int, horizon: int) -> NaiveForecast:
    """Repeat the most recent same-phase observation.

    Histories shorter than ``season`` fall back to last-value carry-forward.
    Missing (non-finite) history values are forward-filled first.
    """
    if season < 1 or horizon < 1:
        raise ValueError("season and horizon must be positive")
    y = _ffill(history)
    T = len(y)
    if T == 0:
        raise SeriesError("empty series")
    fell_back = T < season
    if fell_back:
        season = 1
    h = np.arange(horizon)
    return NaiveForecast(y[T - season + (h % season)].copy(), season, fell_back)


# ---------------------------------------------------------------------------
# Strided views
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StridedView:
    parent: TimeSeries
    stride: int
    offset: int

    def __post_init__(self):
        if not 0 <= self.offset < self.stride:
            raise ValueError("offset must lie in [0, stride)")

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.offset, len(self.parent), self.stride)

    def __len__(self) -> int:
        return len(self.indices)

    def to_series(self) -> TimeSeries:
        p = self.parent
        idx = self.indices
        return dataclasses.replace(
            p,
            values=p.values[:, idx],
            missing_mask=p.missing_mask[:, idx],
            time_index=None if p.time_index is None else p.time_index[idx],
            frequency=None if p.frequency is None else p.frequency.scaled(self.stride),
        )


def strided_views(series: TimeSeries, stride: int) -> list[StridedView]:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if stride > len(series):
        raise SeriesError("stride exceeds length")
    return [StridedView(series, stride, k) for k in range(stride)]


# ---------------------------------------------------------------------------
# Dataset I/O
# ---------------------------------------------------------------------------


def _fmt(v: float, observed: bool) -> str:
    return repr(float(v)) if observed else ""


def _write_csv(ts: TimeSeries, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = list(ts.channel_names)
        if ts.time_index is not None:
            header = ["timestamp"] + header
        w.writerow(header)
        for t in range(len(ts)):
            row = [_fmt(ts.values[c, t], ts.missing_mask[c, t]) for c in range(ts.n_channels)]
            if ts.time_index is not None:
                row = [str(ts.time_index[t])] + row
            w.writerow(row)


def _read_csv(path: Path) -> tuple[list[str], np.ndarray | None, np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SeriesError(f"{path}: empty file")
    header = rows[0]
    has_ts = bool(header) and header[0] == "timestamp"
    names = header[1:] if has_ts else header
    width = len(header)
    stamps, vals = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise SeriesError(f"{path}:{lineno}: ragged row ({len(row)} cells, expected {width})")
        if has_ts:
            stamps.append(row[0])
            row = row[1:]
        out = []
        for cell in row:
            cell = cell.strip()
            if cell == "":
                out.append(math.nan)
                continue
            try:
                out.append(float(cell))
            except ValueError:
                raise SeriesError(f"{path}:{lineno}: non-numeric cell {cell!r}") from None
        vals.append(out)
    values = np.array(vals, dtype=np.float64).reshape(len(vals), len(names)).T
    mask = ~np.isnan(values)
    ti = None
    if has_ts:
        try:
            ti = np.array(stamps, dtype="datetime64")
        except ValueError:
            raise SeriesError(f"{path}: unparseable timestamp") from None
        _check_time_index(ti)
    return names, ti, values, mask


def _roles(ts: TimeSeries) -> dict:
    return {
        "channels": list(ts.channel_names),
        "target_channel": ts.target_channel,
        "known_future": sorted(ts.known_future),
        "frequency": None if ts.frequency is None else ts.frequency.to_dict(),
    }


def write_dataset(series: Sequence[TimeSeries], path: str | Path, format: str = "json",
                  season: int | None = None) -> None:
    """Write series as one CSV (``format="csv"``) or a JSON manifest plus CSV files.

    Manifest-level roles come from the first series; a file entry becomes an
    object carrying its own roles when a later series differs. ``season`` (or
    the first series' ``metadata["season"]``) is recorded for evaluation.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    series = list(series)
    if format == "csv":
        if len(series) != 1:
            raise SeriesError("csv format holds exactly one series; use json for several")
        _write_csv(series[0], path)
        return
    if format != "json":
        raise SeriesError(f"unknown dataset format {format!r}")
    if not series:
        raise SeriesError("nothing to write")
    shared = _roles(series[0])
    files = []
    for i, ts in enumerate(series):
        fname = f"{path.stem}_{i:04d}.csv"
        _write_csv(ts, path.parent / fname)
        own = _roles(ts)
        files.append(fname if own == shared else {"file": fname, **own})
    manifest = {**shared, "files": files}
    season = season if season is not None else series[0].metadata.get("season")
    if season is not None:
        manifest["season"] = int(season)
    path.write_text(json.dumps(manifest, indent=2))


def read_dataset(path: str | Path, format: str | None = None) -> list[TimeSeries]:
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "json"
    if format == "csv":
        names, ti, values, mask = _read_csv(path)
        return [TimeSeries(values, mask, time_index=ti, channel_names=tuple(names))]
    if format != "json":
        raise SeriesError(f"unknown dataset format {format!r}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SeriesError(f"{path}: invalid manifest JSON ({exc})") from None
    meta = {"season": int(manifest["season"])} if manifest.get("season") is not None else {}
    out = []
    for entry in manifest["files"]:
        roles = manifest | entry if isinstance(entry, dict) else manifest
        fname = entry["file"] if isinstance(entry, dict) else entry
        names, ti, values, mask = _read_csv(path.parent / fname)
        if list(names) != list(roles["channels"]):
            raise SeriesError(f"{fname}: channel header does not match manifest")
        freq = roles.get("frequency")
        out.append(
            TimeSeries(
                values,
                mask,
                time_index=ti,
                frequency=None if freq is None else FrequencyTag.from_dict(freq),
                target_channel=int(roles.get("target_channel", 0)),
                known_future=frozenset(roles.get("known_future", [])),
                channel_names=tuple(names),
                metadata=dict(meta),
            )
        )
    return out
