"""Patched encoder forecaster.

Per channel, the normalized values and both drift features are patched and
linearly embedded (``3 * patch_len -> hidden``); missing slots swap their
contribution for a learned per-slot embedding, and learned pad tokens are
prepended along time. The encoder interleaves two causal temporal layers
(rotary positions) with one unmasked spatial layer across channels. A
linear head and a cross-attention head over known-future covariates are
summed into per-patch forecasts of ``head_horizon`` steps in the anchored,
normalized scale.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import dart_norm
from .series import TimeSeries, patchify

ROLE_TARGET, ROLE_COVARIATE, ROLE_KNOWN_FUTURE = 0, 1, 2

# normalized inputs are clipped before embedding: a flat start followed by a level
# shift divides by the clamped std and would otherwise feed values near 1e8
INPUT_CLIP = 100.0

CHECKPOINT_MAGIC = b"TTSMCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    patch_len: int = 32
    hidden_size: int = 64
    n_temporal_layers: int = 4
    n_spatial_layers: int = 2
    n_heads: int = 4
    ffn_mult: float = 8 / 3
    max_context: int = 4096
    max_horizon: int = 960
    n_pad_tokens: int = 4
    head_horizon_per_patch: int | None = None
    rope_base: float = 10000.0
    norm_eps: float = 1e-6

    def __post_init__(self):
        if self.n_temporal_layers != 2 * self.n_spatial_layers:
            raise ValueError("n_temporal_layers must equal 2 * n_spatial_layers")
        if self.max_context % self.patch_len:
            raise ValueError("max_context must be divisible by patch_len")
        if self.hidden_size % self.n_heads:
            raise ValueError("hidden_size must be divisible by n_heads")
        if (self.hidden_size // self.n_heads) % 2:
            raise ValueError("head dimension must be even for rotary encoding")
        if self.head_horizon_per_patch is None:
            self.head_horizon_per_patch = self.max_horizon
        if self.head_horizon_per_patch > self.max_horizon:
            raise ValueError("head_horizon_per_patch cannot exceed max_horizon")

    @property
    def ffn_hidden(self) -> int:
        return int(round(self.ffn_mult * self.hidden_size))

    @property
    def head_horizon(self) -> int:
        return self.head_horizon_per_patch

    @property
    def n_chunks(self) -> int:
        return -(-self.head_horizon // self.patch_len)

    @classmethod
    def toy(cls, **kw) -> "ModelConfig":
        base = dict(hidden_size=64, n_heads=4, n_temporal_layers=4, n_spatial_layers=2, max_horizon=64)
        return cls(**(base | kw))

    @classmethod
    def full(cls, **kw) -> "ModelConfig":
        base = dict(hidden_size=344, n_heads=4, n_temporal_layers=12, n_spatial_layers=6, max_horizon=960)
        return cls(**(base | kw))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def layer_kinds(self) -> list[str]:
        return ["temporal", "temporal", "spatial"] * self.n_spatial_layers


def param_count(cfg: ModelConfig) -> dict[str, int]:
    """Closed-form parameter count per module group."""
    d, f, pl, H = cfg.hidden_size, cfg.ffn_hidden, cfg.patch_len, cfg.head_horizon
    n_layers = cfg.n_temporal_layers + cfg.n_spatial_layers
    layer = 2 * d + 4 * d * d + (d * f + f + f * d + d * d + d + 1)
    counts = {
        "embedding": 3 * pl * d + pl * d + cfg.n_pad_tokens * d + 3 * d,
        "encoder": n_layers * layer + d,
        "linear_head": d * H + H,
        "cross_head": pl * d + d + cfg.n_chunks * d + 3 * d * d + d * H + H,
    }
    counts["total"] = sum(counts.values())
    return counts


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


class RMSNorm(nn.Module):
    def __init__(self, d: int, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(d))

    def forward(self, x):
        return x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + self.eps) * self.weight


def _rotate_half(x):
    a, b = x.chunk(2, dim=-1)
    return torch.cat([-b, a], dim=-1)


def rotary(x: torch.Tensor, base: float) -> torch.Tensor:
    """Apply rotary position encoding along dim -2 of ``(..., L, head_dim)``."""
    L, dh = x.shape[-2], x.shape[-1]
    inv = base ** (-torch.arange(0, dh, 2, dtype=x.dtype, device=x.device) / dh)
    ang = torch.arange(L, dtype=x.dtype, device=x.device)[:, None] * inv[None, :]
    ang = torch.cat([ang, ang], dim=-1)
    return x * ang.cos() + _rotate_half(x) * ang.sin()


class Attention(nn.Module):
    def __init__(self, d: int, n_heads: int, rope_base: float | None):
        super().__init__()
        self.n_heads = n_heads
        self.rope_base = rope_base
        self.q = nn.Linear(d, d, bias=False)
        self.k = nn.Linear(d, d, bias=False)
        self.v = nn.Linear(d, d, bias=False)
        self.o = nn.Linear(d, d, bias=False)

    def _split(self, x):
        N, L, d = x.shape
        return x.view(N, L, self.n_heads, d // self.n_heads).transpose(1, 2)

    def forward(self, x, causal: bool):
        N, L, d = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        if self.rope_base is not None:
            q, k = rotary(q, self.rope_base), rotary(k, self.rope_base)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // self.n_heads)
        if causal:
            future = torch.ones(L, L, dtype=torch.bool, device=x.device).triu(1)
            scores = scores.masked_fill(future, float("-inf"))
        out = scores.softmax(-1) @ v
        return self.o(out.transpose(1, 2).reshape(N, L, d))


class SwiGLU(nn.Module):
    """``W3 swish_beta(W1 x + b)  *  (W2 x + c)`` with a learnable ``beta``."""

    def __init__(self, d: int, f: int):
        super().__init__()
        self.w1 = nn.Linear(d, f)
        self.w3 = nn.Linear(f, d, bias=False)
        self.w2 = nn.Linear(d, d)
        self.beta = nn.Parameter(torch.ones(()))

    def forward(self, x):
        u = self.w1(x)
        return self.w3(u * torch.sigmoid(self.beta * u)) * self.w2(x)


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig, kind: str):
        super().__init__()
        self.kind = kind
        d = cfg.hidden_size
        self.norm1 = RMSNorm(d, cfg.norm_eps)
        self.attn = Attention(d, cfg.n_heads, cfg.rope_base if kind == "temporal" else None)
        self.norm2 = RMSNorm(d, cfg.norm_eps)
        self.ffn = SwiGLU(d, cfg.ffn_hidden)

    def forward(self, x, causal: bool):
        x = x + self.attn(self.norm1(x), causal)
        return x + self.ffn(self.norm2(x))


class CrossHead(nn.Module):
    """Per-patch queries attend to chunk tokens of the known-future covariate windows."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d, H = cfg.hidden_size, cfg.head_horizon
        self.n_heads = cfg.n_heads
        self.patch_len = cfg.patch_len
        self.n_chunks = cfg.n_chunks
        self.cov_embed = nn.Linear(cfg.patch_len, d)
        self.chunk_pos = nn.Parameter(torch.zeros(cfg.n_chunks, d))
        self.q = nn.Linear(d, d, bias=False)
        self.k = nn.Linear(d, d, bias=False)
        self.v = nn.Linear(d, d, bias=False)
        self.out = nn.Linear(d, H, bias=False)
        self.bias = nn.Parameter(torch.zeros(H))

    def forward(self, h, future, future_mask):
        """``h``: (B, C, P, d); ``future``/``future_mask``: (B, K, P, H)."""
        B, C, P, d = h.shape
        K = future.shape[1]
        if K == 0:
            return self.bias.expand(B, C, P, -1)
        H = future.shape[-1]
        pad = self.n_chunks * self.patch_len - H
        vals = F.pad(future * future_mask, (0, pad)).view(B, K, P, self.n_chunks, self.patch_len)
        avail = F.pad(future_mask, (0, pad)).view(B, K, P, self.n_chunks, self.patch_len).any(-1)
        tok = self.cov_embed(vals) + self.chunk_pos  # (B, K, P, n_chunks, d)
        tok = tok.permute(0, 2, 1, 3, 4).reshape(B * P, K * self.n_chunks, d)
        key_ok = avail.permute(0, 2, 1, 3).reshape(B * P, 1, 1, K * self.n_chunks)
        q = h.permute(0, 2, 1, 3).reshape(B * P, C, d)
        nh, dh = self.n_heads, d // self.n_heads
        qh = self.q(q).view(B * P, C, nh, dh).transpose(1, 2)
        kh = self.k(tok).view(B * P, -1, nh, dh).transpose(1, 2)
        vh = self.v(tok).view(B * P, -1, nh, dh).transpose(1, 2)
        scores = (qh @ kh.transpose(-1, -2) / math.sqrt(dh)).masked_fill(~key_ok, -1e9)
        any_key = key_ok.any(-1, keepdim=True)
        ctx = (scores.softmax(-1) * any_key) @ vh
        ctx = ctx.transpose(1, 2).reshape(B, P, C, d).permute(0, 2, 1, 3)
        return self.out(ctx) + self.bias


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------


@dataclass
class PatchBatch:
    """Model-ready tensors for ``B`` series sharing shape ``(C, L)``."""

    features: torch.Tensor  # (B, C, P, 3 * patch_len): x slots, d slots, r slots
    missing: torch.Tensor  # (B, C, P, patch_len): missing or pad
    roles: torch.Tensor  # (C,) long
    future: torch.Tensor  # (B, K, P, H) known-future windows, anchored per position
    future_mask: torch.Tensor  # (B, K, P, H)
    anchor_m: np.ndarray  # (B, C, P) float64
    anchor_s: np.ndarray  # (B, C, P) float64
    anchor_ok: np.ndarray  # (B, C, P) bool, at least one observation up to the position end
    anchor_live: np.ndarray  # (B, C, P) bool, pre-clamp std above EPS_STD
    position_end: np.ndarray  # (P,) index of the last real step of each patch
    length: int
    predicted: list[int] = field(default_factory=list)
    known: list[int] = field(default_factory=list)

    @property
    def n_positions(self) -> int:
        return self.features.shape[2]

    def to(self, dtype) -> "PatchBatch":
        return PatchBatch(
            self.features.to(dtype), self.missing, self.roles, self.future.to(dtype), self.future_mask,
            self.anchor_m, self.anchor_s, self.anchor_ok, self.anchor_live, self.position_end, self.length,
            self.predicted, self.known,
        )


def _rolling(values, mask):
    """dart_norm statistics, tolerating channels with no observations at all."""
    empty = ~mask.any(-1)
    if empty.any():
        mask = mask.copy()
        mask[empty, 0] = True
        values = values.copy()
        values[empty, 0] = 0.0
    view = dart_norm.normalize(values, mask)
    if empty.any():
        x, d, r = view.x.copy(), view.d.copy(), view.r.copy()
        x[empty] = d[empty] = r[empty] = 0.0
        count = view.stats.count.copy()
        count[empty] = 0
        m = view.mask.copy()
        m[empty] = False
        stats = dart_norm.RollingStats(view.stats.m, view.stats.s, view.stats.s_clamped, count)
        view = dart_norm.NormalizedView(x, d, r, m, stats)
    return view


def windows(traj: np.ndarray, ok: np.ndarray, ends: np.ndarray, H: int):
    """Gather ``traj[..., e+1 : e+1+H]`` for each position end ``e``.

    Returns ``(vals, avail)`` of shape ``(..., P, H)``; out-of-range slots are
    unavailable.
    """
    L = traj.shape[-1]
    idx = ends[:, None] + 1 + np.arange(H)[None, :]
    inside = idx < L
    safe = np.where(inside, idx, 0)
    vals = traj[..., safe]
    avail = ok[..., safe] & inside
    return np.where(avail, vals, 0.0), avail


def _fixed(values, mask):
    """Whole-window statistics broadcast over time, with zero drift features."""
    n = mask.sum(-1, keepdims=True)
    safe_n = np.maximum(n, 1)
    m = np.where(mask, values, 0.0).sum(-1, keepdims=True) / safe_n
    var = (np.where(mask, values - m, 0.0) ** 2).sum(-1, keepdims=True) / safe_n
    s = np.sqrt(var)
    sc = np.where(s > dart_norm.EPS_STD, s, 1.0)
    shape = values.shape
    x = np.where(mask, (values - m) / sc, 0.0)
    zeros = np.zeros(shape)
    count = np.broadcast_to(n, shape).astype(np.int64)
    stats = dart_norm.RollingStats(np.broadcast_to(m, shape).copy(), np.broadcast_to(s, shape).copy(),
                                   np.broadcast_to(sc, shape).copy(), count)
    return dart_norm.NormalizedView(x, zeros, zeros.copy(), mask.copy(), stats)


def make_batch(series: list[TimeSeries], cfg: ModelConfig, future: np.ndarray | None = None,
               dtype=torch.float32, fixed_stats: bool = False) -> PatchBatch:
    """Normalize, patch and assemble a batch.

    ``future`` optionally holds known-future covariate values beyond the end
    of each series, shape ``(B, K, h)``; positions whose window reaches past
    the supplied values see those slots as unavailable.

    ``fixed_stats`` swaps the causal rolling statistics for statistics of the
    whole window (drift features zero); this is the prefix-normalized input of
    the test-at-end comparator and is not causal across positions.
    """
    first = series[0]
    B, C, L = len(series), first.n_channels, len(first)
    if L > cfg.max_context:
        raise ValueError(f"series length {L} exceeds max_context {cfg.max_context}")
    for s in series[1:]:
        if s.values.shape != (C, L) or s.known_future != first.known_future:
            raise ValueError("batch members must share shape and channel roles")
    values = np.stack([np.where(s.missing_mask, s.values, 0.0) for s in series])
    mask = np.stack([s.missing_mask for s in series])
    view = (_fixed if fixed_stats else _rolling)(values.reshape(B * C, L), mask.reshape(B * C, L))
    feats = view.features().reshape(B, C, 3, L)
    np.clip(feats[:, :, 0], -INPUT_CLIP, INPUT_CLIP, out=feats[:, :, 0])
    pl = cfg.patch_len
    patches, pad = patchify(feats, pl)  # (B, C, 3, P, pl)
    P = patches.shape[-2]
    features = patches.transpose(0, 1, 3, 2, 4).reshape(B, C, P, 3 * pl)
    obs_p, pad_p = patchify(view.mask.reshape(B, C, L), pl)
    missing = ~obs_p | pad_p
    n_pad = P * pl - L
    ends = np.arange(1, P + 1) * pl - 1 - n_pad
    stats = view.stats
    anchor_m = stats.m.reshape(B, C, L)[..., ends]
    anchor_s = stats.s_clamped.reshape(B, C, L)[..., ends]
    anchor_ok = stats.count.reshape(B, C, L)[..., ends] > 0
    anchor_live = stats.s.reshape(B, C, L)[..., ends] > dart_norm.EPS_STD

    known = sorted(first.known_future)
    predicted = first.predicted_channels
    roles = np.full(C, ROLE_COVARIATE)
    roles[first.target_channel] = ROLE_TARGET
    roles[known] = ROLE_KNOWN_FUTURE
    H = cfg.head_horizon
    if known:
        traj, ok = values[:, known], mask[:, known]
        if future is not None:
            fut = np.asarray(future, dtype=np.float64)
            traj = np.concatenate([traj, np.nan_to_num(fut)], axis=-1)
            ok = np.concatenate([ok, np.isfinite(fut)], axis=-1)
        fv, fa = windows(traj, ok, ends, H)
        km, ks = anchor_m[:, known, :, None], anchor_s[:, known, :, None]
        fut_vals = np.where(fa, (fv - km) / ks, 0.0)
        fut_mask = fa
    else:
        fut_vals = np.zeros((B, 0, P, H))
        fut_mask = np.zeros((B, 0, P, H), dtype=bool)
    return PatchBatch(
        features=torch.as_tensor(features, dtype=dtype),
        missing=torch.as_tensor(missing),
        roles=torch.as_tensor(roles, dtype=torch.long),
        future=torch.as_tensor(fut_vals, dtype=dtype),
        future_mask=torch.as_tensor(fut_mask),
        anchor_m=anchor_m,
        anchor_s=anchor_s,
        anchor_ok=anchor_ok,
        anchor_live=anchor_live,
        position_end=ends,
        length=L,
        predicted=predicted,
        known=known,
    )


@dataclass
class ForecastOutput:
    """Per-(channel, patch) forecasts in the anchored normalized scale."""

    pred: np.ndarray  # (C, P, H)
    anchor_m: np.ndarray  # (C, P)
    anchor_s: np.ndarray  # (C, P)
    predicted: list[int]

    def final(self, horizon: int) -> np.ndarray:
        """Denormalized forecast from the last position for predicted channels: (len(predicted), horizon)."""
        c = self.predicted
        return dart_norm.denormalize(self.pred[c, -1, :horizon], (self.anchor_m[c, -1, None], self.anchor_s[c, -1, None]))


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


class TinyTSM(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None, seed: int | None = 0):
        super().__init__()
        self.cfg = cfg = cfg or ModelConfig.toy()
        d, pl = cfg.hidden_size, cfg.patch_len
        self.patch_embed = nn.Linear(3 * pl, d, bias=False)
        self.missing_embed = nn.Parameter(torch.zeros(pl, d))
        self.pad_tokens = nn.Parameter(torch.zeros(cfg.n_pad_tokens, d))
        self.role_embed = nn.Parameter(torch.zeros(3, d))
        self.layers = nn.ModuleList(EncoderLayer(cfg, k) for k in cfg.layer_kinds())
        self.final_norm = RMSNorm(d, cfg.norm_eps)
        self.linear_head = nn.Linear(d, cfg.head_horizon)
        self.cross_head = CrossHead(cfg)
        if seed is not None:
            self.reset_parameters(seed)

    def reset_parameters(self, seed: int = 0):
        g = torch.Generator().manual_seed(seed)
        n_layers = len(self.layers)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith("norm1.weight") or name.endswith("norm2.weight") or name.startswith("final_norm"):
                    p.fill_(1.0)
                elif name.endswith("beta"):
                    p.fill_(1.0)
                elif p.ndim == 1:
                    p.zero_()
                else:
                    std = 0.02
                    if name.endswith("attn.o.weight") or name.endswith("ffn.w3.weight"):
                        std = 0.02 / math.sqrt(2 * n_layers)
                    p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * std)
            # the multiplicative gate starts near identity so the FFN is not crushed at init
            for layer in self.layers:
                layer.ffn.w2.bias.fill_(1.0)

    # -- stages --------------------------------------------------------------

    def embed(self, batch: PatchBatch) -> torch.Tensor:
        """Hidden states ``(B, C, n_pad + P, d)``; no input normalization layer."""
        pl = self.cfg.patch_len
        miss = batch.missing.to(batch.features.dtype)
        keep = (1.0 - miss).repeat(1, 1, 1, 3)
        h = self.patch_embed(batch.features * keep) + miss @ self.missing_embed
        h = h + self.role_embed[batch.roles][None, :, None, :]
        B, C = h.shape[:2]
        pads = self.pad_tokens.expand(B, C, -1, -1)
        return torch.cat([pads, h], dim=2)

    def encode(self, h: torch.Tensor) -> torch.Tensor:
        B, C, N, d = h.shape
        n_pad = self.cfg.n_pad_tokens
        for layer in self.layers:
            if layer.kind == "temporal":
                h = layer(h.reshape(B * C, N, d), causal=True).view(B, C, N, d)
            else:
                body = h[:, :, n_pad:].permute(0, 2, 1, 3).reshape(B * (N - n_pad), C, d)
                body = layer(body, causal=False).view(B, N - n_pad, C, d).permute(0, 2, 1, 3)
                h = torch.cat([h[:, :, :n_pad], body], dim=2)
        return h

    def heads(self, h: torch.Tensor, batch: PatchBatch) -> torch.Tensor:
        """Summed linear and cross-attention heads over non-pad positions: ``(B, C, P, H)``."""
        body = self.final_norm(h[:, :, self.cfg.n_pad_tokens :])
        return self.linear_head(body) + self.cross_head(body, batch.future, batch.future_mask.to(body.dtype))

    def forward(self, batch: PatchBatch) -> torch.Tensor:
        return self.heads(self.encode(self.embed(batch)), batch)

    # -- convenience -----------------------------------------------------------

    @property
    def dtype(self):
        return self.patch_embed.weight.dtype

    def forecast_output(self, series: TimeSeries, horizon: int, future: np.ndarray | None = None) -> ForecastOutput:
        if horizon > self.cfg.max_horizon or horizon > self.cfg.head_horizon:
            raise ValueError(f"horizon {horizon} exceeds max_horizon {self.cfg.head_horizon}")
        batch = make_batch([series], self.cfg, None if future is None else np.asarray(future)[None], dtype=self.dtype)
        with torch.no_grad():
            pred = self(batch)[0].double().numpy()
        return ForecastOutput(pred, batch.anchor_m[0], batch.anchor_s[0], batch.predicted)

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_params(model: TinyTSM, path: str | Path) -> None:
    """Versioned container: magic, version, JSON header length, JSON header, raw <f4 tensors."""
    tensors, entries, offset = [], [], 0
    for name, p in model.state_dict().items():
        arr = p.detach().cpu().numpy().astype("<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        tensors.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"config": model.cfg.to_dict(), "tensors": entries}).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for t in tensors:
            fh.write(t)


def load_params(path: str | Path) -> tuple[ModelConfig, TinyTSM]:
    raw = Path(path).read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    if len(raw) < pos + 8:
        raise CheckpointError("truncated checkpoint header")
    version, hlen = struct.unpack("<II", raw[pos : pos + 8])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version mismatch: file has {version}, expected {CHECKPOINT_VERSION}")
    pos += 8
    if len(raw) < pos + hlen:
        raise CheckpointError("truncated checkpoint header")
    header = json.loads(raw[pos : pos + hlen])
    pos += hlen
    cfg = ModelConfig.from_dict(header["config"])
    model = TinyTSM(cfg, seed=None)
    state = model.state_dict()
    names = {e["name"] for e in header["tensors"]}
    missing = set(state) - names
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {sorted(missing)}")
    new_state = {}
    for e in header["tensors"]:
        name = e["name"]
        if name not in state:
            raise CheckpointError(f"unexpected tensor {name!r}")
        if tuple(e["shape"]) != tuple(state[name].shape):
            raise CheckpointError(
                f"shape mismatch for tensor {name!r}: checkpoint {tuple(e['shape'])}, config implies {tuple(state[name].shape)}"
            )
        start, stop = pos + e["offset"], pos + e["offset"] + e["nbytes"]
        if stop > len(raw):
            raise CheckpointError(f"truncated checkpoint: tensor {name!r} incomplete")
        arr = np.frombuffer(raw[start:stop], dtype="<f4").reshape(e["shape"])
        new_state[name] = torch.from_numpy(arr.copy())
    model.load_state_dict(new_state)
    return cfg, model
