import csv

import numpy as np
import pytest
import torch
from torch.func import functional_call, vmap

from tinytsm.model import ModelConfig, TinyTSM, make_batch
from tinytsm.series import TimeSeries
from tinytsm.training import (
    DenseTargets,
    LossMask,
    TrainConfig,
    TrainingError,
    WindowStream,
    batch_loss,
    coarse_grid_mask,
    convergence_exhibit,
    dense_loss,
    dense_mask,
    dense_targets,
    huber,
    lr_factor,
    sample_horizon,
    step_schedule,
    test_at_end_loss as tae_loss,
    train,
    train_test_at_end,
    validation_loss,
)


def rand_series(C=3, T=128, seed=0, known=frozenset(), missing=0.1, target=0):
    rng = np.random.default_rng(seed)
    vals = np.cumsum(rng.normal(size=(C, T)), axis=1) * rng.uniform(0.1, 10, (C, 1))
    mask = rng.random((C, T)) >= missing
    return TimeSeries(np.where(mask, vals, np.nan), mask, known_future=known, target_channel=target)


def small_model(seed=0, **kw):
    return TinyTSM(ModelConfig.toy(**({"max_horizon": 32} | kw)), seed=seed)


# --- huber / horizons / masks ------------------------------------------------------


def test_huber_examples():
    assert huber(0.5, 0.0) == 0.125
    assert huber(2.0, 0.0) == 1.5
    assert huber(1.0, 0.0) == 0.5 and huber(2.0, 0.0, delta=2.0) == 2.0
    assert huber(0.0, 3.0) == 2.5
    t = huber(torch.tensor([0.5, 2.0]), torch.zeros(2))
    assert t.tolist() == [0.125, 1.5]


def test_toy_batch_loss_hand_value():
    # 2 positions x 2 steps with errors (0.5, 2, 0, 1)
    pred = torch.tensor([[[[0.5, 2.0], [0.0, 1.0]]]], dtype=torch.float64)
    targets = DenseTargets(torch.zeros_like(pred), torch.ones_like(pred, dtype=torch.bool))
    loss = batch_loss(pred, targets, dense_mask(2))
    oracle = np.mean([huber(e, 0.0) for e in (0.5, 2.0, 0.0, 1.0)])
    assert loss.item() == 0.53125 == oracle


def test_batch_loss_perfect_and_empty():
    pred = torch.randn(1, 2, 3, 4)
    ok = DenseTargets(pred.clone(), torch.ones(1, 2, 3, 4, dtype=torch.bool))
    assert batch_loss(pred, ok, dense_mask(4)).item() == 0.0
    none = DenseTargets(pred.clone(), torch.zeros(1, 2, 3, 4, dtype=torch.bool))
    with pytest.raises(ValueError, match="no supervised positions"):
        batch_loss(pred, none, dense_mask(4))


def test_sample_horizon_range_and_determinism():
    rng = np.random.default_rng(0)
    hs = [sample_horizon(rng) for _ in range(5000)]
    assert min(hs) == 1 or min(hs) >= 1
    assert 1 <= min(hs) and max(hs) <= 960
    rng = np.random.default_rng(1)
    assert all(1 <= sample_horizon(rng, law="log-uniform") <= 960 for _ in range(2000))
    assert sample_horizon(np.random.default_rng(5)) == sample_horizon(np.random.default_rng(5))
    with pytest.raises(ValueError):
        sample_horizon(rng, law="cauchy")


def test_coarse_grid_mask_examples():
    m = coarse_grid_mask(8, 4, phase=0)
    assert np.flatnonzero(m.steps).tolist() == [0, 4]
    assert coarse_grid_mask(8, 1, np.random.default_rng(0)).steps.all()
    m = coarse_grid_mask(5, 4, phase=1, width=12)
    assert np.flatnonzero(m.steps).tolist() == [1]


def test_coarse_grid_mask_never_empty():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        h, n = int(rng.integers(1, 200)), int(rng.choice([1, 2, 4, 8, 16, 32, 64, 128]))
        m = coarse_grid_mask(h, n, rng, width=256)
        inc = np.flatnonzero(m.steps)
        assert inc.size >= 1 and np.all(inc < h) and np.all(inc % n == m.phase)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(coarse_grid_strides=(3,))
    with pytest.raises(ValueError):
        TrainConfig(coarse_grid_strides=(256,))
    with pytest.raises(ValueError):
        TrainConfig(huber_delta=0)


# --- loss properties ------------------------------------------------------------------


def test_stride_one_equals_dense_bit_exact():
    model = small_model()
    rng = np.random.default_rng(0)
    for i in range(100):
        C, T = int(rng.integers(1, 4)), int(rng.integers(40, 200))
        series = [rand_series(C, T, seed=1000 * i + b) for b in range(2)]
        batch = make_batch(series, model.cfg)
        with torch.no_grad():
            pred = model(batch)
        targets = dense_targets(series, batch, model.cfg.head_horizon)
        h = int(rng.integers(1, 33))
        try:
            dense = batch_loss(pred, targets, dense_mask(h, 32))
        except ValueError:
            continue
        coarse = batch_loss(pred, targets, coarse_grid_mask(h, 1, rng, width=32))
        assert dense.item() == coarse.item()
        assert torch.equal(dense, coarse)


def test_targets_exclude_known_future_missing_and_tail():
    model = small_model()
    ts = rand_series(3, 100, known={2}, missing=0.2)
    batch = make_batch([ts], model.cfg)
    t = dense_targets([ts], batch, 32)
    assert not t.valid[0, 2].any()
    last = batch.position_end[-1]
    assert last == 99 and not t.valid[0, :, -1].any()
    for c in (0, 1):
        for p, e in enumerate(batch.position_end):
            for j in range(32):
                idx = e + 1 + j
                if t.valid[0, c, p, j]:
                    assert idx < 100 and ts.missing_mask[c, idx]
                    expected = (ts.values[c, idx] - batch.anchor_m[0, c, p]) / batch.anchor_s[0, c, p]
                    assert abs(t.values[0, c, p, j].item() - expected) <= 1e-5 * max(1, abs(expected))


def test_no_leakage_through_normalization():
    model = small_model()
    rng = np.random.default_rng(0)
    for case in range(20):
        ts = rand_series(2, 160, seed=case)
        batch = make_batch([ts], model.cfg)
        p = int(rng.integers(0, batch.n_positions - 1))
        e = batch.position_end[p]
        vals = ts.values.copy()
        vals[:, e + 1:] = rng.normal(size=vals[:, e + 1:].shape) * 1e6
        adv = make_batch([TimeSeries(vals, ts.missing_mask)], model.cfg)
        assert np.array_equal(batch.anchor_m[..., : p + 1], adv.anchor_m[..., : p + 1])
        assert np.array_equal(batch.anchor_s[..., : p + 1], adv.anchor_s[..., : p + 1])
        with torch.no_grad():
            a, b = model(batch), model(adv)
        assert (a[:, :, : p + 1] - b[:, :, : p + 1]).abs().max().item() <= 1e-5


def test_loss_invariant_to_channel_permutation():
    model = small_model()
    mask = dense_mask(32)
    perm = [2, 0, 1]
    for seed in range(5):
        ts = rand_series(3, 150, seed=seed, known={1}, target=2)
        inv = {old: new for new, old in enumerate(perm)}
        pts = TimeSeries(ts.values[perm], ts.missing_mask[perm], known_future={inv[1]}, target_channel=inv[2])
        with torch.no_grad():
            a = dense_loss(model, [ts], mask)
            b = dense_loss(model, [pts], mask)
        assert abs(a.item() - b.item()) <= 1e-6 * max(1.0, abs(a.item()))


def test_zero_variance_anchor_excluded():
    model = small_model()
    vals = np.concatenate([np.zeros(64), np.arange(64.0)])[None]
    ts = TimeSeries(vals)
    batch = make_batch([ts], model.cfg)
    t = dense_targets([ts], batch, 32)
    assert not t.valid[0, 0, 0].any() and not t.valid[0, 0, 1].any()
    assert t.valid[0, 0, 2].any()


# --- gradient check -----------------------------------------------------------------------


def test_gradient_check_float64():
    """Analytic gradients vs a 5-point central stencil, 64 coordinates per parameter tensor."""
    torch.manual_seed(0)
    model = small_model().double()
    with torch.no_grad():
        for p in model.parameters():
            p.add_(torch.randn_like(p) * 0.05)
    rng = np.random.default_rng(0)
    ts = rand_series(3, 64, known={2}, missing=0.15)
    batch = make_batch([ts], model.cfg, future=rng.normal(size=(1, 1, 32)), dtype=torch.float64)
    targets = dense_targets([ts], batch, 32, dtype=torch.float64)
    mask = dense_mask(32)
    batch_loss(model(batch), targets, mask).backward()
    params = {k: v.detach() for k, v in model.named_parameters()}
    eps = 1e-3
    stencil = torch.tensor([-2.0, -1.0, 1.0, 2.0], dtype=torch.float64) * eps
    floor = torch.tensor(1e-6, dtype=torch.float64)
    worst = 0.0
    for name, p in model.named_parameters():
        n = p.numel()
        idx = torch.as_tensor(np.random.default_rng(1).choice(n, min(64, n), replace=False))
        pert = p.detach().reshape(-1).repeat(4 * len(idx), 1)
        pert[torch.arange(4 * len(idx)), idx.repeat_interleave(4)] += stencil.repeat(len(idx))

        def loss_at(q, name=name):
            return batch_loss(functional_call(model, {**params, name: q}, (batch,)), targets, mask)

        with torch.no_grad():
            v = vmap(loss_at)(pert.view(-1, *p.shape)).view(len(idx), 4)
        numeric = (v[:, 0] - 8 * v[:, 1] + 8 * v[:, 2] - v[:, 3]) / (12 * eps)
        analytic = p.grad.reshape(-1)[idx]
        rel = (analytic - numeric).abs() / torch.maximum(torch.maximum(analytic.abs(), numeric.abs()), floor)
        worst = max(worst, rel.max().item())
        assert rel.max().item() < 1e-6, name
    assert worst < 1e-6


# --- training loops ---------------------------------------------------------------------------


def sine_stream(seed=0, batch_size=2, window=128):
    t = np.arange(4000)
    ts = TimeSeries(np.stack([np.sin(2 * np.pi * t / 24), np.cos(2 * np.pi * t / 12)]))
    return WindowStream([ts], window, batch_size, seed)


def test_train_deterministic(tmp_path):
    cfg = TrainConfig(steps=2, learning_rate=1e-3, max_horizon=32, loss_curve_path=str(tmp_path / "c.csv"))
    a = train(small_model(), sine_stream(), cfg)
    b = train(small_model(), sine_stream(), cfg)
    assert a.losses.tolist() == b.losses.tolist()
    for pa, pb in zip(a.model.parameters(), b.model.parameters()):
        assert torch.equal(pa, pb)
    rows = list(csv.DictReader(open(tmp_path / "c.csv")))
    assert list(rows[0]) == ["step", "wall_ms", "loss", "stride", "horizon"]
    assert [float(r["loss"]) for r in rows] == a.losses.tolist()


def test_zero_learning_rate_leaves_parameters(tmp_path):
    model = small_model()
    before = {k: v.clone() for k, v in model.state_dict().items()}
    train(model, sine_stream(), TrainConfig(steps=3, learning_rate=0.0, weight_decay=0.0, max_horizon=32))
    for k, v in model.state_dict().items():
        assert torch.equal(v, before[k]), k


def test_step_schedule_pure_function():
    cfg = TrainConfig(seed=3)
    for step in range(50):
        a, b = step_schedule(cfg, step, 960), step_schedule(cfg, step, 960)
        assert np.array_equal(a.steps, b.steps) and a.stride == b.stride and 1 <= a.horizon <= 960
    strides = {step_schedule(cfg, s, 960).stride for s in range(400)}
    assert 1 in strides and len(strides) > 4


def test_lr_schedule_factors():
    assert all(lr_factor(TrainConfig(steps=10), s) == 1.0 for s in range(10))
    cfg = TrainConfig(steps=11, lr_schedule="cosine", warmup_steps=2, min_lr_ratio=0.1)
    f = [lr_factor(cfg, s) for s in range(11)]
    assert f[:3] == [0.5, 1.0, 1.0]
    assert f[-1] == pytest.approx(0.1) and all(a >= b for a, b in zip(f[2:], f[3:]))
    assert f[6] == pytest.approx(0.55)
    with pytest.raises(ValueError):
        TrainConfig(lr_schedule="step")


def test_cosine_schedule_sets_optimizer_lr(monkeypatch):
    seen = []
    cfg = TrainConfig(steps=4, learning_rate=1e-3, max_horizon=32, lr_schedule="cosine", warmup_steps=1)
    orig = torch.optim.AdamW.step

    def spy(self, *a, **k):
        seen.append(self.param_groups[0]["lr"])
        return orig(self, *a, **k)

    monkeypatch.setattr(torch.optim.AdamW, "step", spy)
    train(small_model(), sine_stream(), cfg)
    assert seen == pytest.approx([1e-3, 1e-3, 5e-4, 0.0])


def test_checkpoints_written(tmp_path):
    cfg = TrainConfig(steps=4, max_horizon=32, checkpoint_path=str(tmp_path / "m.ckpt"), checkpoint_every=2)
    train(small_model(), sine_stream(), cfg)
    assert (tmp_path / "m.ckpt").stat().st_size > 0


def test_non_finite_loss_aborts_with_diagnostics():
    model = small_model()
    with torch.no_grad():
        model.linear_head.bias.fill_(float("nan"))
    with pytest.raises(TrainingError, match=r"step 0 \(batch seed \(0, 0\)\)"):
        train(model, sine_stream(), TrainConfig(steps=1, max_horizon=32))


def test_unsupervised_steps_are_skipped():
    flat = TimeSeries(np.zeros((1, 128)))
    calls = []
    res = train(small_model(), WindowStream([flat], 64, 2), TrainConfig(steps=3, max_horizon=32),
                callback=lambda step, r: calls.append(step))
    assert res.skipped_steps == [0, 1, 2] and calls == [0, 1, 2] and res.curve == []


def test_test_at_end_deterministic_and_fewer_positions():
    cfg = TrainConfig(steps=2, learning_rate=1e-3, max_horizon=32)
    a = train_test_at_end(small_model(), sine_stream(window=160), cfg)
    b = train_test_at_end(small_model(), sine_stream(window=160), cfg)
    assert a.losses.tolist() == b.losses.tolist()
    model = small_model()
    series = next(sine_stream(window=160))
    mask = dense_mask(32)
    full = make_batch(series, model.cfg)
    dense_count = int(dense_targets(series, full, 32).valid.sum())
    prefix = [s.window(0, 128) for s in series]
    from tinytsm.training import final_targets

    tae_count = int(final_targets(series, make_batch(prefix, model.cfg, fixed_stats=True), 32).valid.sum())
    assert 0 < tae_count < dense_count
    assert torch.isfinite(tae_loss(model, series, mask))


def test_validation_yardstick_shares_targets():
    model = small_model()
    batches = [next(sine_stream(seed=s, window=160)) for s in range(2)]
    d = validation_loss(model, batches, "dense", 32)
    t = validation_loss(model, batches, "test_at_end", 32)
    assert np.isfinite(d) and np.isfinite(t)
    with pytest.raises(ValueError):
        validation_loss(model, batches, "other", 32)


def test_convergence_exhibit_small():
    cfg = TrainConfig(steps=6, learning_rate=1e-3, max_horizon=32)
    val = [next(sine_stream(seed=99, window=160))]
    ex = convergence_exhibit(lambda: small_model(), lambda: sine_stream(window=160), cfg, val, eval_every=3)
    assert ex.eval_steps == [3, 6] and len(ex.dense_val) == len(ex.tae_val) == 2
    assert ex.reference_loss == ex.tae_val[-1]
    assert ex.ratio is None or ex.ratio >= 1.0
    assert [r["step"] for r in ex.to_rows()] == [3, 6]


@pytest.mark.slow
def test_sinusoid_training_drops_loss():
    t = np.arange(20000)
    ts = TimeSeries(np.sin(2 * np.pi * t / 24)[None])
    res = train(TinyTSM(ModelConfig.toy(), seed=0), WindowStream([ts], 256, 4, 0),
                TrainConfig(steps=2000, max_horizon=64))
    assert res.losses[0] / res.losses[-100:].mean() >= 10
