import csv
import math

import numpy as np
import pytest

from tinytsm.harness import (
    REPORT_COLUMNS,
    UNDEFINED,
    EvalReport,
    EvalTask,
    emit_plots,
    horizon_class,
    naive_forecaster,
    relative_error,
    run_eval,
    synthetic_tasks,
)
from tinytsm.model import ModelConfig, TinyTSM, save_params
from tinytsm.series import TimeSeries


def periodic_task(i, horizon=24, season=12, T=200, C=2, noise=0.3):
    rng = np.random.default_rng(i)
    t = np.arange(T)
    vals = np.stack([np.sin(2 * np.pi * t / season) * (c + 1) for c in range(C)]) + noise * rng.normal(size=(C, T))
    return EvalTask(f"task-{i:02d}", TimeSeries(vals), T - horizon, horizon, season=season)


# --- relative error ---------------------------------------------------------------------


def test_relative_error_examples():
    assert relative_error([1.0, 5.0], [1.0, 5.0], [0.0, 3.0]) == 1.0
    assert relative_error([1, 2], [0, 0], [1, 2]) == 0.0
    assert relative_error([1, 1], [2, 2], [0, 0], "MSE") == 0.25
    assert relative_error([1, 1], [2, 2], [0, 0], "MAE") == 0.5


def test_relative_error_scalar_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        truth, model, base = rng.normal(size=(3, 7)).tolist()
        mse = lambda a: sum((x - y) ** 2 for x, y in zip(a, truth)) / len(truth)  # noqa: E731
        assert math.isclose(relative_error(model, base, truth), mse(model) / mse(base), rel_tol=1e-12)


def test_relative_error_observed_only_and_sentinel():
    truth = np.array([1.0, np.nan, 3.0])
    assert relative_error([1.0, 100.0, 4.0], [1.0, -50.0, 5.0], truth) == 0.25
    assert relative_error([0.0, 0.0], [1.0, 2.0], [1.0, 2.0]) == UNDEFINED
    with pytest.raises(ValueError, match="no observed"):
        relative_error([1.0], [1.0], [np.nan])
    with pytest.raises(ValueError, match="lengths"):
        relative_error([1.0], [1.0, 2.0], [1.0, 2.0])


def test_horizon_classes():
    assert [horizon_class(h) for h in (1, 48, 49, 480, 481, 960)] == ["short"] * 2 + ["medium"] * 2 + ["long"] * 2
    with pytest.raises(ValueError):
        horizon_class(961)


def test_eval_task_validation():
    with pytest.raises(ValueError):
        EvalTask("x", TimeSeries(np.zeros(10)), 8, 4, season=2)
    with pytest.raises(ValueError):
        EvalTask("x", TimeSeries(np.zeros(10)), 4, 4, season=0)


# --- run_eval -------------------------------------------------------------------------------


def test_baseline_as_model_is_exactly_one():
    tasks = [periodic_task(i, horizon=h) for i, h in enumerate([12, 24, 60, 100])]
    rep = run_eval("naive", tasks)
    assert len(rep.rows) == 4
    for row in rep.rows:
        assert row["rel_mse"] == 1.0 and row["rel_mae"] == 1.0
    s = rep.summary()
    for cls in ("overall", "short", "medium"):
        assert s[cls]["rel_mse_mean"] == 1.0 and s[cls]["rel_mae_gmean"] == 1.0


def test_callable_baseline_forecaster_matches_naive():
    tasks = [periodic_task(i) for i in range(3)]
    rep = run_eval(naive_forecaster(12), tasks)
    assert all(r["rel_mse"] == 1.0 for r in rep.rows)


def test_no_tasks():
    with pytest.raises(ValueError, match="no tasks"):
        run_eval("naive", [])


def test_failures_recorded_not_fatal():
    def broken(series, horizon, future=None):
        raise RuntimeError("boom")

    rep = run_eval(broken, [periodic_task(0)])
    assert rep.rows == [] and rep.failed[0]["task_id"] == "task-00" and "boom" in rep.failed[0]["error"]


def test_undefined_baseline_counted():
    T = 100
    task = EvalTask("flat", TimeSeries(np.ones(T)), 80, 20, season=1)
    rep = run_eval(lambda s, h, fut=None: np.zeros((1, h)), [task, periodic_task(1)])
    assert rep.rows[0]["rel_mse"] == UNDEFINED
    assert rep.summary()["overall"]["rel_mse_undefined"] == 1


def test_model_checkpoint_path(tmp_path):
    model = TinyTSM(ModelConfig.toy(), seed=0)
    save_params(model, tmp_path / "m.ckpt")
    tasks = [periodic_task(i) for i in range(2)]
    a = run_eval(str(tmp_path / "m.ckpt"), tasks)
    b = run_eval(model, tasks)
    assert [r["rel_mse"] for r in a.rows] == [r["rel_mse"] for r in b.rows]


def test_summary_permutation_invariant():
    tasks = [periodic_task(i, horizon=h) for i, h in enumerate([12, 24, 36, 60, 80, 500])]
    f = lambda s, h, fut=None: naive_forecaster(12)(s, h) * 0.9  # noqa: E731
    a = run_eval(f, tasks).summary()
    b = run_eval(f, list(reversed(tasks))).summary()
    a.pop("runtime"), b.pop("runtime")
    assert a == b


def test_report_csv_round_trip(tmp_path):
    tasks = [periodic_task(i, horizon=h) for i, h in enumerate([12, 60, 24])]
    rep = run_eval(lambda s, h, fut=None: naive_forecaster(12)(s, h) + 0.1, tasks, out_dir=tmp_path)
    with open(tmp_path / "report.csv") as fh:
        assert next(csv.reader(fh)) == REPORT_COLUMNS
    back = EvalReport.from_csv(tmp_path / "report.csv")
    assert back.rows == rep.rows
    s1, s2 = rep.summary(), back.summary()
    assert s1 == s2
    assert (tmp_path / "report.json").exists()


# --- holdouts --------------------------------------------------------------------------------


def test_synthetic_tasks_deterministic():
    a, b = synthetic_tasks(5, "seasonal"), synthetic_tasks(5, "seasonal")
    for x, y in zip(a, b):
        assert x.task_id == y.task_id and x.season == y.season and x.dataset.equals(y.dataset)
    assert all(t.context_len == 512 and t.horizon == 48 and t.season in (7, 12, 24, 48) for t in a)
    assert len(synthetic_tasks(3, "mixed")) == 3
    with pytest.raises(ValueError):
        synthetic_tasks(2, "other")


# --- plots -----------------------------------------------------------------------------------


def test_emit_plots_deterministic(tmp_path):
    tasks = [periodic_task(i, horizon=h) for i, h in enumerate([12, 60])]
    rep = run_eval(lambda s, h, fut=None: naive_forecaster(12)(s, h) * 1.1, tasks)
    curves = {"dense": [{"step": 0, "loss": 1.0}, {"step": 1, "loss": 0.5}]}
    a = emit_plots(rep, curves, tmp_path / "a")
    b = emit_plots(rep, curves, tmp_path / "b")
    assert [p.name for p in a] == [p.name for p in b]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes(), pa.name
    rows = list(csv.DictReader(open(tmp_path / "a" / "summary.csv")))
    assert float(rows[0]["rel_mse_mean"]) == rep.summary()["overall"]["rel_mse_mean"]


def test_emit_plots_empty_report_stub(tmp_path):
    files = emit_plots(EvalReport(), None, tmp_path)
    assert [f.name for f in files] == ["NO_PLOTS.txt"]
