import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geots.metrics import read_metrics_csv
from geots.neuralkit import ModelConfig
from geots.pipeline import (ExperimentPlan, PipelineError, SplitSpec, chronological_split, make_windows,
                            run_experiment, supervised_sets, train_models)
from geots.series import SyntheticSpec, TimeSeries, generate_synthetic

LINEAR_MLP = dict(arch="MLP", name="linear", window=4, mlp_hidden=[], lr=0.01, epochs=300,
                  batch_size=32, patience=300)


def trend_series(length=300, noise=0.0, seed=0):
    return generate_synthetic(SyntheticSpec(length, trend=0.05, sigma=noise, seed=seed))


def digests(root, pattern):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.glob(pattern))}


@pytest.mark.parametrize("length,counts,horizons", [
    (100, (70, 10, 20), (1, 10, 20)),
    (1000, (700, 100, 200), (10, 100, 200)),
])
def test_split_examples(length, counts, horizons):
    s = chronological_split(length)
    assert (len(s.train), len(s.val), len(s.test)) == counts
    assert len(s.train) + len(s.val) == round(0.8 * length)
    assert tuple(s.horizons[h] for h in ("short", "mid", "long")) == horizons


@settings(max_examples=200, deadline=None)
@given(st.integers(50, 20000))
def test_split_ranges_partition_without_overlap(length):
    s = chronological_split(length)
    assert s.train.start == 0 and s.train.stop == s.val.start
    assert s.val.stop == s.test.start and s.test.stop == length
    assert len(s.train) > 0 and len(s.val) > 0
    assert 1 <= s.horizons["short"] <= s.horizons["mid"] <= s.horizons["long"] == len(s.test)


def test_split_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec(short=0.2, mid=0.1)
    with pytest.raises(ValueError):
        SplitSpec(long=0.3)
    SplitSpec(horizon_base="test", short=0.05, mid=0.5, long=1.0)
    with pytest.raises(PipelineError):
        chronological_split(49)


def test_window_counts():
    x, y = make_windows(np.arange(10.0), 3, 1)
    assert x.shape == (7, 3, 1) and y.shape == (7, 1, 1)
    np.testing.assert_array_equal(x[0, :, 0], [0, 1, 2])
    assert y[-1, 0, 0] == 9
    x, y = make_windows(np.arange(5.0), 3, 2)
    assert x.shape[0] == 1
    with pytest.raises(PipelineError):
        make_windows(np.arange(4.0), 3, 2)


@settings(max_examples=100, deadline=None)
@given(st.integers(50, 400), st.integers(1, 10), st.integers(1, 5))
def test_windows_respect_split_boundaries(length, window, horizon):
    split = chronological_split(length)
    if len(split.train) < window + horizon:
        return
    z = np.arange(length, dtype=float)[:, None]
    (x_tr, y_tr), (x_va, y_va) = supervised_sets(z, split, window, horizon)
    assert y_tr.max() < split.train.stop
    if len(y_va):
        assert y_va.min() >= split.val.start and y_va.max() < split.val.stop
        assert x_va.max() < split.val.stop


def test_linear_model_is_exact_on_a_linear_series(tmp_path):
    plan = ExperimentPlan({"line": trend_series()}, [ModelConfig(**LINEAR_MLP)], out_dir=tmp_path)
    rows = run_experiment(plan)
    assert len(rows) == 3
    assert all(r.r2 > 0.999 for r in rows)
    assert (tmp_path / "comparison.svg").exists()


def test_experiment_is_byte_identical_across_runs(tmp_path):
    models = [ModelConfig(**{**LINEAR_MLP, "epochs": 30}),
              ModelConfig(arch="GRU", hidden=4, window=6, epochs=3)]
    data = {"noisy": trend_series(noise=0.5)}
    for run in ("a", "b"):
        run_experiment(ExperimentPlan(data, models, out_dir=tmp_path / run, seed=5))
    a = digests(tmp_path / "a", "**/*.*")
    b = digests(tmp_path / "b", "**/*.*")
    assert a == b and "metrics.csv" in a


def test_gappy_series_is_refused():
    s = trend_series()
    mask = s.mask.copy()
    mask[10] = False
    with pytest.raises(PipelineError, match="fill"):
        ExperimentPlan({"g": s.replace(mask=mask)}, [ModelConfig(arch="MLP")])
    with pytest.raises(PipelineError, match="unique"):
        ExperimentPlan({"s": s}, [ModelConfig(arch="MLP"), ModelConfig(arch="MLP")])


def test_failed_model_yields_failed_rows(tmp_path):
    models = [ModelConfig(**{**LINEAR_MLP, "epochs": 5}),
              ModelConfig(arch="MLP", name="too_wide", window=10_000, epochs=1)]
    rows = run_experiment(ExperimentPlan({"line": trend_series()}, models, out_dir=tmp_path))
    failed = [r for r in rows if r.model == "too_wide"]
    assert len(failed) == 3 and all(r.failed for r in failed)
    assert not any(r.failed for r in rows if r.model == "linear")
    failures = json.loads((tmp_path / "failures.json").read_text())
    assert failures[0]["model"] == "too_wide" and "window" in failures[0]["error"]
    assert any(r.failed for r in read_metrics_csv(tmp_path / "metrics.csv"))


def test_test_range_cannot_influence_training(tmp_path):
    s = trend_series(noise=0.3)
    split = chronological_split(s.n_steps)
    poisoned = s.values.copy()
    poisoned[split.test_start:] = 1e9
    corrupted = TimeSeries(s.station_id, s.epochs, s.channels, poisoned, s.mask, s.units)
    models = [ModelConfig(**{**LINEAR_MLP, "epochs": 20}), ModelConfig(arch="LSTM", hidden=4, epochs=2)]
    for name, data in (("clean", s), ("poisoned", corrupted)):
        train_models(ExperimentPlan({"d": data}, models, out_dir=tmp_path / name))
    for sub in ("checkpoints/*.json", "losses/*.csv"):
        assert digests(tmp_path / "clean", sub) == digests(tmp_path / "poisoned", sub)


def test_worker_count_does_not_change_results(tmp_path):
    models = [ModelConfig(**{**LINEAR_MLP, "epochs": 10}), ModelConfig(arch="GRU", hidden=4, epochs=2)]
    data = {"d": trend_series(noise=0.3)}
    for w in (1, 2):
        train_models(ExperimentPlan(data, models, out_dir=tmp_path / str(w), workers=w))
    assert digests(tmp_path / "1", "checkpoints/*.json") == digests(tmp_path / "2", "checkpoints/*.json")
