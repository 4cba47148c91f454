"""Chronological splitting, windowing and the model-comparison driver.

Layout of one series of length T::

    | train | val |            test             |
                  ^ test start
                  |-- short --|
                  |------- mid ------|
                  |----------- long ------------|

Models see only train (fitting, normalisation) and val (early stopping).
Forecasts over the test range are produced from the history that ends at
the test start, so test values are used for scoring and nothing else.
"""
from __future__ import annotations

import csv
import json
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .metrics import DEFAULT_WEIGHTS, MetricsRow, assign_wqe, score, write_metrics_csv
from .neuralkit import (DTYPE, Forecaster, ModelConfig, TrainSettings, build_model,
                        checkpoint_dict, load_checkpoint, train)
from .plotting import comparison_svg
from .series import TimeSeries

MIN_LENGTH = 50
HORIZONS = ("short", "mid", "long")
_EPS = 1e-9


class PipelineError(ValueError):
    pass


class SplitSpec(BaseModel):
    """Split fractions.

    With ``horizon_base="series"`` the horizon fractions are taken of the full
    length T and ``long`` must equal the test fraction. With ``"test"`` they are
    fractions of the test span and ``long`` must be 1.
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    train_val: float = Field(0.8, gt=0, lt=1)
    val_fraction: float = Field(0.125, gt=0, lt=1)
    short: float = Field(0.01, gt=0, le=1)
    mid: float = Field(0.10, gt=0, le=1)
    long: float = Field(0.20, gt=0, le=1)
    horizon_base: Literal["series", "test"] = "series"

    @model_validator(mode="after")
    def _check(self):
        if not self.short <= self.mid <= self.long:
            raise ValueError("horizons must satisfy short <= mid <= long")
        full = 1.0 - self.train_val if self.horizon_base == "series" else 1.0
        if abs(self.long - full) > 1e-9:
            raise ValueError(f"long horizon must cover the whole test range ({full:g})")
        return self


@dataclass(frozen=True)
class Split:
    length: int
    train: range
    val: range
    test: range
    horizons: dict[str, int]

    @property
    def test_start(self) -> int:
        return self.test.start


def _ceil(x: float) -> int:
    # guards 0.2 * 100 = 20.000000000000004
    return math.ceil(x - _EPS)


def chronological_split(length: int, spec: SplitSpec = SplitSpec()) -> Split:
    if length < MIN_LENGTH:
        raise PipelineError(f"series has {length} steps; at least {MIN_LENGTH} are required")
    n_test = _ceil((1.0 - spec.train_val) * length)
    n_trval = length - n_test
    n_val = _ceil(spec.val_fraction * n_trval)
    n_train = n_trval - n_val
    if n_train < 1 or n_val < 1:
        raise PipelineError(f"series of {length} steps leaves an empty train or validation range")
    base = length if spec.horizon_base == "series" else n_test
    horizons = {name: min(n_test, max(1, _ceil(getattr(spec, name) * base)))
                for name in HORIZONS}
    horizons["long"] = n_test
    return Split(length, range(0, n_train), range(n_train, n_trval), range(n_trval, length), horizons)


def make_windows(values, window: int, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Stride-1 sliding windows: inputs ``[N, window, C]``, targets ``[N, horizon, C]``."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    n = v.shape[0] - window - horizon + 1
    if window < 1 or horizon < 1:
        raise PipelineError("window and horizon must be positive")
    if n < 1:
        raise PipelineError(f"range of {v.shape[0]} steps is too short for window {window} "
                            f"+ horizon {horizon}")
    idx = np.arange(n)[:, None]
    x = v[idx + np.arange(window)]
    y = v[idx + window + np.arange(horizon)]
    return x, y


def supervised_sets(z: np.ndarray, split: Split, window: int, horizon: int):
    """Train windows lie inside train; validation windows have targets inside val.

    Validation inputs may reach back into train, which is earlier data.
    """
    n_train, n_trval = split.train.stop, split.val.stop
    x_tr, y_tr = make_windows(z[:n_train], window, horizon)
    x_all, y_all = make_windows(z[:n_trval], window, horizon)
    keep = np.arange(x_all.shape[0]) + window >= n_train
    return (x_tr, y_tr), (x_all[keep], y_all[keep])


def forecast(model: Forecaster, history, steps: int) -> np.ndarray:
    """Roll the model forward ``steps`` steps from the end of ``history`` (normalised units).

    One-step heads are iterated; multi-step heads emit blocks that are fed back.
    """
    w = model.config.window
    buf = np.asarray(history, dtype=float)
    if buf.ndim == 1:
        buf = buf[:, None]
    if buf.shape[0] < w:
        raise PipelineError(f"history of {buf.shape[0]} steps is shorter than window {w}")
    out = []
    produced = 0
    with torch.no_grad():
        while produced < steps:
            x = torch.as_tensor(buf[-w:][None], dtype=DTYPE)
            block = model(x)[0].numpy()
            take = block[: steps - produced]
            out.append(take)
            buf = np.concatenate([buf, block], axis=0)
            produced += take.shape[0]
    return np.concatenate(out, axis=0)


# ---------------------------------------------------------------- experiment


@dataclass(frozen=True)
class ExperimentPlan:
    datasets: dict[str, TimeSeries]
    models: Sequence[ModelConfig]
    split: SplitSpec = SplitSpec()
    out_dir: Path = Path("results")
    seed: int | None = None
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS
    workers: int = 1

    def __post_init__(self):
        if not self.models:
            raise PipelineError("an experiment needs at least one model")
        if not self.datasets:
            raise PipelineError("an experiment needs at least one dataset")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise PipelineError(f"model names must be unique, got {names}")
        for name, s in self.datasets.items():
            if not s.mask.all():
                raise PipelineError(f"dataset {name!r} has {int((~s.mask).sum())} missing values; "
                                    "run `geots fill` first")
            if s.n_steps < MIN_LENGTH:
                raise PipelineError(f"dataset {name!r} has {s.n_steps} steps; "
                                    f"at least {MIN_LENGTH} are required")


@dataclass(frozen=True)
class FitTask:
    model: dict
    dataset: str
    channels: tuple[str, ...]
    values: np.ndarray  # [test_start, C]; test rows never reach a worker
    split: Split
    seed: int


@dataclass
class FitOutcome:
    model: str
    dataset: str
    channels: tuple[str, ...]
    checkpoint: dict | None = None
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    error: str | None = None


def slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", text).strip("_") or "x"


def dataset_label(dataset: str, channel: str) -> str:
    return f"{dataset}/{channel}"


def _fit(task: FitTask) -> FitOutcome:
    cfg = ModelConfig(**{**task.model, "seed": task.seed})
    out = FitOutcome(cfg.name, task.dataset, task.channels)
    threads = torch.get_num_threads()
    torch.set_num_threads(1)  # same reductions whatever the worker count
    try:
        train_vals = task.values[task.split.train]
        mean = train_vals.mean(axis=0)
        std = train_vals.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        z = (task.values - mean) / std
        (x_tr, y_tr), val = supervised_sets(z, task.split, cfg.window, cfg.horizon)
        n = len(task.channels)
        model = build_model(cfg, n_in=n, n_out=n)
        if model.kan_layers():
            model.calibrate_grids(torch.as_tensor(x_tr, dtype=DTYPE))
        settings = TrainSettings(epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr,
                                 patience=cfg.patience, seed=cfg.seed)
        result = train(model, x_tr, y_tr, settings, val=val)
        out.train_loss, out.val_loss = result.train_loss, result.val_loss
        out.checkpoint = checkpoint_dict(model, extra={
            "dataset": task.dataset, "channels": list(task.channels),
            "mean": mean.tolist(), "std": std.tolist(),
            "split": {"length": task.split.length, "test_start": task.split.test_start,
                      "horizons": task.split.horizons},
            "strategy": cfg.strategy, "best_epoch": result.best_epoch,
            "stopped_early": result.stopped_early})
    except Exception as exc:  # a failing model must not stop the experiment
        out.error = f"{type(exc).__name__}: {exc}"
    finally:
        torch.set_num_threads(threads)
    return out


def _tasks(plan: ExperimentPlan) -> list[FitTask]:
    tasks = []
    for name, s in plan.datasets.items():
        split = chronological_split(s.n_steps, plan.split)
        for cfg in plan.models:
            seed = cfg.seed if plan.seed is None else plan.seed
            spec = cfg.model_dump()
            if cfg.arch == "GRUGNN":
                groups = [tuple(range(s.n_channels))]
            else:
                groups = [(c,) for c in range(s.n_channels)]
            for g in groups:
                tasks.append(FitTask(spec, name, tuple(s.channels[c] for c in g),
                                     np.array(s.values[: split.test_start, list(g)]), split, seed))
    return tasks


def _checkpoint_name(model: str, dataset: str, channels: Sequence[str]) -> str:
    chan = "all" if len(channels) > 1 else channels[0]
    return f"{slug(model)}__{slug(dataset)}__{slug(chan)}.json"


def train_models(plan: ExperimentPlan) -> list[FitOutcome]:
    """Fit every (model, dataset, channel group); write checkpoints and loss curves."""
    tasks = _tasks(plan)
    if plan.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(plan.workers, mp_context=get_context("spawn")) as pool:
            outcomes = list(pool.map(_fit, tasks))
    else:
        outcomes = [_fit(t) for t in tasks]
    ck_dir = Path(plan.out_dir) / "checkpoints"
    loss_dir = Path(plan.out_dir) / "losses"
    ck_dir.mkdir(parents=True, exist_ok=True)
    loss_dir.mkdir(parents=True, exist_ok=True)
    for o in outcomes:
        stem = _checkpoint_name(o.model, o.dataset, o.channels)
        if o.checkpoint is not None:
            (ck_dir / stem).write_text(json.dumps(o.checkpoint, indent=1), encoding="utf-8")
        with (loss_dir / stem.replace(".json", ".csv")).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss"])
            for i, tl in enumerate(o.train_loss):
                vl = o.val_loss[i] if i < len(o.val_loss) else float("nan")
                w.writerow([i + 1, repr(tl), repr(vl)])
    _write_failures(plan.out_dir, outcomes, plan.split)
    return outcomes


def _write_failures(out_dir, outcomes: Sequence[FitOutcome], spec: SplitSpec) -> None:
    failed = [{"model": o.model, "dataset": o.dataset, "channels": list(o.channels),
               "error": o.error, "split_spec": spec.model_dump()} for o in outcomes if o.error]
    path = Path(out_dir) / "failures.json"
    path.write_text(json.dumps(failed, indent=2) + "\n", encoding="utf-8")


PRED_COLUMNS = ("dataset", "step", "epoch", "truth", "prediction")


def forecast_checkpoints(datasets: dict[str, TimeSeries], out_dir: str | Path) -> list[str]:
    """Load every checkpoint under ``out_dir/checkpoints`` and write ``predictions_<model>.csv``.

    Returns the model names in checkpoint order. Failed fits (listed in
    ``failures.json``) get a prediction file with empty prediction cells.
    """
    out_dir = Path(out_dir)
    rows: dict[str, list] = {}
    horizons: dict[str, dict[str, int]] = {}
    for path in sorted((out_dir / "checkpoints").glob("*.json")):
        model, extra = load_checkpoint(path)
        name = model.config.name
        s = datasets.get(extra["dataset"])
        if s is None:
            raise PipelineError(f"checkpoint {path.name} refers to unknown dataset {extra['dataset']!r}")
        cols = [s.channel_index(c) for c in extra["channels"]]
        split = extra["split"]
        if split["length"] != s.n_steps:
            raise PipelineError(f"checkpoint {path.name} was trained on {split['length']} steps, "
                                f"dataset has {s.n_steps}")
        t0 = split["test_start"]
        mean, std = np.array(extra["mean"]), np.array(extra["std"])
        hist = (s.values[:t0, cols] - mean) / std
        steps = s.n_steps - t0
        pred = forecast(model, hist, steps) * std + mean
        block = rows.setdefault(name, [])
        for j, c in enumerate(extra["channels"]):
            label = dataset_label(extra["dataset"], c)
            horizons[label] = split["horizons"]
            for k in range(steps):
                block.append((label, k + 1, s.epochs[t0 + k], s.values[t0 + k, cols[j]], pred[k, j]))
    failures = _read_failures(out_dir)
    for f in failures:
        s = datasets.get(f["dataset"])
        if s is None:
            continue
        split = chronological_split(s.n_steps, SplitSpec(**f["split_spec"]))
        block = rows.setdefault(f["model"], [])
        for c in f["channels"]:
            label = dataset_label(f["dataset"], c)
            horizons.setdefault(label, split.horizons)
            ci = s.channel_index(c)
            t0 = split.test_start
            for k in range(s.n_steps - t0):
                block.append((label, k + 1, s.epochs[t0 + k], s.values[t0 + k, ci], float("nan")))
    for name, block in rows.items():
        with (out_dir / f"predictions_{slug(name)}.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PRED_COLUMNS)
            for label, step, ep, truth, p in sorted(block, key=lambda r: (r[0], r[1])):
                w.writerow([label, step, repr(float(ep)), repr(float(truth)),
                            repr(float(p)) if np.isfinite(p) else ""])
    (out_dir / "horizons.json").write_text(json.dumps(horizons, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    return list(rows)


def _read_failures(out_dir: Path) -> list[dict]:
    path = out_dir / "failures.json"
    return json.loads(path.read_text(encoding="utf-8")) if path.exists() else []


def read_predictions(path: str | Path) -> dict[str, dict[str, np.ndarray]]:
    """``{dataset: {"step", "epoch", "truth", "prediction"}}`` with empty cells as NaN."""
    cols: dict[str, dict[str, list]] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PRED_COLUMNS:
            raise PipelineError(f"{path}: expected columns {','.join(PRED_COLUMNS)}")
        for rec in reader:
            d = cols.setdefault(rec["dataset"], {k: [] for k in PRED_COLUMNS[1:]})
            for k in PRED_COLUMNS[1:]:
                d[k].append(float(rec[k]) if rec[k] else float("nan"))
    return {k: {c: np.array(v) for c, v in d.items()} for k, d in cols.items()}


def evaluate_predictions(out_dir: str | Path, weights=DEFAULT_WEIGHTS) -> list[MetricsRow]:
    """Score every ``predictions_*.csv`` at each horizon and write ``metrics.csv``."""
    out_dir = Path(out_dir)
    hpath = out_dir / "horizons.json"
    if not hpath.exists():
        raise PipelineError(f"{hpath} not found; run `geots forecast` first")
    horizons = json.loads(hpath.read_text(encoding="utf-8"))
    rows = []
    for path in sorted(out_dir.glob("predictions_*.csv")):
        model = path.stem.removeprefix("predictions_")
        for label, d in read_predictions(path).items():
            for h in HORIZONS:
                n = horizons[label][h]
                truth, pred = d["truth"][:n], d["prediction"][:n]
                if not np.isfinite(pred).all():
                    nan = float("nan")
                    rows.append(MetricsRow(model, label, h, nan, nan, nan, failed=True))
                    continue
                rows.append(score(model, label, h, truth, pred))
    rows = assign_wqe(rows, weights)
    write_metrics_csv(rows, out_dir / "metrics.csv")
    return rows


def plot_comparison(out_dir: str | Path, dataset: str | None = None) -> Path:
    """``comparison.svg`` for one dataset label (default: the first one found)."""
    out_dir = Path(out_dir)
    horizons = json.loads((out_dir / "horizons.json").read_text(encoding="utf-8"))
    preds = {}
    epochs = truth = None
    for path in sorted(out_dir.glob("predictions_*.csv")):
        data = read_predictions(path)
        label = dataset if dataset is not None else sorted(data)[0]
        dataset = label
        if label not in data:
            continue
        d = data[label]
        epochs, truth = d["epoch"], d["truth"]
        preds[path.stem.removeprefix("predictions_")] = d["prediction"]
    if epochs is None:
        raise PipelineError(f"no predictions found under {out_dir}")
    zoom = max(2, horizons[dataset]["mid"])
    target = out_dir / "comparison.svg"
    comparison_svg(target, epochs, truth, preds, title=f"{dataset}: test range", zoom=zoom)
    return target


def run_experiment(plan: ExperimentPlan) -> list[MetricsRow]:
    """Train, forecast, score and plot; every artifact lands in ``plan.out_dir``."""
    out_dir = Path(plan.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_models(plan)
    forecast_checkpoints(plan.datasets, out_dir)
    rows = evaluate_predictions(out_dir, plan.weights)
    plot_comparison(out_dir)
    return rows

