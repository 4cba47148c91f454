"""Accuracy metrics and the weighted quality evaluation (WQE) index.

WQE for one row of a cohort (all models evaluated on the same dataset and
horizon)::

    WQE = w_acc * clip(1 - R2, 0, 1) + w_rmse * norm(RMSE) + w_mae * norm(MAE)

with ``norm`` the min-max scaling over the cohort (0 when all rows tie).
Lower is better; the value lies in [0, 1] for weights on the simplex.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

DEFAULT_WEIGHTS = (1 / 3, 1 / 3, 1 / 3)
COLUMNS = ("model", "dataset", "horizon", "r2", "rmse", "mae", "wqe", "wqe_weights")


class MetricError(ValueError):
    pass


def _pair(truth, pred, min_len: int = 1) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(truth, dtype=float).ravel()
    p = np.asarray(pred, dtype=float).ravel()
    if t.size != p.size:
        raise MetricError(f"length mismatch: {t.size} truth vs {p.size} predictions")
    if t.size < min_len:
        raise MetricError(f"need at least {min_len} points, got {t.size}")
    return t, p


def r2(truth, pred) -> float:
    t, p = _pair(truth, pred, 2)
    sst = float(np.sum((t - t.mean()) ** 2))
    if sst == 0:
        raise MetricError("R2 is undefined for constant truth")
    return 1.0 - float(np.sum((t - p) ** 2)) / sst


def rmse(truth, pred) -> float:
    t, p = _pair(truth, pred)
    return math.sqrt(float(np.mean((t - p) ** 2)))


def mae(truth, pred) -> float:
    t, p = _pair(truth, pred)
    return float(np.mean(np.abs(t - p)))


@dataclass(frozen=True)
class MetricsRow:
    model: str
    dataset: str
    horizon: str
    r2: float
    rmse: float
    mae: float
    wqe: float = float("nan")
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS
    singleton: bool = False
    failed: bool = False


def score(model: str, dataset: str, horizon: str, truth, pred) -> MetricsRow:
    t, p = _pair(truth, pred)
    try:
        r = r2(t, p)
    except MetricError:
        r = float("nan")
    return MetricsRow(model, dataset, horizon, r, rmse(t, p), mae(t, p))


def _check_weights(weights) -> tuple[float, float, float]:
    w = tuple(float(x) for x in weights)
    if len(w) != 3 or min(w) < 0 or abs(sum(w) - 1) > 1e-9:
        raise MetricError(f"WQE weights must be 3 non-negative numbers summing to 1, got {w}")
    return w


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def wqe(rows: Sequence[MetricsRow], weights=DEFAULT_WEIGHTS) -> list[float]:
    """WQE for each row of one (dataset, horizon) cohort.

    A single-row cohort has nothing to normalise against; it scores
    ``clip(1 - R2, 0, 1)`` alone.
    """
    w = _check_weights(weights)
    if not rows:
        return []
    acc = np.clip(1.0 - np.array([r.r2 for r in rows], dtype=float), 0.0, 1.0)
    if len(rows) == 1:
        return [float(acc[0])]
    e = np.array([r.rmse for r in rows], dtype=float)
    a = np.array([r.mae for r in rows], dtype=float)
    out = w[0] * acc + w[1] * _minmax(e) + w[2] * _minmax(a)
    return [float(v) for v in out]


def assign_wqe(rows: Sequence[MetricsRow], weights=DEFAULT_WEIGHTS) -> list[MetricsRow]:
    """Fill ``wqe`` cohort by cohort; failed rows and rows with undefined R2 are left out."""
    w = _check_weights(weights)
    cells: dict[tuple[str, str], list[int]] = defaultdict(list)
    for i, r in enumerate(rows):
        if not r.failed and np.isfinite([r.r2, r.rmse, r.mae]).all():
            cells[(r.dataset, r.horizon)].append(i)
    out = [replace(r, weights=w) for r in rows]
    for idx in cells.values():
        vals = wqe([rows[i] for i in idx], w)
        for i, v in zip(idx, vals):
            out[i] = replace(out[i], wqe=v, singleton=len(idx) == 1)
    return out


def _fmt(x: float) -> str:
    return "" if not np.isfinite(x) else repr(float(x))


def write_metrics_csv(rows: Sequence[MetricsRow], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([r.model, r.dataset, r.horizon, _fmt(r.r2), _fmt(r.rmse), _fmt(r.mae),
                        _fmt(r.wqe), ";".join(repr(x) for x in r.weights)])


def read_metrics_csv(path: str | Path) -> list[MetricsRow]:
    def num(s: str) -> float:
        return float(s) if s else float("nan")

    rows = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            rows.append(MetricsRow(rec["model"], rec["dataset"], rec["horizon"], num(rec["r2"]),
                                   num(rec["rmse"]), num(rec["mae"]), num(rec["wqe"]),
                                   tuple(float(x) for x in rec["wqe_weights"].split(";")),
                                   failed=not rec["rmse"]))
    return rows
