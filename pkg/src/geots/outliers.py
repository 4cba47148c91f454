"""Interquartile-range outlier screening (3 x IQR fences)."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .series import SeriesError, TimeSeries

FENCE = 3.0


@dataclass(frozen=True)
class ChannelFences:
    channel: str
    q1: float
    q3: float
    iqr: float
    lower: float
    upper: float
    flagged: np.ndarray  # row indices


@dataclass(frozen=True)
class OutlierReport:
    n_steps: int
    fences: tuple[ChannelFences, ...]

    @property
    def n_flagged(self) -> int:
        return sum(f.flagged.size for f in self.fences)

    def flagged_pairs(self) -> list[tuple[int, int]]:
        return [(int(t), c) for c, f in enumerate(self.fences) for t in f.flagged]


def quartiles(x: np.ndarray) -> tuple[float, float]:
    """Q1 and Q3 by linear interpolation between order statistics (type 7)."""
    q1, q3 = np.quantile(x, [0.25, 0.75], method="linear")
    return float(q1), float(q3)


def detect_outliers_3iqr(series: TimeSeries, k: float = FENCE) -> OutlierReport:
    """Flag observed values strictly outside ``[Q1 - k*IQR, Q3 + k*IQR]``.

    Quartiles use observed values of each channel only.
    """
    fences = []
    for c, name in enumerate(series.channels):
        values, mask = series.channel(c)
        obs = values[mask]
        if obs.size < 4:
            raise SeriesError(f"channel {name!r} has {obs.size} observed points; "
                              "3IQR needs at least 4")
        q1, q3 = quartiles(obs)
        iqr = q3 - q1
        lower, upper = q1 - k * iqr, q3 + k * iqr
        out = np.zeros(series.n_steps, dtype=bool)
        out[mask] = (obs < lower) | (obs > upper)
        fences.append(ChannelFences(name, q1, q3, iqr, lower, upper, np.flatnonzero(out)))
    return OutlierReport(series.n_steps, tuple(fences))


def remove_outliers(series: TimeSeries, report: OutlierReport) -> TimeSeries:
    """Mask flagged entries; rows and epochs are kept."""
    if report.n_steps != series.n_steps or len(report.fences) != series.n_channels:
        raise SeriesError("outlier report does not match series dimensions")
    mask = series.mask.copy()
    for c, f in enumerate(report.fences):
        if f.channel != series.channels[c]:
            raise SeriesError(f"report channel {f.channel!r} does not match "
                              f"series channel {series.channels[c]!r}")
        mask[f.flagged, c] = False
        if f.flagged.size and not mask[:, c].any():
            warnings.warn(f"every value of channel {f.channel!r} was flagged; "
                          "channel is now fully masked", RuntimeWarning, stacklevel=2)
    return series.replace(mask=mask)


def write_report_csv(series: TimeSeries, report: OutlierReport, path: str | Path) -> None:
    """Sidecar listing: channel, index, epoch, value, bound violated."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel", "index", "epoch", "value", "bound", "limit"])
        for c, f in enumerate(report.fences):
            for t in f.flagged:
                v = float(series.values[t, c])
                bound, limit = ("upper", f.upper) if v > f.upper else ("lower", f.lower)
                w.writerow([f.channel, int(t), repr(float(series.epochs[t])), repr(v),
                            bound, repr(limit)])
