"""Time-series container, CSV I/O and synthetic fixtures.

Values where ``mask`` is False are placeholders only; every consumer reads
the mask first.  Placeholders are stored as NaN so accidental arithmetic on
them poisons the result instead of silently succeeding.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MISSING_TOKENS = frozenset({"", "nan", "NaN", "NAN"})
_UNIT_RE = re.compile(r"^(?P<name>.*?)\s*\[(?P<unit>[^\]]*)\]\s*$")


class SeriesError(ValueError):
    """Invalid series content; ``row`` and ``column`` locate the offending cell."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.row = row
        self.column = column


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Multichannel series on strictly increasing epochs (days).

    ``values`` and ``mask`` are [T x C]; ``mask`` is True where observed.
    """

    station_id: str
    epochs: np.ndarray
    channels: tuple[str, ...]
    values: np.ndarray
    mask: np.ndarray
    units: tuple[str, ...] = ()

    def __post_init__(self):
        epochs = np.array(self.epochs, dtype=float).reshape(-1)
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        mask = np.array(self.mask, dtype=bool)
        if mask.ndim == 1:
            mask = mask[:, None]
        channels = tuple(str(c) for c in self.channels)
        units = tuple(str(u) for u in self.units) or ("",) * len(channels)

        if len(channels) < 1:
            raise SeriesError("series needs at least one channel")
        if epochs.size < 1:
            raise SeriesError("series needs at least one epoch")
        if values.shape != (epochs.size, len(channels)):
            raise SeriesError(f"values shape {values.shape} does not match "
                              f"{epochs.size} epochs x {len(channels)} channels")
        if mask.shape != values.shape:
            raise SeriesError(f"mask shape {mask.shape} does not match values {values.shape}")
        if len(units) != len(channels):
            raise SeriesError("units must list one entry per channel")
        if not np.all(np.isfinite(epochs)):
            raise SeriesError("epochs must be finite")
        steps = np.diff(epochs)
        if np.any(steps == 0):
            row = int(np.flatnonzero(steps == 0)[0]) + 1
            raise SeriesError("duplicate epoch", row=row)
        if np.any(steps < 0):
            row = int(np.flatnonzero(steps < 0)[0]) + 1
            raise SeriesError("epochs are not increasing", row=row)
        if np.any(~np.isfinite(values[mask])):
            raise SeriesError("observed values must be finite")

        values = values.copy()
        values[~mask] = np.nan
        object.__setattr__(self, "epochs", _readonly(epochs))
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "mask", _readonly(mask))
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "units", units)

    @property
    def n_steps(self) -> int:
        return self.epochs.size

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())

    @property
    def has_gaps(self) -> bool:
        return not bool(self.mask.all())

    def channel_index(self, channel: str | int) -> int:
        if isinstance(channel, (int, np.integer)):
            if not 0 <= channel < self.n_channels:
                raise SeriesError(f"channel index {channel} out of range")
            return int(channel)
        try:
            return self.channels.index(channel)
        except ValueError:
            raise SeriesError(f"unknown channel {channel!r}") from None

    def channel(self, channel: str | int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(values, mask)`` for one channel."""
        c = self.channel_index(channel)
        return self.values[:, c], self.mask[:, c]

    def spacing(self, rtol: float = 1e-6) -> float:
        """Common epoch step; raises if sampling is not uniform within ``rtol``."""
        if self.n_steps < 2:
            return 1.0
        steps = np.diff(self.epochs)
        dt = float(np.median(steps))
        if np.max(np.abs(steps - dt)) > rtol * dt:
            raise SeriesError(f"epoch spacing is not uniform (median step {dt:g}); "
                              "express gaps through the mask, not missing rows")
        return dt

    def replace(self, values=None, mask=None) -> "TimeSeries":
        return TimeSeries(self.station_id, self.epochs,
                          self.channels,
                          self.values if values is None else values,
                          self.mask if mask is None else mask,
                          self.units)

    def select(self, channels: Sequence[str | int]) -> "TimeSeries":
        idx = [self.channel_index(c) for c in channels]
        return TimeSeries(self.station_id, self.epochs,
                          tuple(self.channels[i] for i in idx),
                          self.values[:, idx], self.mask[:, idx],
                          tuple(self.units[i] for i in idx))

    def slice(self, start: int, stop: int) -> "TimeSeries":
        return TimeSeries(self.station_id, self.epochs[start:stop], self.channels,
                          self.values[start:stop], self.mask[start:stop], self.units)

    def equals(self, other: "TimeSeries") -> bool:
        """Exact equality on epochs, mask and observed values."""
        return (self.channels == other.channels
                and np.array_equal(self.epochs, other.epochs)
                and np.array_equal(self.mask, other.mask)
                and np.array_equal(self.values[self.mask], other.values[other.mask]))


@dataclass(frozen=True)
class CsvLayout:
    epoch_column: str | int = 0
    delimiter: str = ","
    station_id: str | None = None


def _parse_header_cell(cell: str) -> tuple[str, str]:
    m = _UNIT_RE.match(cell.strip())
    if m:
        return m.group("name"), m.group("unit")
    return cell.strip(), ""


def read_csv(path: str | Path, layout: CsvLayout = CsvLayout()) -> TimeSeries:
    """Read a series: header row, one epoch column, one column per channel.

    Channel headers may carry a unit suffix, ``"U [mm]"``.  Empty cells and
    ``NaN`` tokens are missing.  Row numbers in errors count data rows from 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter=layout.delimiter))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise SeriesError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if isinstance(layout.epoch_column, int):
        ecol = layout.epoch_column
    else:
        names = [_parse_header_cell(h)[0] for h in header]
        if layout.epoch_column not in names:
            raise SeriesError(f"{path}: no epoch column {layout.epoch_column!r}")
        ecol = names.index(layout.epoch_column)
    value_cols = [i for i in range(len(header)) if i != ecol]
    if not value_cols:
        raise SeriesError(f"{path}: header needs at least one value column")
    parsed = [_parse_header_cell(header[i]) for i in value_cols]
    if not body:
        raise SeriesError(f"{path}: no data rows")

    epochs = np.empty(len(body))
    values = np.full((len(body), len(value_cols)), np.nan)
    mask = np.zeros((len(body), len(value_cols)), dtype=bool)
    for r, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise SeriesError("wrong number of fields", row=r)
        try:
            epochs[r - 1] = float(row[ecol])
        except ValueError:
            raise SeriesError(f"unparsable epoch {row[ecol]!r}", row=r,
                              column=header[ecol]) from None
        for j, col in enumerate(value_cols):
            cell = row[col].strip()
            if cell in MISSING_TOKENS:
                continue
            try:
                v = float(cell)
            except ValueError:
                raise SeriesError(f"unparsable number {cell!r}", row=r,
                                  column=parsed[j][0]) from None
            if not math.isfinite(v):
                raise SeriesError(f"non-finite value {cell!r}", row=r, column=parsed[j][0])
            values[r - 1, j] = v
            mask[r - 1, j] = True

    steps = np.diff(epochs)
    if np.any(steps == 0):
        raise SeriesError("duplicate epoch", row=int(np.flatnonzero(steps == 0)[0]) + 2)
    if np.any(steps < 0):
        raise SeriesError("non-monotonic epochs", row=int(np.flatnonzero(steps < 0)[0]) + 2)

    return TimeSeries(layout.station_id or path.stem, epochs,
                      tuple(p[0] for p in parsed), values, mask,
                      tuple(p[1] for p in parsed))


def write_csv(series: TimeSeries, path: str | Path, epoch_name: str = "epoch") -> None:
    """Write ``series``; ``repr`` formatting keeps floats bit-exact on re-read."""
    header = [epoch_name]
    for name, unit in zip(series.channels, series.units):
        header.append(f"{name} [{unit}]" if unit else name)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t in range(series.n_steps):
            row = [repr(float(series.epochs[t]))]
            for c in range(series.n_channels):
                row.append(repr(float(series.values[t, c])) if series.mask[t, c] else "")
            w.writerow(row)


@dataclass(frozen=True)
class Harmonic:
    amplitude: float
    period: float
    phase: float = 0.0


@dataclass(frozen=True)
class SyntheticSpec:
    """Trend + harmonics + AR(1) noise on a uniform grid.

    ``sigma`` is the white-innovation std of the AR(1) noise; ``spikes`` adds
    that many isolated outliers of size ``spike_size`` times the marginal
    noise std, with random sign.
    """

    length: int
    trend: float = 0.0
    harmonics: tuple[Harmonic, ...] = ()
    sigma: float = 0.0
    ar1: float = 0.0
    seed: int = 0
    start: float = 0.0
    step: float = 1.0
    offset: float = 0.0
    spikes: int = 0
    spike_size: float = 15.0
    station_id: str = "SYNTH"
    channel: str = "value"
    unit: str = "mm"

    def __post_init__(self):
        object.__setattr__(self, "harmonics", tuple(
            h if isinstance(h, Harmonic) else Harmonic(**h) for h in self.harmonics))
        if self.length < 2:
            raise ValueError("synthetic length must be >= 2")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not abs(self.ar1) < 1:
            raise ValueError("|ar1| must be < 1")
        if self.step <= 0:
            raise ValueError("step must be > 0")
        if any(h.period <= 0 for h in self.harmonics):
            raise ValueError("harmonic periods must be > 0")
        if not 0 <= self.spikes <= self.length:
            raise ValueError("spike count out of range")

    @property
    def noise_std(self) -> float:
        return self.sigma / math.sqrt(1.0 - self.ar1 ** 2)


def synthetic_signal(spec: SyntheticSpec, epochs: np.ndarray) -> np.ndarray:
    t = epochs - spec.start
    y = spec.offset + spec.trend * t
    for h in spec.harmonics:
        y = y + h.amplitude * np.sin(2 * np.pi * t / h.period + h.phase)
    return y


def generate_synthetic(spec: SyntheticSpec) -> TimeSeries:
    rng = np.random.default_rng(spec.seed)
    epochs = spec.start + spec.step * np.arange(spec.length)
    y = synthetic_signal(spec, epochs)
    eps = rng.standard_normal(spec.length)
    noise = np.empty(spec.length)
    noise[0] = spec.noise_std * eps[0]
    for i in range(1, spec.length):
        noise[i] = spec.ar1 * noise[i - 1] + spec.sigma * eps[i]
    y = y + noise
    if spec.spikes:
        where = rng.choice(spec.length, size=spec.spikes, replace=False)
        sign = rng.choice([-1.0, 1.0], size=spec.spikes)
        y[where] += sign * spec.spike_size * spec.noise_std
    return TimeSeries(spec.station_id, epochs, (spec.channel,), y[:, None],
                      np.ones((spec.length, 1), dtype=bool), (spec.unit,))


@dataclass(frozen=True)
class HeldOut:
    """Entries hidden by :func:`apply_random_mask`, with their true values."""

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return self.rows.size


def apply_random_mask(series: TimeSeries, fraction: float, seed: int) -> tuple[TimeSeries, HeldOut]:
    """Hide ``floor(fraction * observed)`` observed entries chosen uniformly."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    rows, cols = np.nonzero(series.mask)
    count = math.floor(fraction * rows.size)
    if count < 1:
        raise ValueError(f"fraction {fraction} of {rows.size} observed entries hides nothing")
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(rows.size, size=count, replace=False))
    r, c = rows[pick], cols[pick]
    mask = series.mask.copy()
    mask[r, c] = False
    held = HeldOut(r, c, series.values[r, c].copy())
    return series.replace(mask=mask), held
