"""Dataset model, CSV ingestion, labeled-prefix splitting, windowing, synthetic data.

Datasets are immutable after construction: every transform returns a new
instance, so concurrent readers never need locks.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, IngestError, SplitError
from .ndcore import make_rng

STD_FLOOR = 1e-8  # degenerate channels are clamped to this std


@dataclass(frozen=True)
class TimeSeriesDataset:
    """A length-T, C-channel real series with optional per-timestep 0/1 labels."""

    name: str
    values: np.ndarray  # (T, C) float64
    labels: np.ndarray | None = None  # (T,) int

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if values.ndim != 2:
            raise ConfigError(f"dataset values must be 2-D (T, C), got {values.ndim}-D")
        object.__setattr__(self, "values", values)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (values.shape[0],):
                raise ConfigError(
                    f"labels length {labels.shape} does not match T={values.shape[0]}"
                )
            if not np.all((labels == 0) | (labels == 1)):
                raise ConfigError("labels must be 0/1")
            object.__setattr__(self, "labels", labels)

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    @property
    def anomaly_rate(self) -> float:
        if self.labels is None:
            raise ConfigError(f"dataset '{self.name}' has no labels")
        return float(self.labels.sum()) / self.length


@dataclass(frozen=True)
class SplitResult:
    """Labeled-prefix split: train is [0, train_end), evaluation is [train_end, T)."""

    threshold: float
    train_end: int
    train_rate: float
    remaining_rate: float


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray  # (C,)
    std: np.ndarray  # (C,), floored at STD_FLOOR


@dataclass(frozen=True)
class WindowSet:
    """Fixed-width windows over a series; the tail window is always anchored at T-W."""

    window: int
    stride: int
    series_length: int
    starts: np.ndarray  # (N,)
    values: np.ndarray  # (N, W, C)
    labels: np.ndarray | None  # (N, W) or None

    def __len__(self) -> int:
        return len(self.starts)


@dataclass(frozen=True)
class AnomalyEvent:
    kind: str  # spike | level_shift | variance_burst
    start: int
    duration: int
    magnitude: float

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "start": self.start,
            "duration": self.duration,
            "magnitude": self.magnitude,
        }


ANOMALY_KINDS = ("spike", "level_shift", "variance_burst")


@dataclass(frozen=True)
class SyntheticSpec:
    """Deterministic recipe for a labeled synthetic series.

    The base signal mixes sinusoids with AR(1)-filtered Gaussian noise and has
    deliberate cross-channel structure, like co-located sensors: the first
    listed period is a shared component (one phase for all channels), and the
    noise is a shared AR(1) factor plus weaker per-channel AR(1) noise. Later
    periods get channel-specific phases.

    Anomalies ride the shared direction, so single timesteps stay close to the
    normal joint distribution and the interesting signal is temporal:

    - ``spike``: adds +-magnitude*noise_scale impulses to every channel at each
      step of the interval (sign drawn per step, biased 95% positive),
    - ``level_shift``: adds the constant offset ``magnitude`` to every channel
      over the interval,
    - ``variance_burst``: multiplies the shared noise factor's innovation scale
      by ``magnitude`` inside the interval, so the common level jitters.
    """

    T: int
    C: int
    seed: int
    sine_periods: tuple = (97.0, 223.0)
    ar_coeff: float = 0.6
    noise_scale: float = 0.3
    anomalies: tuple = field(default_factory=tuple)
    name: str = "synthetic"

    SPIKE_POSITIVE_PROB = 0.95

    def __post_init__(self):
        events = tuple(
            ev if isinstance(ev, AnomalyEvent) else AnomalyEvent(**ev) for ev in self.anomalies
        )
        object.__setattr__(self, "anomalies", events)
        object.__setattr__(self, "sine_periods", tuple(float(p) for p in self.sine_periods))
        if self.T < 1 or self.C < 1:
            raise ConfigError("synthetic spec needs T >= 1 and C >= 1")
        spans = []
        for ev in events:
            if ev.kind not in ANOMALY_KINDS:
                raise ConfigError(f"unknown anomaly kind '{ev.kind}'")
            if ev.duration < 1 or ev.start < 0 or ev.start + ev.duration > self.T:
                raise ConfigError(f"anomaly {ev} falls outside [0, {self.T})")
            spans.append((ev.start, ev.start + ev.duration))
        spans.sort()
        for (s0, e0), (s1, _) in zip(spans, spans[1:]):
            if s1 < e0:
                raise ConfigError(f"anomaly intervals overlap near t={s1}")

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "C": self.C,
            "seed": self.seed,
            "sine_periods": list(self.sine_periods),
            "ar_coeff": self.ar_coeff,
            "noise_scale": self.noise_scale,
            "anomalies": [ev.to_dict() for ev in self.anomalies],
            "name": self.name,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise IngestError(f"unknown synthetic spec fields: {sorted(extra)}")
        return cls(**doc)


def load_csv(path, label_column: str | None = "label") -> TimeSeriesDataset:
    """Load a header-ed CSV with one column per channel.

    The column named by ``label_column`` (when present) becomes the 0/1 label
    sequence; all other columns must parse as real numbers. Malformed input
    raises :class:`IngestError` naming the offending row and column.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise IngestError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        label_idx = None
        if label_column is not None and label_column in header:
            label_idx = header.index(label_column)
        chan_idx = [i for i in range(len(header)) if i != label_idx]
        if not chan_idx:
            raise IngestError(f"{path}: no value columns besides '{label_column}'")
        rows, labels = [], []
        for rownum, row in enumerate(reader, start=2):  # 1-based, header is row 1
            if len(row) != len(header):
                raise IngestError(
                    f"{path}: row {rownum}: expected {len(header)} cells, got {len(row)}"
                )
            vals = np.empty(len(chan_idx))
            for j, i in enumerate(chan_idx):
                try:
                    vals[j] = float(row[i])
                except ValueError:
                    raise IngestError(
                        f"{path}: row {rownum}, column '{header[i]}': "
                        f"non-numeric cell {row[i]!r}"
                    ) from None
            if label_idx is not None:
                cell = row[label_idx].strip()
                try:
                    lab = float(cell)
                except ValueError:
                    lab = -1.0
                if lab not in (0.0, 1.0):
                    raise IngestError(
                        f"{path}: row {rownum}, column '{header[label_idx]}': "
                        f"label must be 0 or 1, got {cell!r}"
                    )
                labels.append(int(lab))
            rows.append(vals)
    if not rows:
        raise IngestError(f"{path}: no data rows")
    name = os.path.splitext(os.path.basename(path))[0]
    return TimeSeriesDataset(
        name=name,
        values=np.vstack(rows),
        labels=np.array(labels, dtype=np.int64) if label_idx is not None else None,
    )


def write_csv(ds: TimeSeriesDataset, path, label_column: str = "label") -> None:
    """Inverse of :func:`load_csv`; floats are written with full repr precision."""
    with open(os.fspath(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = [f"ch{j}" for j in range(ds.channels)]
        if ds.labeled:
            header.append(label_column)
        writer.writerow(header)
        for t in range(ds.length):
            row = [repr(float(v)) for v in ds.values[t]]
            if ds.labeled:
                row.append(str(int(ds.labels[t])))
            writer.writerow(row)


def split_allowed(labels: np.ndarray, t: int) -> bool:
    """True when cutting at t does not bisect an anomaly event."""
    return not (labels[t - 1] == 1 and labels[t] == 1) if t < len(labels) else True


def prefix_split(ds: TimeSeriesDataset, threshold: float) -> SplitResult:
    """Smallest train prefix whose anomaly rate reaches ``threshold``.

    train_end is the smallest t in [1, T) such that the prefix anomaly rate
    sum(y[:t])/t is >= threshold and t does not cut an anomaly event (t sits
    at an event end or inside a normal run).
    """
    if not ds.labeled:
        raise SplitError(f"dataset '{ds.name}' has no labels; prefix split needs them")
    if not 0.0 < threshold < 1.0:
        raise SplitError(f"threshold must lie in (0, 1), got {threshold}")
    y = ds.labels
    if y.sum() == 0:
        raise SplitError(f"dataset '{ds.name}' contains no anomaly events")
    csum = np.cumsum(y)
    for t in range(1, ds.length):
        if csum[t - 1] / t >= threshold and split_allowed(y, t):
            train_mass = int(csum[t - 1])
            total = int(csum[-1])
            return SplitResult(
                threshold=threshold,
                train_end=t,
                train_rate=train_mass / t,
                remaining_rate=(total - train_mass) / (ds.length - t),
            )
    raise SplitError(
        f"no prefix of '{ds.name}' reaches anomaly rate {threshold} without cutting an event"
    )


def zscore_fit(ds: TimeSeriesDataset, segment: tuple[int, int]) -> NormStats:
    """Per-channel mean/std fitted on values[start:end); degenerate stds clamped."""
    start, end = segment
    if not 0 <= start < end <= ds.length:
        raise ConfigError(f"empty or out-of-range segment {segment} for T={ds.length}")
    seg = ds.values[start:end]
    return NormStats(mean=seg.mean(axis=0), std=np.maximum(seg.std(axis=0), STD_FLOOR))


def zscore_apply(ds: TimeSeriesDataset, stats: NormStats) -> TimeSeriesDataset:
    return TimeSeriesDataset(
        name=ds.name,
        values=(ds.values - stats.mean) / stats.std,
        labels=ds.labels,
    )


def window_starts(T: int, window: int, stride: int) -> np.ndarray:
    starts = list(range(0, T - window + 1, stride))
    if starts[-1] != T - window:  # tail window so T-1 is always covered
        starts.append(T - window)
    return np.asarray(starts, dtype=np.int64)


def make_windows(ds: TimeSeriesDataset, window: int, stride: int) -> WindowSet:
    if not 1 <= window <= ds.length:
        raise ConfigError(f"window {window} must lie in [1, T={ds.length}]")
    if not 1 <= stride <= window:
        raise ConfigError(f"stride {stride} must lie in [1, window={window}]")
    starts = window_starts(ds.length, window, stride)
    vals = np.stack([ds.values[s : s + window] for s in starts])
    labs = np.stack([ds.labels[s : s + window] for s in starts]) if ds.labeled else None
    return WindowSet(
        window=window,
        stride=stride,
        series_length=ds.length,
        starts=starts,
        values=vals,
        labels=labs,
    )


def reassemble(ws: WindowSet, window_scores: np.ndarray) -> np.ndarray:
    """Average per-window score rows back into a length-T sequence.

    Every timestep is covered by at least one window, so the mean is always
    defined.
    """
    window_scores = np.asarray(window_scores, dtype=np.float64)
    if window_scores.shape != (len(ws.starts), ws.window):
        raise ConfigError(
            f"score rows {window_scores.shape} do not match windows "
            f"({len(ws.starts)}, {ws.window})"
        )
    total = np.zeros(ws.series_length)
    count = np.zeros(ws.series_length)
    for s, row in zip(ws.starts, window_scores):
        total[s : s + ws.window] += row
        count[s : s + ws.window] += 1.0
    return total / count


def generate_synthetic(spec: SyntheticSpec) -> TimeSeriesDataset:
    """Materialize a spec into a labeled dataset, bitwise-deterministic in (spec, seed)."""
    rng = make_rng(spec.seed)
    T, C = spec.T, spec.C
    t = np.arange(T)[:, None]

    base = np.zeros((T, C))
    for k, period in enumerate(spec.sine_periods):
        if k == 0:
            amps = rng.uniform(1.0, 1.2, size=C)
            phases = np.full(C, rng.uniform(0.0, 2.0 * np.pi))
        else:
            amps = rng.uniform(0.4, 0.7, size=C)
            phases = rng.uniform(0.0, 2.0 * np.pi, size=C)
        base += amps * np.sin(2.0 * np.pi * t / period + phases)

    # Shared AR(1) factor; variance bursts scale its innovations in place.
    shared_scale = np.full(T, spec.noise_scale)
    for ev in spec.anomalies:
        if ev.kind == "variance_burst":
            shared_scale[ev.start : ev.start + ev.duration] *= ev.magnitude
    shared_innov = rng.standard_normal(T) * shared_scale
    shared = np.empty(T)
    level = 0.0
    for i in range(T):
        level = spec.ar_coeff * level + shared_innov[i]
        shared[i] = level
    # Weaker per-channel AR(1) noise on top of the shared factor.
    chan_innov = rng.standard_normal((T, C)) * (0.5 * spec.noise_scale)
    chan_noise = np.empty((T, C))
    prev = np.zeros(C)
    for i in range(T):
        prev = spec.ar_coeff * prev + chan_innov[i]
        chan_noise[i] = prev
    values = base + shared[:, None] + chan_noise

    labels = np.zeros(T, dtype=np.int64)
    for ev in spec.anomalies:
        sl = slice(ev.start, ev.start + ev.duration)
        labels[sl] = 1
        if ev.kind == "spike":
            signs = np.where(
                rng.uniform(size=ev.duration) < spec.SPIKE_POSITIVE_PROB, 1.0, -1.0
            )
            values[sl] += (signs * ev.magnitude * spec.noise_scale)[:, None]
        elif ev.kind == "level_shift":
            values[sl] += ev.magnitude
    return TimeSeriesDataset(name=spec.name, values=values, labels=labels)
