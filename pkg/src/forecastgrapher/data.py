"""Loading, splitting, standardizing and windowing multivariate series."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterator

import numpy as np

from .tensor import ConfigError

STD_FLOOR = 1e-8
NAIVE_PERIOD = 24

FREQUENCIES = {
    "5min": timedelta(minutes=5),
    "10min": timedelta(minutes=10),
    "15min": timedelta(minutes=15),
    "hourly": timedelta(hours=1),
    "daily": timedelta(days=1),
}

_DATE_FORMATS = ("%Y/%m/%d %H:%M", "%Y/%m/%d %H:%M:%S", "%Y/%m/%d", "%m/%d/%Y %H:%M")


class DataError(ValueError):
    """Raised when an input file is malformed."""


@dataclass(frozen=True)
class RawSeries:
    timestamps: list[datetime]
    values: np.ndarray  # (T_total, N)
    variate_names: list[str]
    frequency: str

    @property
    def n_variates(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class SplitSpec:
    """Row lengths of the train/val/test blocks.

    ``context`` leading rows of the preceding block are prepended to the
    val and test slices so their first windows can be anchored at the
    block boundary.
    """

    train_len: int
    val_len: int
    test_len: int
    context: int = 0

    def __post_init__(self):
        for name in ("train_len", "val_len", "test_len"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.context < 0:
            raise ConfigError("context must be non-negative")


@dataclass(frozen=True)
class SeriesSlice:
    """A contiguous block of rows; ``start`` and ``stop`` index the parent series."""

    values: np.ndarray
    timestamps: list[datetime]
    start: int
    stop: int
    context: int = 0

    def __len__(self) -> int:
        return self.values.shape[0]

    def window_count(self, h: int, s: int = 0) -> int:
        return max(0, len(self) - h - s + 1)


@dataclass(frozen=True)
class DatasetPreset:
    name: str
    n_variates: int
    frequency: str
    total_rows: int
    split_rule: str  # "ett_hour", "ett_minute", "custom", "pems"
    published_counts: tuple[int, int, int]
    horizons: tuple[int, ...]
    global_standardize: bool = True
    instance_norm: bool = True
    use_hid: bool = True
    use_diw: bool = True
    # published window counts are rows - h + 1, except where the source counted
    # with a forecast horizon subtracted as well
    count_horizon: int = 0
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def split_spec(self, total_rows: int | None = None, h: int = 96) -> SplitSpec:
        return preset_split_spec(self.split_rule, total_rows or self.total_rows, h)


def _hparams(layers, d, z, lr, c=10, batch=32):
    return (
        {"layers": layers, "embed_dim": d, "scalers": z, "groups": 4,
         "kernel_lengths": [3, 5, 7], "factor_dim": c},
        {"epochs": 10, "batch_size": batch, "learning_rate": lr},
    )


def _preset(name, n, freq, rows, rule, counts, hparams, horizons=(96, 192, 336, 720), **kw):
    model, train = hparams
    return DatasetPreset(name, n, freq, rows, rule, counts, horizons, model=model, train=train, **kw)


_PEMS = dict(horizons=(12, 24, 48, 96), global_standardize=False, instance_norm=False,
             use_hid=False, use_diw=False)

PRESETS: dict[str, DatasetPreset] = {
    p.name: p
    for p in [
        _preset("etth1", 7, "hourly", 17420, "ett_hour", (8545, 2881, 2881), _hparams(2, 128, 32, 1e-4)),
        _preset("etth2", 7, "hourly", 17420, "ett_hour", (8545, 2881, 2881), _hparams(1, 512, 32, 1e-4)),
        _preset("ettm1", 7, "15min", 69680, "ett_minute", (34465, 11521, 11521), _hparams(1, 512, 32, 1e-4)),
        _preset("ettm2", 7, "15min", 69680, "ett_minute", (34465, 11521, 11521), _hparams(1, 512, 32, 1e-4)),
        _preset("electricity", 321, "hourly", 26304, "custom", (18317, 2633, 5261), _hparams(8, 512, 8, 5e-4)),
        _preset("exchange", 8, "daily", 7588, "custom", (5120, 665, 1422), _hparams(1, 128, 8, 1e-4),
                use_hid=False, count_horizon=96),
        _preset("traffic", 862, "hourly", 17544, "custom", (12185, 1757, 3590),
                _hparams(8, 512, 8, 1e-3, c=1000, batch=16)),
        _preset("weather", 21, "10min", 52696, "custom", (36792, 5271, 10540), _hparams(6, 512, 32, 1e-4)),
        _preset("pems03", 358, "5min", 26208, "pems", (15629, 5147, 5147), _hparams(6, 512, 8, 1e-3), **_PEMS),
        _preset("pems04", 307, "5min", 16992, "pems", (10100, 3303, 3304), _hparams(9, 512, 8, 5e-4), **_PEMS),
        _preset("pems07", 883, "5min", 28224, "pems", (16839, 5550, 5550), _hparams(6, 512, 8, 1e-3), **_PEMS),
        _preset("pems08", 170, "5min", 17856, "pems", (10618, 3476, 3477), _hparams(6, 512, 8, 1e-3), **_PEMS),
    ]
}


def get_preset(name: str) -> DatasetPreset:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def preset_split_spec(rule: str, total_rows: int, h: int = 96) -> SplitSpec:
    """Row split used by the common benchmark loaders for each dataset family."""
    if rule == "ett_hour":
        month = 30 * 24
        return SplitSpec(12 * month, 4 * month, 4 * month, context=h)
    if rule == "ett_minute":
        month = 30 * 24 * 4
        return SplitSpec(12 * month, 4 * month, 4 * month, context=h)
    if rule == "custom":
        n_train = int(total_rows * 0.7)
        n_test = int(total_rows * 0.2)
        return SplitSpec(n_train, total_rows - n_train - n_test, n_test, context=h)
    if rule == "pems":
        n_train = int(total_rows * 0.6)
        n_val_end = int(total_rows * 0.8)
        return SplitSpec(n_train, n_val_end - n_train, total_rows - n_val_end, context=0)
    raise ConfigError(f"unknown split rule {rule!r}")


def split_window_counts(parts, h: int = 96, s: int = 0) -> tuple[int, ...]:
    return tuple(p.window_count(h, s) for p in parts)


# ---------------------------------------------------------------------------
# loading


def _parse_datetime(text: str) -> datetime:
    text = text.strip()
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        pass
    for fmt in _DATE_FORMATS:
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            continue
    raise ValueError(f"unparsable datetime {text!r}")


def load_csv(path) -> RawSeries:
    """Read an ETT-style CSV: a ``date`` column followed by numeric variates."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2 or header[0].strip().lower() != "date":
            raise DataError(f"{path}: header must start with 'date' and name at least one variate")
        n_cols = len(header)
        stamps: list[datetime] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_cols:
                raise DataError(f"{path}: row {lineno}: expected {n_cols} cells, got {len(row)}")
            try:
                stamps.append(_parse_datetime(row[0]))
            except ValueError as exc:
                raise DataError(f"{path}: row {lineno}: {exc}") from None
            try:
                vals = [float(cell) for cell in row[1:]]
            except ValueError:
                raise DataError(f"{path}: row {lineno}: non-numeric or blank cell") from None
            if not np.all(np.isfinite(vals)):
                raise DataError(f"{path}: row {lineno}: missing value")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    frequency = _infer_frequency(stamps, path)
    return RawSeries(stamps, np.asarray(rows, dtype=np.float64), [h.strip() for h in header[1:]], frequency)


def _infer_frequency(stamps: list[datetime], path) -> str:
    if len(stamps) < 2:
        return "hourly"
    step = stamps[1] - stamps[0]
    names = [k for k, v in FREQUENCIES.items() if v == step]
    if not names:
        raise DataError(f"{path}: row 3: unsupported sampling interval {step}")
    for i in range(1, len(stamps)):
        if stamps[i] - stamps[i - 1] != step:
            raise DataError(f"{path}: row {i + 2}: irregular spacing {stamps[i] - stamps[i - 1]} (expected {step})")
    return names[0]


# ---------------------------------------------------------------------------
# splitting and scaling


def chronological_split(raw: RawSeries, spec: SplitSpec) -> tuple[SeriesSlice, SeriesSlice, SeriesSlice]:
    """Cut the series into ordered train/val/test blocks."""
    total = spec.train_len + spec.val_len + spec.test_len
    if total > len(raw):
        raise ConfigError(f"split {spec.train_len}+{spec.val_len}+{spec.test_len}={total} exceeds {len(raw)} rows")
    bounds = [0, spec.train_len, spec.train_len + spec.val_len, total]
    out = []
    for i in range(3):
        ctx = 0 if i == 0 else min(spec.context, bounds[i])
        lo, hi = bounds[i] - ctx, bounds[i + 1]
        out.append(SeriesSlice(raw.values[lo:hi], raw.timestamps[lo:hi], bounds[i], hi, ctx))
    return tuple(out)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    enabled: bool = True

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


def fit_standardizer(train: SeriesSlice | np.ndarray, enabled: bool = True) -> Standardizer:
    """Per-variate population mean/std over the training rows only."""
    values = train.values[train.context:] if isinstance(train, SeriesSlice) else np.asarray(train, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] == 0:
        raise ConfigError("cannot fit a standardizer on an empty slice")
    n = values.shape[1]
    if not enabled:
        return Standardizer(np.zeros(n), np.ones(n), enabled=False)
    return Standardizer(values.mean(axis=0), np.maximum(values.std(axis=0), STD_FLOOR), enabled=True)


def standardize_slice(part: SeriesSlice, scaler: Standardizer) -> SeriesSlice:
    return SeriesSlice(scaler.transform(part.values), part.timestamps, part.start, part.stop, part.context)


# ---------------------------------------------------------------------------
# windows


def calendar_indices(ts: datetime) -> tuple[int, int]:
    """Hour of day (sub-hourly stamps floor to the hour) and weekday, Monday=0."""
    return ts.hour, ts.weekday()


@dataclass(frozen=True)
class WindowSample:
    x: np.ndarray  # (N, h)
    y: np.ndarray  # (N, S)
    hid_index: int
    diw_index: int
    t_anchor: int


def window_iter(part: SeriesSlice, h: int = 96, s: int = 96, stride: int = 1) -> Iterator[WindowSample]:
    """Yield every (input, target) pair; ``t_anchor`` is the last input row within ``part``."""
    for i in range(0, part.window_count(h, s), stride):
        hid, diw = calendar_indices(part.timestamps[i + h - 1])
        yield WindowSample(part.values[i:i + h].T, part.values[i + h:i + h + s].T, hid, diw, i + h - 1)


@dataclass
class WindowBatch:
    x: np.ndarray  # (B, N, h)
    y: np.ndarray  # (B, N, S)
    hid: np.ndarray  # (B,)
    diw: np.ndarray  # (B,)

    def __len__(self) -> int:
        return self.x.shape[0]


class WindowSet:
    """All windows of one slice held as stacked arrays, for batched access."""

    def __init__(self, part: SeriesSlice, h: int, s: int):
        self.h, self.s = h, s
        n = part.window_count(h, s)
        self.n = n
        vals = part.values
        if n:
            starts = np.arange(n)
            self._xi = starts[:, None] + np.arange(h)[None, :]
            self._yi = starts[:, None] + h + np.arange(s)[None, :]
            cal = [calendar_indices(part.timestamps[i + h - 1]) for i in range(n)]
            self.hid = np.array([c[0] for c in cal], dtype=np.int64)
            self.diw = np.array([c[1] for c in cal], dtype=np.int64)
        else:
            self._xi = np.zeros((0, h), dtype=np.int64)
            self._yi = np.zeros((0, s), dtype=np.int64)
            self.hid = self.diw = np.zeros(0, dtype=np.int64)
        self._values = vals

    def __len__(self) -> int:
        return self.n

    def batch(self, idx) -> WindowBatch:
        idx = np.asarray(idx, dtype=np.int64)
        x = self._values[self._xi[idx]].transpose(0, 2, 1)
        y = self._values[self._yi[idx]].transpose(0, 2, 1)
        return WindowBatch(x, y, self.hid[idx], self.diw[idx])

    def batches(self, batch_size: int, order=None) -> Iterator[WindowBatch]:
        order = np.arange(self.n) if order is None else order
        for lo in range(0, self.n, batch_size):
            yield self.batch(order[lo:lo + batch_size])


def naive_forecast(x: np.ndarray, s: int) -> np.ndarray:
    """Repeat the last 24 input steps periodically: out[..., i] = x[..., h - 24 + i % 24]."""
    x = np.asarray(x)
    h = x.shape[-1]
    if h < NAIVE_PERIOD:
        raise ConfigError(f"naive baseline needs h >= {NAIVE_PERIOD}, got {h}")
    idx = h - NAIVE_PERIOD + (np.arange(s) % NAIVE_PERIOD)
    return x[..., idx]
