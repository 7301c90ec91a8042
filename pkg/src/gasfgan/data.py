"""Sensor flow ingestion, day-class/train-test splitting and corruption masks.

Raw CSV layout (UTF-8, header row required)::

    timestamp,sensor_id,flow
    2013-01-01T00:00:00,500010102,37
    2013-01-01T00:05:00,500010102,41

``timestamp`` is ISO-8601 and must fall on the fixed grid of ``1440 / T``
minutes (5 minutes for T=288); ``flow`` is a non-negative integer count.
Rows for other sensors are ignored by :func:`load_sensor_csv`.
"""
from __future__ import annotations

import csv
import datetime as dt
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from gasfgan._archive import read_archive, write_archive
from gasfgan.errors import ConflictError, DataError, ParseError

DEFAULT_T = 288
DATASET_SCHEMA_VERSION = 1

WEEKDAY = "weekday"
NON_WEEKDAY = "nonweekday"
DAY_CLASSES = (WEEKDAY, NON_WEEKDAY)


@dataclass(frozen=True, eq=False)
class DailySeries:
    """One sensor-day of flow counts.

    ``mask[t] == 1`` means observed. ``truth`` holds the original values of a
    series corrupted on purpose; it is ``None`` for real gaps.
    """
    sensor_id: str
    day: dt.date
    values: np.ndarray
    mask: np.ndarray
    truth: np.ndarray | None = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        mask = np.asarray(self.mask)
        if values.ndim != 1 or mask.shape != values.shape:
            raise DataError(
                f"values and mask must be 1-D of equal length, got "
                f"{values.shape} and {mask.shape}")
        if not np.isin(mask, (0, 1)).all():
            raise DataError("mask entries must be 0 or 1")
        mask = mask.astype(np.uint8)
        obs = values[mask == 1]
        if not np.isfinite(obs).all() or (obs < 0).any():
            raise DataError(
                f"{self.sensor_id} {self.day}: observed values must be finite "
                f"and non-negative")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        if self.truth is not None:
            truth = np.asarray(self.truth, dtype=np.float64)
            if truth.shape != values.shape:
                raise DataError("truth must match values in length")
            object.__setattr__(self, "truth", truth)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())

    @property
    def fully_observed(self) -> bool:
        return self.n_observed == self.T

    @property
    def ground_truth(self) -> np.ndarray:
        return self.values if self.truth is None else self.truth

    def __eq__(self, other):
        if not isinstance(other, DailySeries):
            return NotImplemented
        if (self.sensor_id, self.day) != (other.sensor_id, other.day):
            return False
        if (self.truth is None) != (other.truth is None):
            return False
        same_truth = self.truth is None or np.array_equal(self.truth, other.truth)
        return (np.array_equal(self.values, other.values)
                and np.array_equal(self.mask, other.mask) and same_truth)

    __hash__ = None


@dataclass
class SensorDataset:
    sensor_id: str
    fully_observed: list[DailySeries]
    corrupted: list[DailySeries]
    day_class: str

    def __post_init__(self):
        if self.day_class not in DAY_CLASSES:
            raise DataError(f"unknown day class {self.day_class!r}")
        for s in self.fully_observed:
            if not s.fully_observed:
                raise DataError(f"{s.day} has gaps but is in fully_observed")
        for s in self.corrupted:
            if s.fully_observed:
                raise DataError(f"{s.day} has no gaps but is in corrupted")


@dataclass(frozen=True)
class CorruptionSpec:
    missing_rate: float
    seed: int = 0
    scheme: str = "uniform"

    def __post_init__(self):
        if not 0.0 <= self.missing_rate < 1.0:
            raise DataError(f"missing_rate must lie in [0, 1), got {self.missing_rate}")
        if self.scheme != "uniform":
            raise DataError(f"unsupported corruption scheme {self.scheme!r}")


def _parse_timestamp(text, step, path, lineno):
    try:
        ts = dt.datetime.fromisoformat(text.strip())
    except ValueError:
        raise ParseError(f"bad timestamp {text!r}", path, lineno) from None
    minutes = ts.hour * 60 + ts.minute
    if ts.second or ts.microsecond or minutes % step:
        raise ParseError(f"timestamp {text!r} is off the {step}-minute grid",
                         path, lineno)
    return ts.date(), minutes // step


def _parse_flow(text, path, lineno):
    try:
        flow = int(text.strip())
    except ValueError:
        raise ParseError(f"flow {text!r} is not an integer", path, lineno) from None
    if flow < 0:
        raise ParseError(f"negative flow {flow}", path, lineno)
    return flow


def read_flow_csv(path, T: int = DEFAULT_T, sensor_id=None):
    """Parse the raw CSV into ``{sensor_id: {day: {slot: flow}}}``."""
    if 1440 % T:
        raise DataError(f"T={T} does not divide a 1440-minute day")
    step = 1440 // T
    out = defaultdict(lambda: defaultdict(dict))
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return {}
        if [h.strip() for h in header] != ["timestamp", "sensor_id", "flow"]:
            raise ParseError(f"expected header timestamp,sensor_id,flow, got {header}",
                             path, 1)
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 columns, got {len(row)}", path, lineno)
            sid = row[1].strip()
            if sensor_id is not None and sid != str(sensor_id):
                continue
            day, slot = _parse_timestamp(row[0], step, path, lineno)
            flow = _parse_flow(row[2], path, lineno)
            slots = out[sid][day]
            if slot in slots:
                raise ConflictError(
                    f"{path}:{lineno}: duplicate record for sensor {sid} at {row[0].strip()}")
            slots[slot] = flow
    return out


def _assemble(sid, days, T):
    series = []
    for day in sorted(days):
        slots = days[day]
        values = np.zeros(T)
        mask = np.zeros(T, dtype=np.uint8)
        for slot, flow in slots.items():
            values[slot] = flow
            mask[slot] = 1
        series.append(DailySeries(sid, day, values, mask))
    return series


def load_sensor_csv(path, sensor_id, T: int = DEFAULT_T) -> list[DailySeries]:
    """Daily vectors for one sensor; absent slots get mask 0 and value 0."""
    parsed = read_flow_csv(path, T, sensor_id=sensor_id)
    days = parsed.get(str(sensor_id), {})
    return _assemble(str(sensor_id), days, T)


def load_all_sensors(path, T: int = DEFAULT_T) -> dict[str, list[DailySeries]]:
    parsed = read_flow_csv(path, T)
    return {sid: _assemble(sid, days, T) for sid, days in sorted(parsed.items())}


def day_class_of(day: dt.date, holidays=frozenset()) -> str:
    if day.weekday() >= 5 or day in holidays:
        return NON_WEEKDAY
    return WEEKDAY


def split_day_classes(series, holidays=None):
    """Partition into (weekday, non_weekday).

    Saturdays and Sundays are non-weekdays. Dates listed in ``holidays`` are
    also routed to the non-weekday class.
    """
    holidays = frozenset(holidays or ())
    weekday, non_weekday = [], []
    for s in series:
        if day_class_of(s.day, holidays) == WEEKDAY:
            weekday.append(s)
        else:
            non_weekday.append(s)
    return weekday, non_weekday


def partition_observed(sensor_id, series, day_class) -> SensorDataset:
    """Split a sensor's days into fully observed and corrupted subsets."""
    full = [s for s in series if s.fully_observed]
    partial = [s for s in series if not s.fully_observed]
    return SensorDataset(sensor_id, full, partial, day_class)


def train_test_split(series, ratio: float = 0.8, seed: int = 0):
    """Seeded random split; ``floor(ratio * n)`` items go to train.

    Both halves keep the input order.
    """
    series = list(series)
    if not series:
        raise DataError("cannot split an empty list")
    if not 0.0 < ratio < 1.0:
        raise DataError(f"ratio must lie in (0, 1), got {ratio}")
    n = len(series)
    n_train = int(math.floor(ratio * n + 1e-9))
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = set(perm[:n_train].tolist())
    train = [s for i, s in enumerate(series) if i in train_idx]
    test = [s for i, s in enumerate(series) if i not in train_idx]
    return train, test


def n_corrupted(missing_rate: float, T: int) -> int:
    # round half up; python's round() is banker's rounding
    return int(math.floor(missing_rate * T + 0.5))


def corrupt(series: DailySeries, spec: CorruptionSpec) -> DailySeries:
    """Withhold exactly ``round(missing_rate * T)`` uniformly chosen slots.

    Withheld slots get mask 0 and value 0; the original values travel along
    in ``truth``.
    """
    if not series.fully_observed:
        raise DataError(f"{series.sensor_id} {series.day}: can only corrupt "
                        f"fully observed days")
    k = n_corrupted(spec.missing_rate, series.T)
    if k == 0:
        return series
    rng = np.random.default_rng(spec.seed)
    idx = rng.choice(series.T, size=k, replace=False)
    mask = series.mask.copy()
    mask[idx] = 0
    values = series.values.copy()
    values[idx] = 0.0
    return DailySeries(series.sensor_id, series.day, values, mask,
                       truth=series.values.copy())


def with_mask(series: DailySeries, mask) -> DailySeries:
    return replace(series, mask=np.asarray(mask))


def save_series(path, series, meta=None):
    """Write series to a columnar archive.

    Columns: ``sensor_id`` (str), ``day`` (ISO date str), ``values`` (N x T
    float64), ``mask`` (N x T uint8), ``truth`` (N x T float64, NaN rows when
    no ground truth). The manifest carries ``schema_version`` and ``T``.
    """
    series = list(series)
    T = series[0].T if series else 0
    n = len(series)
    truth = np.full((n, T), np.nan)
    for i, s in enumerate(series):
        if s.truth is not None:
            truth[i] = s.truth
    manifest = {"schema_version": DATASET_SCHEMA_VERSION, "kind": "daily_series",
                "T": T, "count": n, "meta": meta or {}}
    arrays = {
        "sensor_id": np.array([s.sensor_id for s in series], dtype=str),
        "day": np.array([s.day.isoformat() for s in series], dtype=str),
        "values": np.array([s.values for s in series]).reshape(n, T),
        "mask": np.array([s.mask for s in series], dtype=np.uint8).reshape(n, T),
        "truth": truth,
    }
    write_archive(path, manifest, arrays)


def load_series(path) -> list[DailySeries]:
    manifest, arrays, _ = read_archive(path)
    if manifest.get("schema_version") != DATASET_SCHEMA_VERSION:
        raise DataError(f"{path}: unsupported dataset schema "
                        f"{manifest.get('schema_version')}")
    out = []
    for i in range(manifest["count"]):
        truth = arrays["truth"][i]
        out.append(DailySeries(
            str(arrays["sensor_id"][i]),
            dt.date.fromisoformat(str(arrays["day"][i])),
            arrays["values"][i], arrays["mask"][i],
            truth=None if np.isnan(truth).all() else truth))
    return out


def write_flow_csv(path, series):
    """Inverse of :func:`read_flow_csv`; only observed slots are written."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "sensor_id", "flow"])
        for s in series:
            step = 1440 // s.T
            start = dt.datetime.combine(s.day, dt.time())
            for t in np.flatnonzero(s.mask):
                ts = start + dt.timedelta(minutes=int(t) * step)
                w.writerow([ts.isoformat(), s.sensor_id, int(round(s.values[t]))])
