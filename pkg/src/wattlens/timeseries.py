"""Ingestion, normalization, windowing, and correlation-based feature ranking.

Everything here is deterministic and all returned arrays are frozen
(read-only), so values can be shared across threads without copying.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import (
    ConstantInputError,
    DuplicateTimestampError,
    EmptyFileError,
    KTooLargeError,
    MissingColumnError,
    UnknownTargetError,
    UnparsableValueError,
    WindowTooLongError,
)

# Floor applied to per-feature standard deviations so constant columns
# stay invertible without dividing by zero.
STD_FLOOR = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FeatureMatrix:
    """Aligned multi-feature time series.

    ``values`` is a dense (N, F) float64 array; row i is the measurement at
    ``timestamps[i]`` (epoch seconds, strictly increasing). Hourly spacing is
    expected but not enforced.
    """

    timestamps: np.ndarray
    feature_names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        ts = _frozen(np.array(self.timestamps, dtype=np.float64))
        vals = _frozen(np.array(self.values, dtype=np.float64))
        names = tuple(str(n) for n in self.feature_names)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "values", vals)
        if ts.ndim != 1:
            raise ValueError("timestamps must be 1-D")
        if vals.ndim != 2 or vals.shape != (ts.shape[0], len(names)):
            raise ValueError(
                f"values shape {vals.shape} inconsistent with "
                f"{ts.shape[0]} timestamps and {len(names)} features"
            )
        if len(set(names)) != len(names):
            raise ValueError("duplicate feature names")
        if ts.size > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(vals)):
            raise ValueError("values must be finite")

    @property
    def row_count(self) -> int:
        return int(self.values.shape[0])

    def feature_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise MissingColumnError(
                f"feature {name!r} not in {list(self.feature_names)}"
            ) from None

    def column(self, name: str) -> np.ndarray:
        """Read-only 1-D view of one feature."""
        return self.values[:, self.feature_index(name)]


@dataclass(frozen=True)
class CsvSchema:
    """Ingestion configuration for :func:`load_csv`.

    ``feature_columns=None`` selects every non-timestamp column. With
    ``forward_fill`` enabled, empty or non-finite cells are filled from the
    previous row (in time order) instead of aborting ingestion.
    """

    timestamp_column: str = "timestamp"
    feature_columns: tuple[str, ...] | None = None
    forward_fill: bool = False


def _parse_timestamp(text: str, epoch_mode: bool) -> float:
    if epoch_mode:
        return float(text)
    s = text.strip()
    # Python 3.10 fromisoformat does not accept a trailing Z.
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _looks_like_epoch(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def load_csv(path: str | Path, schema: CsvSchema = CsvSchema()) -> FeatureMatrix:
    """Parse a CSV file into a :class:`FeatureMatrix`.

    The first row must be a header naming the timestamp column plus at least
    one numeric column. Timestamps may be RFC 3339 strings or epoch seconds
    (auto-detected from the first data row). Rows are sorted by timestamp;
    duplicates are rejected. Cells that are empty or not finite numbers abort
    ingestion with their location unless ``schema.forward_fill`` is set.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFileError(f"{path}: no header row") from None
        rows = [row for row in reader if row]

    header = [h.strip() for h in header]
    if not rows:
        raise EmptyFileError(f"{path}: no data rows")

    if schema.timestamp_column not in header:
        raise MissingColumnError(
            f"timestamp column {schema.timestamp_column!r} not in header {header}"
        )
    ts_idx = header.index(schema.timestamp_column)

    if schema.feature_columns is None:
        feature_names = tuple(h for h in header if h != schema.timestamp_column)
    else:
        feature_names = tuple(schema.feature_columns)
        for name in feature_names:
            if name not in header:
                raise MissingColumnError(f"feature column {name!r} not in header {header}")
    if not feature_names:
        raise MissingColumnError("header names no feature columns")
    col_idx = [header.index(n) for n in feature_names]

    epoch_mode = _looks_like_epoch(rows[0][ts_idx])
    n, f = len(rows), len(feature_names)
    timestamps = np.empty(n)
    values = np.empty((n, f))
    missing = np.zeros((n, f), dtype=bool)

    for r, row in enumerate(rows):
        file_row = r + 1  # 1-based data row, header excluded
        if len(row) < len(header):
            raise UnparsableValueError(file_row, schema.timestamp_column, "short row")
        try:
            timestamps[r] = _parse_timestamp(row[ts_idx], epoch_mode)
        except ValueError as exc:
            raise UnparsableValueError(file_row, schema.timestamp_column, str(exc)) from None
        for c, (name, idx) in enumerate(zip(feature_names, col_idx)):
            cell = row[idx].strip()
            if not cell:
                missing[r, c] = True
                continue
            try:
                v = float(cell)
            except ValueError:
                raise UnparsableValueError(file_row, name) from None
            if not math.isfinite(v):
                missing[r, c] = True
            else:
                values[r, c] = v

    order = np.argsort(timestamps, kind="stable")
    timestamps = timestamps[order]
    values = values[order]
    missing = missing[order]
    file_rows = (order + 1).tolist()

    dup = np.flatnonzero(np.diff(timestamps) == 0)
    if dup.size:
        raise DuplicateTimestampError(
            f"duplicate timestamp at data rows {file_rows[dup[0]]} and {file_rows[dup[0] + 1]}"
        )

    if missing.any():
        for r in range(n):
            for c in np.flatnonzero(missing[r]):
                if not schema.forward_fill or r == 0:
                    raise UnparsableValueError(
                        file_rows[r], feature_names[c], "missing or non-finite"
                    )
                values[r, c] = values[r - 1, c]

    return FeatureMatrix(timestamps, feature_names, values)


@dataclass(frozen=True)
class NormalizationParams:
    """Per-feature mean/std fitted by :func:`zscore_normalize`.

    Standard deviations are floored at ``STD_FLOOR``; for constant columns
    the mean is pinned to the constant value so the transform maps them to
    exact zeros.
    """

    feature_names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "mean", _frozen(np.array(self.mean, dtype=np.float64)))
        object.__setattr__(self, "std", _frozen(np.array(self.std, dtype=np.float64)))
        if self.mean.shape != (len(self.feature_names),) or self.std.shape != self.mean.shape:
            raise ValueError("mean/std shapes inconsistent with feature names")
        if np.any(self.std < STD_FLOOR):
            raise ValueError(f"std below floor {STD_FLOOR}")

    def _index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise MissingColumnError(f"no normalization params for feature {name!r}") from None

    def transform_column(self, name: str, values: np.ndarray) -> np.ndarray:
        i = self._index(name)
        return (np.asarray(values, dtype=np.float64) - self.mean[i]) / self.std[i]

    def invert_column(self, name: str, values: np.ndarray) -> np.ndarray:
        i = self._index(name)
        return np.asarray(values, dtype=np.float64) * self.std[i] + self.mean[i]

    def transform(self, m: FeatureMatrix) -> FeatureMatrix:
        cols = [self.transform_column(n, m.column(n)) for n in self.feature_names]
        return FeatureMatrix(m.timestamps, self.feature_names, np.column_stack(cols))

    def invert(self, m: FeatureMatrix) -> FeatureMatrix:
        cols = [self.invert_column(n, m.column(n)) for n in self.feature_names]
        return FeatureMatrix(m.timestamps, self.feature_names, np.column_stack(cols))


def zscore_normalize(m: FeatureMatrix) -> tuple[FeatureMatrix, NormalizationParams]:
    """Standardize each column to sample mean 0 and sample std 1 (ddof=1).

    Constant columns map to all-zeros with their std clamped at the floor;
    non-constant columns invert exactly through the returned params.
    """
    if m.row_count == 0:
        raise ValueError("matrix is empty")
    vals = m.values
    mean = vals.mean(axis=0)
    constant = vals.max(axis=0) == vals.min(axis=0)
    # Pinning the mean to the constant value makes (x - mean) exactly zero,
    # which the floored std then preserves.
    mean = np.where(constant, vals[0], mean)
    if m.row_count > 1:
        std = vals.std(axis=0, ddof=1)
    else:
        std = np.zeros(vals.shape[1])
    std = np.where(constant | (std < STD_FLOOR), STD_FLOOR, std)
    params = NormalizationParams(m.feature_names, mean, std)
    return params.transform(m), params


def pearson_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation coefficient of two equal-length vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"expected equal-length 1-D arrays, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise ValueError("need at least 2 samples")
    ac = a - a.mean()
    bc = b - b.mean()
    ssa = float(ac @ ac)
    ssb = float(bc @ bc)
    if ssa == 0.0 or ssb == 0.0:
        raise ConstantInputError("correlation undefined for constant input")
    return float(ac @ bc) / math.sqrt(ssa * ssb)


@dataclass(frozen=True)
class FeatureRanking:
    """Features ordered by |correlation| against a target, best first."""

    target: str
    entries: tuple[tuple[str, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple((str(n), float(s)) for n, s in self.entries))
        scores = [s for _, s in self.entries]
        if any(s < 0.0 or s > 1.0 for s in scores):
            raise ValueError("scores must lie in [0, 1]")
        if any(scores[i] < scores[i + 1] for i in range(len(scores) - 1)):
            raise ValueError("entries must be sorted non-increasing by score")

    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


def select_features(m: FeatureMatrix, target: str, k: int) -> FeatureRanking:
    """Rank the k non-target features most correlated (in |Pearson|) with target.

    Ties break by ascending feature name; constant features score 0.
    """
    if target not in m.feature_names:
        raise UnknownTargetError(f"target {target!r} not in {list(m.feature_names)}")
    others = [n for n in m.feature_names if n != target]
    if k > len(others):
        raise KTooLargeError(f"k={k} but only {len(others)} non-target features")
    if k < 0:
        raise ValueError("k must be >= 0")
    t = m.column(target)
    if t.size >= 1 and t.max() == t.min():
        raise ConstantInputError(f"target {target!r} is constant")
    scored = []
    for name in others:
        col = m.column(name)
        if col.max() == col.min():
            scored.append((name, 0.0))
        else:
            scored.append((name, min(abs(pearson_correlation(col, t)), 1.0)))
    scored.sort(key=lambda e: (-e[1], e[0]))
    return FeatureRanking(target, tuple(scored[:k]))


@dataclass(frozen=True)
class Window:
    """One fixed-length slice of a single feature's series."""

    source_feature: str
    start_index: int
    length: int
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen(np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "values", vals)
        if self.length < 2:
            raise ValueError("window length must be >= 2")
        if vals.shape != (self.length,):
            raise ValueError(f"values shape {vals.shape} != ({self.length},)")


def make_windows(m: FeatureMatrix, feature: str, length: int, stride: int = 1) -> list[Window]:
    """Sliding windows at starts 0, stride, 2*stride, ... while they fit.

    Yields exactly floor((N - length) / stride) + 1 windows.
    """
    if length < 2:
        raise ValueError("window length must be >= 2")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n = m.row_count
    if length > n:
        raise WindowTooLongError(f"window length {length} exceeds {n} rows")
    col = m.column(feature)
    return [
        Window(feature, start, length, col[start : start + length])
        for start in range(0, n - length + 1, stride)
    ]


def rows_covered(
    starts: np.ndarray, length: int, window_flags: np.ndarray, n_rows: int
) -> np.ndarray:
    """Boolean row mask: rows covered by at least one flagged window."""
    starts = np.asarray(starts, dtype=np.int64)
    window_flags = np.asarray(window_flags, dtype=bool)
    if starts.shape != window_flags.shape:
        raise ValueError("starts and window_flags must have equal length")
    delta = np.zeros(n_rows + 1, dtype=np.int64)
    for s in starts[window_flags]:
        delta[s] += 1
        delta[min(s + length, n_rows)] -= 1
    return np.cumsum(delta[:-1]) > 0
