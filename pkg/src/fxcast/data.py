"""Indicator ingestion, preprocessing, windowing and chronological folds."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from fxcast.errors import DataError, ParameterError, SchemaError

DAILY = "daily"
MONTHLY = "monthly"
FREQUENCIES = (DAILY, MONTHLY)
STD_FLOOR = 1e-12


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    frequency: str = DAILY
    role: str = "feature"  # feature | target

    def __post_init__(self) -> None:
        if self.frequency not in FREQUENCIES:
            raise SchemaError(f"column {self.name!r}: unknown frequency {self.frequency!r}")
        if self.role not in ("feature", "target"):
            raise SchemaError(f"column {self.name!r}: unknown role {self.role!r}")


# Indicator names from the factors table, grouped by category.  Frequencies
# follow how each series is published: market prices daily, macro releases monthly.
REFERENCE_SCHEMA: tuple[ColumnSpec, ...] = (
    ColumnSpec("rate", DAILY, "target"),
    ColumnSpec("rusa", DAILY),
    ColumnSpec("rchn", DAILY),
    ColumnSpec("dr", DAILY),
    ColumnSpec("ydr", DAILY),
    ColumnSpec("udr", DAILY),
    ColumnSpec("cpiu", MONTHLY),
    ColumnSpec("cpic", MONTHLY),
    ColumnSpec("ccp", MONTHLY),
    ColumnSpec("dowjones", DAILY),
    ColumnSpec("MSCIAAshare", DAILY),
    ColumnSpec("HS300", DAILY),
    ColumnSpec("sprd30.ci", DAILY),
    ColumnSpec("nyseche", DAILY),
    ColumnSpec("hscei.hi", DAILY),
    ColumnSpec("trade", MONTHLY),
    ColumnSpec("output", MONTHLY),
    ColumnSpec("inputu", MONTHLY),
    ColumnSpec("fdix", MONTHLY),
    ColumnSpec("fdi", MONTHLY),
    ColumnSpec("PI", MONTHLY),
    ColumnSpec("OI", MONTHLY),
    ColumnSpec("cf", MONTHLY),
    ColumnSpec("cm2", MONTHLY),
    ColumnSpec("dm2", MONTHLY),
    ColumnSpec("um2", MONTHLY),
    ColumnSpec("USDJPY", DAILY),
    ColumnSpec("GBPUSD", DAILY),
    ColumnSpec("EURCHN", DAILY),
    ColumnSpec("EURUSD", DAILY),
    ColumnSpec("AUDUSD", DAILY),
    ColumnSpec("USDCAD", DAILY),
    ColumnSpec("USDCHF", DAILY),
    ColumnSpec("USDX", DAILY),
)

DATE_FEATURE = "date"

# Final feature subset reported for the original dataset.  "m2u2" has no
# matching indicator; it is mapped to "um2" (U.S. M2).  Currency names are
# given in the factors-table spelling.
REFERENCE_SELECTED: tuple[str, ...] = (
    "HS300", "cpiu", "AUDUSD", "EURUSD", "um2", "inputu", "trade", "udr", "USDX", DATE_FEATURE,
)
FIXTURES: dict[str, tuple[str, ...]] = {"paper-2024-selected": REFERENCE_SELECTED}


# ---------------------------------------------------------------- frame


@dataclass(frozen=True)
class Column:
    name: str
    values: np.ndarray
    frequency: str = DAILY


@dataclass(frozen=True)
class SeriesFrame:
    """Date-aligned indicator columns.  Missing cells are NaN."""

    timestamps: np.ndarray  # datetime64[D], strictly increasing
    columns: tuple[Column, ...]
    target_name: str = "rate"

    def __post_init__(self) -> None:
        ts = np.asarray(self.timestamps, dtype="datetime64[D]")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "columns", tuple(self.columns))
        if ts.size > 1 and not np.all(ts[1:] > ts[:-1]):
            raise DataError("timestamps must be strictly increasing")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate column names in {names}")
        if self.target_name not in names:
            raise SchemaError(f"target column {self.target_name!r} not present")
        for c in self.columns:
            if len(c.values) != len(ts):
                raise DataError(f"column {c.name!r} has {len(c.values)} values for {len(ts)} timestamps")

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"unknown column {name!r}")

    def values(self, name: str) -> np.ndarray:
        return self.column(name).values

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """[T x len(names)] array of the named columns."""
        return np.column_stack([self.values(n) for n in names]) if names else np.zeros((len(self), 0))

    def replace_values(self, new: dict[str, np.ndarray]) -> "SeriesFrame":
        cols = tuple(
            Column(c.name, np.asarray(new[c.name], dtype=float), c.frequency) if c.name in new else c
            for c in self.columns
        )
        return SeriesFrame(self.timestamps, cols, self.target_name)

    def slice_rows(self, start: int, stop: int) -> "SeriesFrame":
        cols = tuple(Column(c.name, c.values[start:stop], c.frequency) for c in self.columns)
        return SeriesFrame(self.timestamps[start:stop], cols, self.target_name)

    def between(self, start: str | None = None, end: str | None = None) -> "SeriesFrame":
        """Rows with ``start <= date <= end`` (either bound optional, ISO strings)."""
        mask = np.ones(len(self), dtype=bool)
        if start:
            mask &= self.timestamps >= np.datetime64(start, "D")
        if end:
            mask &= self.timestamps <= np.datetime64(end, "D")
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            return self.slice_rows(0, 0)
        return self.slice_rows(int(idx[0]), int(idx[-1]) + 1)

    def with_date_feature(self) -> "SeriesFrame":
        """Append a ``date`` column holding days since the first timestamp."""
        if DATE_FEATURE in self.names:
            return self
        days = (self.timestamps - self.timestamps[0]).astype(float) if len(self) else np.zeros(0)
        cols = self.columns + (Column(DATE_FEATURE, days, DAILY),)
        return SeriesFrame(self.timestamps, cols, self.target_name)


# ---------------------------------------------------------------- schema / csv


def load_schema(path: str | Path) -> list[ColumnSpec]:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, list):
        raise SchemaError(f"{path}: schema must be a JSON list")
    return [ColumnSpec(d["name"], d.get("frequency", DAILY), d.get("role", "feature")) for d in raw]


def dump_schema(schema: Iterable[ColumnSpec], path: str | Path) -> None:
    rows = [{"name": c.name, "frequency": c.frequency, "role": c.role} for c in schema]
    Path(path).write_text(json.dumps(rows, indent=2) + "\n")


def load_csv(path: str | Path, schema: Sequence[ColumnSpec]) -> SeriesFrame:
    """Parse an indicator CSV whose first column is an ISO date named ``date``.

    Blank cells are kept as NaN in monthly columns; a blank in a daily column
    is a :class:`DataError`.
    """
    specs = {c.name: c for c in schema}
    targets = [c.name for c in schema if c.role == "target"]
    if len(targets) != 1:
        raise SchemaError(f"schema must declare exactly one target column, found {targets}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if not header or header[0].strip() != "date":
            raise SchemaError(f"{path}: first column must be 'date'")
        names = [h.strip() for h in header[1:]]
        for n in names:
            if n not in specs:
                raise SchemaError(f"{path}: column {n!r} not in schema")
        missing = [n for n in specs if n not in names]
        if missing:
            raise SchemaError(f"{path}: schema columns missing from file: {missing}")
        if len(set(names)) != len(names):
            raise SchemaError(f"{path}: duplicate column headers")

        dates: list[np.datetime64] = []
        cells: list[list[float]] = []
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{rowno}: expected {len(header)} fields, got {len(row)}")
            try:
                d = np.datetime64(row[0].strip(), "D")
            except ValueError:
                raise DataError(f"{path}:{rowno}: unparsable date {row[0]!r}") from None
            if dates and d <= dates[-1]:
                kind = "duplicate" if d == dates[-1] else "non-monotone"
                raise DataError(f"{path}:{rowno}: {kind} date {row[0]}")
            vals = []
            for name, cell in zip(names, row[1:]):
                cell = cell.strip()
                if not cell:
                    if specs[name].frequency != MONTHLY:
                        raise DataError(f"{path}:{rowno}: missing value in daily column {name!r}")
                    vals.append(math.nan)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}:{rowno}: unparsable number {cell!r} in {name!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}:{rowno}: non-finite value in {name!r}")
                vals.append(v)
            dates.append(d)
            cells.append(vals)

    arr = np.array(cells, dtype=float).reshape(len(cells), len(names))
    cols = tuple(Column(n, arr[:, j].copy(), specs[n].frequency) for j, n in enumerate(names))
    return SeriesFrame(np.array(dates, dtype="datetime64[D]"), cols, targets[0])


def write_csv(frame: SeriesFrame, path: str | Path) -> None:
    """Write ``frame`` in the format :func:`load_csv` reads; NaN becomes a blank."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date"] + frame.names)
        mat = frame.matrix(frame.names)
        for i, ts in enumerate(frame.timestamps):
            w.writerow([str(ts)] + ["" if math.isnan(v) else repr(float(v)) for v in mat[i]])


def frame_schema(frame: SeriesFrame) -> list[ColumnSpec]:
    return [
        ColumnSpec(c.name, c.frequency, "target" if c.name == frame.target_name else "feature")
        for c in frame.columns
    ]


# ---------------------------------------------------------------- cleaning


def forward_fill(frame: SeriesFrame) -> SeriesFrame:
    """Carry each monthly report forward until the next one."""
    new = {}
    for c in frame.columns:
        nan = np.isnan(c.values)
        if not nan.any():
            continue
        if c.frequency != MONTHLY:
            raise DataError(f"daily column {c.name!r} has missing values")
        if nan[0]:
            raise DataError(f"monthly column {c.name!r} has no report at or before the first timestamp")
        idx = np.where(~nan, np.arange(len(nan)), 0)
        np.maximum.accumulate(idx, out=idx)
        new[c.name] = c.values[idx]
    return frame.replace_values(new) if new else frame


# ---------------------------------------------------------------- z-score


@dataclass(frozen=True)
class NormStats:
    mean: dict[str, float]
    std: dict[str, float]

    def __post_init__(self) -> None:
        if set(self.mean) != set(self.std):
            raise SchemaError("mean and std cover different columns")
        if any(s < 0 for s in self.std.values()):
            raise ParameterError("std must be non-negative")

    def to_dict(self) -> dict:
        return {n: {"mean": self.mean[n], "std": self.std[n]} for n in self.mean}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls({n: v["mean"] for n, v in d.items()}, {n: v["std"] for n, v in d.items()})


def zscore_fit(frame: SeriesFrame, train_end_index: int) -> NormStats:
    """Per-column mean and population std over rows ``[0, train_end_index)``."""
    if train_end_index < 2:
        raise ParameterError(f"train_end_index must be >= 2, got {train_end_index}")
    if train_end_index > len(frame):
        raise ParameterError(f"train_end_index {train_end_index} exceeds frame length {len(frame)}")
    mean, std = {}, {}
    for c in frame.columns:
        v = c.values[:train_end_index]
        if np.isnan(v).any():
            raise DataError(f"column {c.name!r} has missing values; forward_fill first")
        mean[c.name] = float(v.mean())
        std[c.name] = max(float(v.std()), STD_FLOOR)
    return NormStats(mean, std)


def zscore_apply(frame: SeriesFrame, stats: NormStats) -> SeriesFrame:
    missing = [n for n in frame.names if n not in stats.mean]
    if missing:
        raise SchemaError(f"no normalization stats for columns {missing}")
    return frame.replace_values(
        {c.name: (c.values - stats.mean[c.name]) / stats.std[c.name] for c in frame.columns}
    )


def zscore_invert(values, stats: NormStats, column: str) -> np.ndarray:
    if column not in stats.mean:
        raise SchemaError(f"no normalization stats for column {column!r}")
    return np.asarray(values, dtype=float) * stats.std[column] + stats.mean[column]


# ---------------------------------------------------------------- windows


@dataclass(frozen=True)
class WindowSet:
    input_len: int
    horizon: int
    feature_names: tuple[str, ...]
    inputs: np.ndarray  # [N, L, F]
    targets: np.ndarray  # [N, H]
    window_start_indices: np.ndarray
    target_name: str = "rate"
    timestamps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype="datetime64[D]"))

    def __len__(self) -> int:
        return len(self.window_start_indices)

    @property
    def target_index(self) -> int | None:
        """Position of the target series among the input features, if present."""
        try:
            return self.feature_names.index(self.target_name)
        except ValueError:
            return None

    def subset(self, idx: np.ndarray) -> "WindowSet":
        return WindowSet(self.input_len, self.horizon, self.feature_names, self.inputs[idx],
                         self.targets[idx], self.window_start_indices[idx], self.target_name,
                         self.timestamps)

    def input_timestamps(self, i: int) -> np.ndarray:
        s = int(self.window_start_indices[i])
        return self.timestamps[s : s + self.input_len]

    def target_timestamps(self, i: int) -> np.ndarray:
        s = int(self.window_start_indices[i]) + self.input_len
        return self.timestamps[s : s + self.horizon]


def window_count(T: int, L: int, H: int) -> int:
    return T - L - H + 1


def make_windows(frame: SeriesFrame, feature_names: Sequence[str], L: int, H: int) -> WindowSet:
    """Stride-1 sliding windows: inputs over ``[s, s+L)``, targets over ``[s+L, s+L+H)``."""
    if L < 1 or H < 1:
        raise ParameterError(f"input length and horizon must be >= 1, got L={L}, H={H}")
    T = len(frame)
    if T < L + H:
        raise DataError(f"series of length {T} is too short for L={L}, H={H}")
    feats = frame.matrix(list(feature_names))
    if np.isnan(feats).any():
        raise DataError("features contain missing values; forward_fill first")
    target = frame.values(frame.target_name)
    n = window_count(T, L, H)
    sw = np.lib.stride_tricks.sliding_window_view
    inputs = np.ascontiguousarray(sw(feats, L, axis=0)[:n].transpose(0, 2, 1))
    targets = np.ascontiguousarray(sw(target[L:], H)[:n])
    return WindowSet(L, H, tuple(feature_names), inputs, targets, np.arange(n),
                     frame.target_name, frame.timestamps)


# ---------------------------------------------------------------- folds


@dataclass(frozen=True)
class FoldSplit:
    """Chronologically contiguous validation blocks over window indices."""

    k: int
    fold_of: np.ndarray  # fold index per window
    boundaries: tuple[int, ...]  # start index of each block, plus N at the end

    def val_indices(self, i: int) -> np.ndarray:
        self._check(i)
        return np.arange(self.boundaries[i], self.boundaries[i + 1])

    def train_indices(self, i: int) -> np.ndarray:
        self._check(i)
        return np.flatnonzero(self.fold_of != i)

    def sizes(self) -> list[int]:
        return [self.boundaries[i + 1] - self.boundaries[i] for i in range(self.k)]

    def _check(self, i: int) -> None:
        if not 0 <= i < self.k:
            raise ParameterError(f"fold index {i} out of range for k={self.k}")


def make_folds(windows: WindowSet | int, k: int = 5) -> FoldSplit:
    """Split N windows into k contiguous blocks; the first ``N % k`` blocks get one extra."""
    n = windows if isinstance(windows, int) else len(windows)
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if n < k:
        raise DataError(f"{n} windows cannot form {k} folds")
    base, extra = divmod(n, k)
    sizes = [base + (1 if i < extra else 0) for i in range(k)]
    bounds = tuple(int(b) for b in np.concatenate([[0], np.cumsum(sizes)]))
    fold_of = np.repeat(np.arange(k), sizes)
    return FoldSplit(k, fold_of, bounds)


def norm_fit_end(folds: FoldSplit, i: int, input_len: int) -> int:
    """Row bound for fitting z-score stats in CV round ``i``.

    Stats use rows before the first target of the first validation window,
    so no validation input is normalized with information from its own
    horizon or later.
    """
    return folds.boundaries[i] + input_len


def lookahead_violations(windows: WindowSet, idx: Iterable[int], stats_end: int) -> list[int]:
    """Windows in ``idx`` whose first target row is at or before a stats row."""
    return [int(i) for i in idx
            if int(windows.window_start_indices[i]) + windows.input_len < stats_end]


# ---------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SynthSpec:
    T: int = 700
    F: int = 6
    seed: int = 0
    planted_feature: int = 0
    noise_std: float = 0.1
    lag: int = 16
    phi: float = 0.95
    noise_phi: float = 0.5
    start: str = "2015-01-01"

    def validate(self) -> None:
        if self.T < 2:
            raise ParameterError(f"T must be >= 2, got {self.T}")
        if self.F < 1:
            raise ParameterError(f"F must be >= 1, got {self.F}")
        if not 0 <= self.planted_feature < self.F:
            raise ParameterError(f"planted_feature {self.planted_feature} out of range for F={self.F}")
        if self.noise_std < 0:
            raise ParameterError("noise_std must be >= 0")
        if self.lag < 0:
            raise ParameterError("lag must be >= 0")
        if not (-1 < self.phi < 1 and -1 < self.noise_phi < 1):
            raise ParameterError("AR coefficients must lie in (-1, 1)")


def planted_response(u: np.ndarray) -> np.ndarray:
    """Nonlinear map from the lagged planted feature to the clean target."""
    return np.tanh(u) + 0.5 * u


def _ar1(rng: np.random.Generator, n: int, phi: float, std: float) -> np.ndarray:
    """Stationary AR(1) with marginal std ``std``."""
    out = np.empty(n)
    innov = rng.standard_normal(n) * std * math.sqrt(1.0 - phi * phi)
    prev = rng.standard_normal() * std
    for t in range(n):
        prev = phi * prev + innov[t]
        out[t] = prev
    return out


def synth_generate(spec: SynthSpec) -> SeriesFrame:
    """Features ``f0..f{F-1}`` are independent AR(1) series; target ``rate`` is
    ``planted_response(f_p[t - lag])`` plus AR(1) noise."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    full = [_ar1(rng, spec.T + spec.lag, spec.phi, 1.0) for _ in range(spec.F)]
    noise = _ar1(rng, spec.T, spec.noise_phi, spec.noise_std) if spec.noise_std > 0 else np.zeros(spec.T)
    planted = full[spec.planted_feature]
    target = planted_response(planted[: spec.T]) + noise
    cols = [Column("rate", target)]
    cols += [Column(f"f{j}", full[j][spec.lag :].copy()) for j in range(spec.F)]
    ts = np.datetime64(spec.start, "D") + np.arange(spec.T)
    return SeriesFrame(ts, tuple(cols), "rate")
