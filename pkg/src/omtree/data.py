"""Dataset loading, summary statistics, transforms and fold assignment.

Data files are plain comma-delimited text with a header row; a sidecar
schema file declares each column as numeric/categorical and
feature/target/ignore.  The unquoted token ``?`` (or an unparseable
numeric cell) marks a missing value.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

MISSING_TOKEN = "?"

KINDS = ("numeric", "categorical")
ROLES = ("feature", "target", "ignore")


class DataError(ValueError):
    """Raised for malformed data or schema files."""


@dataclass(frozen=True)
class FeatureSchema:
    """Declared name/kind/role of one column, plus observed category levels."""

    name: str
    kind: str
    role: str
    unit: str = ""
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.name:
            raise DataError("column name must be non-empty")
        if self.kind not in KINDS:
            raise DataError(f"column {self.name!r}: kind must be one of {KINDS}, got {self.kind!r}")
        if self.role not in ROLES:
            raise DataError(f"column {self.name!r}: role must be one of {ROLES}, got {self.role!r}")


@dataclass(frozen=True)
class Dataset:
    """An immutable project table with one positive numeric effort target.

    ``columns`` maps every feature-role column name to a numpy array:
    float64 with NaN for missing numeric cells, object (str or None) for
    categorical cells.  ``missing`` holds the per-cell mask for the same
    columns.  Ignored columns are kept verbatim as strings so a dataset
    round-trips through save/load unchanged.
    """

    schema: tuple[FeatureSchema, ...]
    columns: dict[str, np.ndarray]
    effort: np.ndarray
    missing: dict[str, np.ndarray]
    name: str = ""
    ignored: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_rows < 3:
            raise DataError(f"dataset needs at least 3 rows, got {self.n_rows}")
        if np.any(self.effort <= 0):
            i = int(np.argmax(self.effort <= 0))
            raise DataError(f"non-positive effort {self.effort[i]} at row {i + 1}")

    @property
    def n_rows(self) -> int:
        return len(self.effort)

    @property
    def target_name(self) -> str:
        return next(c.name for c in self.schema if c.role == "target")

    @property
    def features(self) -> tuple[FeatureSchema, ...]:
        return tuple(c for c in self.schema if c.role == "feature")

    @property
    def numeric_features(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.features if c.kind == "numeric")

    @property
    def categorical_features(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.features if c.kind == "categorical")

    def row(self, i: int) -> dict:
        """One row as a name->value record (None where missing)."""
        rec = {}
        for c in self.features:
            v = self.columns[c.name][i]
            if self.missing[c.name][i]:
                rec[c.name] = None
            elif c.kind == "numeric":
                rec[c.name] = float(v)
            else:
                rec[c.name] = v
        return rec

    def rows(self) -> list[dict]:
        return [self.row(i) for i in range(self.n_rows)]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        cols = {n: a[idx] for n, a in self.columns.items()}
        miss = {n: a[idx] for n, a in self.missing.items()}
        ignored = {n: tuple(np.asarray(v, dtype=object)[idx]) for n, v in self.ignored.items()}
        return Dataset(self.schema, cols, self.effort[idx], miss, self.name, ignored)


@dataclass(frozen=True)
class StatsReport:
    cases: int
    min: float
    max: float
    mean: float
    skewness: float


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    assignment: np.ndarray
    seed: int
    strata_bins: int

    def fold_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def split(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        """(train_indices, test_indices) for one held-out fold."""
        test = self.assignment == fold
        return np.flatnonzero(~test), np.flatnonzero(test)


def load_schema(schema_path: str) -> tuple[FeatureSchema, ...]:
    """Parse a sidecar schema file: one ``name,kind,role[,unit]`` line per column."""
    cols = []
    with open(schema_path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) not in (3, 4):
                raise DataError(f"{schema_path}:{lineno}: expected name,kind,role[,unit]")
            unit = parts[3] if len(parts) == 4 else ""
            cols.append(FeatureSchema(parts[0], parts[1], parts[2], unit))
    _check_schema(cols, schema_path)
    return tuple(cols)


def _check_schema(cols, where: str) -> None:
    names = [c.name for c in cols]
    if len(set(names)) != len(names):
        dup = next(n for n in names if names.count(n) > 1)
        raise DataError(f"{where}: duplicate column name {dup!r}")
    targets = [c for c in cols if c.role == "target"]
    if len(targets) != 1:
        raise DataError(f"{where}: expected exactly one target column, found {len(targets)}")
    if targets[0].kind != "numeric":
        raise DataError(f"{where}: target column {targets[0].name!r} must be numeric")


def _parse_float(token: str) -> float:
    try:
        return float(token)
    except ValueError:
        return math.nan


def load_dataset(data_path: str, schema_path: str, missing_token: str = MISSING_TOKEN) -> Dataset:
    """Load a delimited data file against its schema sidecar.

    Unparseable numeric cells and the ``missing_token`` set the missing
    mask; rows whose effort cell is missing are dropped; a non-positive
    effort value is an error.
    """
    schema = load_schema(schema_path)
    with open(data_path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{data_path}: empty file") from None
        header = [h.strip() for h in header]
        expected = [c.name for c in schema]
        if header != expected:
            raise DataError(
                f"{data_path}: header {header} does not match schema columns {expected}"
            )
        raw_rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if not raw_rows:
        raise DataError(f"{data_path}: no data rows")

    target = next(c for c in schema if c.role == "target")
    tcol = expected.index(target.name)

    kept = []
    for rowno, row in enumerate(raw_rows, start=2):
        if len(row) != len(expected):
            raise DataError(f"{data_path}:{rowno}: expected {len(expected)} cells, got {len(row)}")
        tok = row[tcol].strip()
        if tok == missing_token or math.isnan(_parse_float(tok)):
            continue  # rows with missing effort are rejected
        if float(tok) <= 0:
            raise DataError(
                f"{data_path}:{rowno}: non-positive effort {tok!r} in column {target.name!r}"
            )
        kept.append(row)
    if not kept:
        raise DataError(f"{data_path}: no rows with a usable effort value")

    n = len(kept)
    columns: dict[str, np.ndarray] = {}
    missing: dict[str, np.ndarray] = {}
    ignored: dict[str, tuple[str, ...]] = {}
    effort = np.empty(n)
    schema_out = []
    for j, col in enumerate(schema):
        cells = [r[j].strip() for r in kept]
        if col.role == "ignore":
            ignored[col.name] = tuple(cells)
            schema_out.append(col)
            continue
        miss = np.array([c == missing_token for c in cells], dtype=bool)
        if col.kind == "numeric":
            vals = np.array([_parse_float(c) for c in cells])
            miss |= np.isnan(vals)
            vals = np.where(miss, np.nan, vals)
            if col.role == "target":
                effort = vals
                schema_out.append(col)
            else:
                columns[col.name] = vals
                missing[col.name] = miss
                schema_out.append(col)
        else:
            vals = np.array([None if m else c for c, m in zip(cells, miss)], dtype=object)
            levels = tuple(sorted({c for c, m in zip(cells, miss) if not m}))
            columns[col.name] = vals
            missing[col.name] = miss
            schema_out.append(replace(col, levels=levels))

    name = os.path.splitext(os.path.basename(data_path))[0]
    return Dataset(tuple(schema_out), columns, effort, missing, name, ignored)


def save_dataset(d: Dataset, data_path: str, missing_token: str = MISSING_TOKEN) -> None:
    """Write a dataset back to delimited text (inverse of load_dataset)."""
    with open(data_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([c.name for c in d.schema])
        for i in range(d.n_rows):
            row = []
            for c in d.schema:
                if c.role == "ignore":
                    row.append(d.ignored[c.name][i])
                elif c.role == "target":
                    row.append(_format_cell(d.effort[i]))
                elif d.missing[c.name][i]:
                    row.append(missing_token)
                elif c.kind == "numeric":
                    row.append(_format_cell(float(d.columns[c.name][i])))
                else:
                    row.append(d.columns[c.name][i])
            w.writerow(row)


def save_schema(schema, schema_path: str) -> None:
    with open(schema_path, "w", encoding="utf-8") as fh:
        for c in schema:
            line = f"{c.name},{c.kind},{c.role}"
            if c.unit:
                line += f",{c.unit}"
            fh.write(line + "\n")


def _format_cell(x: float) -> str:
    return repr(int(x)) if float(x).is_integer() and abs(x) < 1e15 else repr(float(x))


def summary_stats(d: Dataset) -> StatsReport:
    """Count, min, max, mean and Fisher-Pearson skewness of the effort column.

    Skewness is the population-moment coefficient g1 = m3 / m2^(3/2),
    without the small-sample adjustment factor.
    """
    e = d.effort
    n = len(e)
    if n < 3:
        raise DataError("skewness needs at least 3 rows")
    dev = e - e.mean()
    m2 = float((dev**2).mean())
    m3 = float((dev**3).mean())
    skew = 0.0 if m2 == 0 else m3 / m2**1.5
    return StatsReport(n, float(e.min()), float(e.max()), float(e.mean()), skew)


def min_max_normalize(d: Dataset) -> tuple[Dataset, dict[str, tuple[float, float]]]:
    """Map each numeric feature to [0,1]; returns the train bounds per feature.

    Constant features map to 0.  Missing cells stay missing.
    """
    bounds = {}
    for name in d.numeric_features:
        col = d.columns[name]
        valid = col[~d.missing[name]]
        if valid.size == 0:
            bounds[name] = (0.0, 0.0)
        else:
            bounds[name] = (float(valid.min()), float(valid.max()))
    return apply_min_max(d, bounds), bounds


def apply_min_max(d: Dataset, bounds: dict[str, tuple[float, float]]) -> Dataset:
    """Project numeric features with previously computed bounds (values may leave [0,1])."""
    cols = dict(d.columns)
    for name, (lo, hi) in bounds.items():
        col = cols[name]
        if hi > lo:
            cols[name] = (col - lo) / (hi - lo)
        else:
            cols[name] = np.where(np.isnan(col), np.nan, 0.0)
    return replace(d, columns=cols)


def denormalize(d: Dataset, bounds: dict[str, tuple[float, float]]) -> Dataset:
    """Inverse of apply_min_max for non-constant features."""
    cols = dict(d.columns)
    for name, (lo, hi) in bounds.items():
        if hi > lo:
            cols[name] = cols[name] * (hi - lo) + lo
    return replace(d, columns=cols)


def log_transform(d: Dataset, columns) -> Dataset:
    """Replace x with ln(x + 1) in the selected numeric columns."""
    cols = dict(d.columns)
    for name in columns:
        if name not in d.numeric_features:
            raise DataError(f"log_transform: {name!r} is not a numeric feature")
        col = cols[name]
        bad = np.flatnonzero(col < 0)
        if bad.size:
            raise DataError(f"log_transform: negative value in column {name!r} at row {bad[0] + 1}")
        cols[name] = np.log1p(col)
    return replace(d, columns=cols)


def make_folds(d: Dataset, k: int, seed: int, strata_bins: int | None = None) -> FoldAssignment:
    """Stratified fold assignment: effort-sorted quantile bins dealt round-robin.

    Rows are sorted by effort, cut into ``strata_bins`` equal-count bins,
    shuffled within each bin by a generator seeded with ``seed``, and
    dealt in order onto folds 0..k-1 with a cursor that carries across
    bins.  Deterministic for fixed (seed, k, strata_bins).
    """
    if k < 2:
        raise DataError(f"k must be >= 2, got {k}")
    n = d.n_rows
    if n < k:
        raise DataError(f"cannot make {k} folds from {n} rows")
    bins = k if strata_bins is None else strata_bins
    if bins < 1:
        raise DataError("strata_bins must be >= 1")

    order = np.lexsort((np.arange(n), d.effort))  # effort asc, row index breaks ties
    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=np.int64)
    cursor = 0
    for b in range(bins):
        lo, hi = b * n // bins, (b + 1) * n // bins
        stratum = order[lo:hi].copy()
        rng.shuffle(stratum)
        for row in stratum:
            assignment[row] = cursor % k
            cursor += 1
    return FoldAssignment(k, assignment, seed, bins)


class Imputer:
    """Fills missing cells with training-split column mean (numeric) or mode (categorical)."""

    def __init__(self, train: Dataset):
        self.numeric_fill: dict[str, float] = {}
        self.categorical_fill: dict[str, str | None] = {}
        for name in train.numeric_features:
            valid = train.columns[name][~train.missing[name]]
            self.numeric_fill[name] = float(valid.mean()) if valid.size else math.nan
        for name in train.categorical_features:
            col = train.columns[name]
            valid = [v for v, m in zip(col, train.missing[name]) if not m]
            if valid:
                counts: dict[str, int] = {}
                for v in valid:
                    counts[v] = counts.get(v, 0) + 1
                top = max(counts.values())
                self.categorical_fill[name] = min(v for v, c in counts.items() if c == top)
            else:
                self.categorical_fill[name] = None

    def transform(self, d: Dataset) -> Dataset:
        cols = dict(d.columns)
        miss = {}
        for name in d.numeric_features:
            cols[name] = np.where(d.missing[name], self.numeric_fill[name], cols[name])
            miss[name] = np.isnan(cols[name])
        for name in d.categorical_features:
            fill = self.categorical_fill[name]
            col = np.array(
                [fill if m else v for v, m in zip(cols[name], d.missing[name])], dtype=object
            )
            cols[name] = col
            miss[name] = np.array([v is None for v in col], dtype=bool)
        return replace(d, columns=cols, missing=miss)


class TableEncoder:
    """Training-split view of a dataset as dense numeric/categorical matrices.

    Numeric features are imputed with the training mean; categorical
    features are integer-coded against training levels (mode-imputed),
    with -1 for levels never seen in training.
    """

    def __init__(self, train: Dataset):
        self.numeric_names = train.numeric_features
        self.categorical_names = train.categorical_features
        self.feature_names = tuple(c.name for c in train.features)
        self.imputer = Imputer(train)
        self.level_codes: dict[str, dict[str, int]] = {}
        for name in self.categorical_names:
            filled = self.imputer.transform(train).columns[name]
            levels = sorted({v for v in filled if v is not None})
            self.level_codes[name] = {lv: i for i, lv in enumerate(levels)}

    def encode(self, d: Dataset) -> tuple[np.ndarray, np.ndarray]:
        """(numeric matrix with imputed cells, int-coded categorical matrix)."""
        filled = self.imputer.transform(d)
        n = d.n_rows
        x_num = np.empty((n, len(self.numeric_names)))
        for j, name in enumerate(self.numeric_names):
            x_num[:, j] = filled.columns[name]
        x_cat = np.empty((n, len(self.categorical_names)), dtype=np.int64)
        for j, name in enumerate(self.categorical_names):
            codes = self.level_codes[name]
            x_cat[:, j] = [codes.get(v, -1) if v is not None else -1 for v in filled.columns[name]]
        return x_num, x_cat

    def encode_record(self, record: dict) -> tuple[np.ndarray, np.ndarray]:
        """Encode one name->value mapping; missing values are imputed."""
        x_num = np.empty(len(self.numeric_names))
        for j, name in enumerate(self.numeric_names):
            v = record.get(name)
            if v is None or (isinstance(v, float) and math.isnan(v)):
                v = self.imputer.numeric_fill[name]
            x_num[j] = float(v)
            if math.isnan(x_num[j]):
                raise DataError(f"missing numeric value for {name!r} and no training fill")
        x_cat = np.empty(len(self.categorical_names), dtype=np.int64)
        for j, name in enumerate(self.categorical_names):
            v = record.get(name)
            if v is None:
                v = self.imputer.categorical_fill[name]
            x_cat[j] = self.level_codes[name].get(v, -1) if v is not None else -1
        return x_num, x_cat
