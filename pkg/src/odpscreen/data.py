"""Observed-data structures and CSV ingestion.

A study is a rectangular table: one outcome (binary, or right-censored
survival as a time/event pair), a two-arm treatment coded -1/+1, an
optional block of confounder columns, and everything else treated as
candidate biomarker columns.  All downstream modules consume the
immutable :class:`Dataset` built here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

__all__ = [
    "BinaryOutcome",
    "SurvivalOutcome",
    "Dataset",
    "DatasetError",
    "Diagnostic",
    "ColumnSchema",
    "load_dataset",
    "write_dataset",
    "validate_dataset",
]


class DatasetError(ValueError):
    """Raised for malformed or degenerate input data."""


@dataclass(frozen=True)
class BinaryOutcome:
    """0/1 outcome vector."""

    y: np.ndarray

    kind = "binary"

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        if y.ndim != 1:
            raise DatasetError("binary outcome must be a vector")
        if not np.isin(y, (0.0, 1.0)).all():
            raise DatasetError("binary outcome values must be 0 or 1")
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.y.shape[0]


@dataclass(frozen=True)
class SurvivalOutcome:
    """Right-censored survival outcome: observed time and event indicator.

    ``event`` is 1 when the failure was observed at ``time`` and 0 when
    the subject was censored there.
    """

    time: np.ndarray
    event: np.ndarray

    kind = "survival"

    def __post_init__(self):
        time = np.asarray(self.time, dtype=np.float64)
        event = np.asarray(self.event, dtype=np.float64)
        if time.shape != event.shape or time.ndim != 1:
            raise DatasetError("survival time and event must be vectors of equal length")
        if not (time > 0).all():
            bad = int(np.argmin(time > 0))
            raise DatasetError(f"survival time must be positive (row {bad})")
        if not np.isin(event, (0.0, 1.0)).all():
            raise DatasetError("event indicator values must be 0 or 1")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)

    def __len__(self):
        return self.time.shape[0]


Outcome = BinaryOutcome | SurvivalOutcome


@dataclass(frozen=True)
class Dataset:
    """Validated study data, immutable after construction.

    Attributes
    ----------
    outcome : BinaryOutcome or SurvivalOutcome
        Outcome block; every subject shares the same variant.
    treatment : ndarray (n,)
        Treatment arm in {-1, +1}.
    x : ndarray (n, p)
        Biomarker matrix.
    z : ndarray (n, q)
        Confounder matrix; q may be 0.
    biomarker_names : tuple of str
        Column labels for ``x``, unique.
    """

    outcome: Outcome
    treatment: np.ndarray
    x: np.ndarray
    z: np.ndarray
    biomarker_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        trt = np.asarray(self.treatment, dtype=np.float64)
        x = np.asarray(self.x, dtype=np.float64)
        z = np.asarray(self.z, dtype=np.float64)
        n = len(self.outcome)
        if n < 2:
            raise DatasetError("dataset must contain at least 2 subjects")
        if trt.shape != (n,):
            raise DatasetError("treatment length does not match outcomes")
        if x.ndim != 2 or x.shape[0] != n:
            raise DatasetError("biomarker matrix must be n x p")
        if z.ndim != 2 or z.shape[0] != n:
            raise DatasetError("confounder matrix must be n x q")
        if not np.isin(trt, (-1.0, 1.0)).all():
            raise DatasetError("treatment must be coded -1/+1 (or 0/1 before recoding)")
        if not ((trt == 1).any() and (trt == -1).any()):
            raise DatasetError("both treatment arms required")
        if not np.isfinite(x).all():
            raise DatasetError("biomarker matrix contains non-finite entries")
        if not np.isfinite(z).all():
            raise DatasetError("confounder matrix contains non-finite entries")
        names = tuple(self.biomarker_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DatasetError("biomarker_names length does not match columns of x")
        if len(set(names)) != len(names):
            raise DatasetError("biomarker column names must be unique")
        trt.setflags(write=False)
        x.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "treatment", trt)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "biomarker_names", names)

    @property
    def n_subjects(self) -> int:
        return self.treatment.shape[0]

    @property
    def n_biomarkers(self) -> int:
        return self.x.shape[1]

    @property
    def n_confounders(self) -> int:
        return self.z.shape[1]


@dataclass(frozen=True)
class ColumnSchema:
    """Column-role mapping for CSV ingestion.

    ``outcome`` is a single column name for binary data, or a
    ``(time, event)`` pair for survival data.  Columns not named here
    are taken to be biomarkers; ``ignore`` lists columns (for example a
    supplied propensity) excluded from that rule.
    """

    outcome: str | tuple[str, str]
    treatment: str
    confounders: tuple[str, ...] = ()
    ignore: tuple[str, ...] = ()

    @property
    def outcome_columns(self) -> tuple[str, ...]:
        if isinstance(self.outcome, str):
            return (self.outcome,)
        return tuple(self.outcome)


@dataclass(frozen=True)
class Diagnostic:
    """One validation finding: a stable code, a message, optional value."""

    code: str
    message: str
    value: float | None = None

    def __str__(self):
        return self.message


def recode_treatment(values: np.ndarray) -> np.ndarray:
    """Map a 0/1 treatment coding onto -1/+1; leave -1/+1 untouched."""
    values = np.asarray(values, dtype=np.float64)
    if np.isin(values, (-1.0, 1.0)).all():
        return values
    if np.isin(values, (0.0, 1.0)).all():
        return np.where(values == 0.0, -1.0, 1.0)
    bad = values[~np.isin(values, (-1.0, 0.0, 1.0))]
    raise DatasetError(f"treatment values must be 0/1 or -1/+1, found {bad[0]!r}")


def _numeric_column(frame: pd.DataFrame, name: str) -> np.ndarray:
    if name not in frame.columns:
        raise DatasetError(f"column '{name}' not found in file")
    col = pd.to_numeric(frame[name], errors="coerce").to_numpy(dtype=np.float64)
    raw_na = frame[name].isna().to_numpy()
    bad = ~np.isfinite(col)
    if bad.any():
        row = int(np.argmax(bad))
        kind = "missing" if raw_na[row] else "non-numeric"
        # +2: header line plus 1-based data rows, i.e. the line in the file
        raise DatasetError(f"{kind} value in column '{name}', file line {row + 2}")
    return col


def load_dataset(path: str, schema: ColumnSchema) -> Dataset:
    """Read a headered CSV and build a validated :class:`Dataset`.

    Treatment codings {0,1} are mapped to {-1,+1} (0 becomes -1); data
    already coded -1/+1 passes through unchanged.  Row order is
    preserved.  Every column not named by the schema is a biomarker.

    Raises
    ------
    DatasetError
        On missing or non-numeric cells (naming row and column), a
        single-arm treatment column, non-positive survival times, or
        duplicated column names.
    """
    # pandas renames duplicate headers, so check the raw header line
    with open(path) as fh:
        header = next(fh, "").rstrip("\n").split(",")
    seen: set[str] = set()
    for name in header:
        if name in seen:
            raise DatasetError(f"duplicate column name '{name}'")
        seen.add(name)
    frame = pd.read_csv(path, sep=",", header=0, float_precision="round_trip")
    reserved = (set(schema.outcome_columns) | {schema.treatment}
                | set(schema.confounders) | set(schema.ignore))
    missing = reserved - set(frame.columns)
    if missing:
        raise DatasetError(f"schema names absent from file: {sorted(missing)}")

    if isinstance(schema.outcome, str):
        outcome: Outcome = BinaryOutcome(_numeric_column(frame, schema.outcome))
    else:
        time_col, event_col = schema.outcome
        outcome = SurvivalOutcome(
            _numeric_column(frame, time_col), _numeric_column(frame, event_col)
        )
    treatment = recode_treatment(_numeric_column(frame, schema.treatment))
    biomarker_names = [c for c in frame.columns if c not in reserved]
    n = len(frame)
    x = np.empty((n, len(biomarker_names)), dtype=np.float64)
    for j, name in enumerate(biomarker_names):
        x[:, j] = _numeric_column(frame, name)
    if schema.confounders:
        z = np.column_stack([_numeric_column(frame, c) for c in schema.confounders])
    else:
        z = np.empty((n, 0), dtype=np.float64)
    return Dataset(outcome, treatment, x, z, tuple(biomarker_names))


def write_dataset(dataset: Dataset, path: str, schema: ColumnSchema | None = None) -> None:
    """Write a dataset back to CSV with 17 significant digits.

    The default schema names the outcome column(s) ``y`` or
    ``time``/``event``, the treatment ``trt``, and confounders
    ``z1..zq``; loading the file back with the same schema reproduces
    the dataset up to float round-trip.
    """
    if schema is None:
        outcome_cols = ("y",) if dataset.outcome.kind == "binary" else ("time", "event")
        schema = ColumnSchema(
            outcome=outcome_cols[0] if len(outcome_cols) == 1 else outcome_cols,
            treatment="trt",
            confounders=tuple(f"z{j + 1}" for j in range(dataset.n_confounders)),
        )
    cols: dict[str, np.ndarray] = {}
    if dataset.outcome.kind == "binary":
        cols[schema.outcome_columns[0]] = dataset.outcome.y
    else:
        time_col, event_col = schema.outcome_columns
        cols[time_col] = dataset.outcome.time
        cols[event_col] = dataset.outcome.event
    cols[schema.treatment] = dataset.treatment
    for j, name in enumerate(schema.confounders):
        cols[name] = dataset.z[:, j]
    for j, name in enumerate(dataset.biomarker_names):
        cols[name] = dataset.x[:, j]
    with open(path, "w") as fh:
        fh.write(",".join(cols.keys()) + "\n")
        mat = np.column_stack(list(cols.values()))
        for row in mat:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def validate_dataset(dataset: Dataset) -> list[Diagnostic]:
    """Report data features that deserve attention before fitting.

    Diagnostics only; nothing here raises.  Flags zero-variance
    biomarker columns (retained but unidentifiable downstream), extreme
    class imbalance for binary outcomes, the censoring fraction for
    survival outcomes, and the absence of confounders.
    """
    out: list[Diagnostic] = []
    spans = np.ptp(dataset.x, axis=0)
    for j in np.flatnonzero(spans == 0.0):
        name = dataset.biomarker_names[j]
        out.append(Diagnostic("constant_biomarker", f"constant biomarker: {name}"))
    if dataset.outcome.kind == "binary":
        frac = float(dataset.outcome.y.mean())
        if min(frac, 1.0 - frac) < 0.05:
            out.append(
                Diagnostic(
                    "class_imbalance",
                    f"extreme class imbalance: positive fraction {frac:.4f}",
                    frac,
                )
            )
    else:
        frac = float(1.0 - dataset.outcome.event.mean())
        out.append(
            Diagnostic("censoring_fraction", f"censoring fraction: {frac:.4f}", frac)
        )
    if dataset.n_confounders == 0:
        out.append(Diagnostic("no_confounders", "q=0; models fit without Z"))
    return out
