"""Feature schemas, in-memory datasets, CSV ingestion and splitting.

A :class:`Dataset` stores columns as numpy arrays.  Categorical ids lie in
``[0, vocab]``, where ``vocab`` itself is the reserved out-of-vocabulary
row.  Gated labels obey the gating invariant: a gated label can only be on
when its gate is on.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError

KINDS = ("binary", "continuous")


@dataclass(frozen=True)
class LabelSpec:
    name: str
    kind: str = "binary"
    gated_by: str | None = None

    def to_json(self):
        out = {"name": self.name, "kind": self.kind}
        if self.gated_by:
            out["gated_by"] = self.gated_by
        return out


@dataclass(frozen=True)
class FeatureSchema:
    categoricals: tuple[tuple[str, int], ...] = ()
    denses: tuple[str, ...] = ()
    labels: tuple[LabelSpec, ...] = ()
    timestamp: str | None = None

    def __post_init__(self):
        names = [n for n, _ in self.categoricals] + list(self.denses)
        names += [lab.name for lab in self.labels]
        if self.timestamp:
            names.append(self.timestamp)
        if len(set(names)) != len(names):
            raise ConfigurationError(f"schema column names are not unique: {names}")
        for name, vocab in self.categoricals:
            if int(vocab) < 1:
                raise ConfigurationError(f"vocab size of {name!r} must be >= 1")
        label_kinds = {lab.name: lab.kind for lab in self.labels}
        for lab in self.labels:
            if lab.kind not in KINDS:
                raise ConfigurationError(f"label {lab.name!r} has unknown kind {lab.kind!r}")
            if lab.gated_by is not None:
                if label_kinds.get(lab.gated_by) != "binary":
                    raise ConfigurationError(
                        f"{lab.name!r} is gated by {lab.gated_by!r}, which is not a binary label"
                    )
                if lab.gated_by == lab.name:
                    raise ConfigurationError(f"{lab.name!r} cannot gate itself")

    @property
    def label_names(self) -> list[str]:
        return [lab.name for lab in self.labels]

    def label(self, name) -> LabelSpec:
        for lab in self.labels:
            if lab.name == name:
                return lab
        raise KeyError(name)

    @property
    def columns(self) -> list[str]:
        cols = [self.timestamp] if self.timestamp else []
        cols += [n for n, _ in self.categoricals] + list(self.denses)
        return cols + self.label_names

    def to_json(self) -> dict:
        out = {
            "categoricals": [{"name": n, "vocab": int(v)} for n, v in self.categoricals],
            "denses": list(self.denses),
            "labels": [lab.to_json() for lab in self.labels],
        }
        if self.timestamp:
            out["timestamp"] = self.timestamp
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureSchema":
        try:
            return cls(
                categoricals=tuple((c["name"], int(c["vocab"])) for c in obj.get("categoricals", [])),
                denses=tuple(obj.get("denses", [])),
                labels=tuple(
                    LabelSpec(lab["name"], lab.get("kind", "binary"), lab.get("gated_by"))
                    for lab in obj.get("labels", [])
                ),
                timestamp=obj.get("timestamp"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed schema: {exc}") from exc


def load_schema(path) -> FeatureSchema:
    return FeatureSchema.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Features:
    """Model input: categorical ids (n, C) and dense values (n, D)."""

    categorical: np.ndarray
    dense: np.ndarray

    def __len__(self):
        return self.categorical.shape[0]

    def take(self, idx) -> "Features":
        return Features(self.categorical[idx], self.dense[idx])


def _frozen(arr, dtype):
    arr = np.array(arr, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable columnar dataset.

    ``ground_truth`` (synthetic data only) maps names such as
    ``"cond/<target>"`` or ``"marginal/<target>"`` to per-sample arrays.
    """

    schema: FeatureSchema
    categorical: np.ndarray
    dense: np.ndarray
    labels: dict[str, np.ndarray]
    timestamp: np.ndarray | None = None
    ground_truth: dict[str, np.ndarray] | None = field(default=None)

    def __post_init__(self):
        n = len(self.categorical)
        object.__setattr__(self, "categorical",
                           _frozen(self.categorical, np.int64).reshape(n, len(self.schema.categoricals)))
        object.__setattr__(self, "dense",
                           _frozen(self.dense, np.float64).reshape(n, len(self.schema.denses)))
        object.__setattr__(self, "labels",
                           {k: _frozen(self.labels[k], np.float64) for k in self.schema.label_names})
        if self.timestamp is not None:
            object.__setattr__(self, "timestamp", _frozen(self.timestamp, np.int64))
        if self.ground_truth is not None:
            object.__setattr__(self, "ground_truth",
                               {k: _frozen(v, np.float64) for k, v in self.ground_truth.items()})
        for name, col in self.labels.items():
            if len(col) != n:
                raise DataError(f"label column {name!r} has {len(col)} rows, expected {n}")

    def __len__(self):
        return self.categorical.shape[0]

    @property
    def features(self) -> Features:
        return Features(self.categorical, self.dense)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.schema,
            self.categorical[idx],
            self.dense[idx],
            {k: v[idx] for k, v in self.labels.items()},
            None if self.timestamp is None else self.timestamp[idx],
            None if self.ground_truth is None else {k: v[idx] for k, v in self.ground_truth.items()},
        )

    def fingerprint(self) -> str:
        """SHA-256 over schema and all feature/label/timestamp bytes."""
        h = hashlib.sha256()
        h.update(json.dumps(self.schema.to_json(), sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.categorical, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.dense, dtype="<f8").tobytes())
        for name in self.schema.label_names:
            h.update(np.ascontiguousarray(self.labels[name], dtype="<f8").tobytes())
        if self.timestamp is not None:
            h.update(np.ascontiguousarray(self.timestamp, dtype="<i8").tobytes())
        return h.hexdigest()

    def equals(self, other: "Dataset") -> bool:
        if self.schema != other.schema or len(self) != len(other):
            return False
        same = np.array_equal(self.categorical, other.categorical)
        same &= np.array_equal(self.dense, other.dense)
        same &= all(np.array_equal(self.labels[k], other.labels[k]) for k in self.labels)
        if (self.timestamp is None) != (other.timestamp is None):
            return False
        if self.timestamp is not None:
            same &= np.array_equal(self.timestamp, other.timestamp)
        return bool(same)


def apply_gating(labels: dict, gate: str, specs) -> dict:
    """Force every label gated by ``gate`` off when the gate is off.

    ``specs`` is an iterable of :class:`LabelSpec` (or anything with ``name``,
    ``kind`` and ``gated_by``).  Works on scalar rows and on column arrays.
    """
    g = labels[gate]
    out = dict(labels)
    for spec in specs:
        if spec.gated_by != gate or spec.name not in labels:
            continue
        value = labels[spec.name]
        if np.ndim(value) == 0:
            if g == 0:
                out[spec.name] = 0 if spec.kind == "binary" else 0.0
        else:
            out[spec.name] = np.where(np.asarray(g) == 0, 0.0, value)
    return out


def check_gating(schema: FeatureSchema, labels: dict) -> int | None:
    """Index of the first row violating the gating invariant, else None."""
    bad = None
    for lab in schema.labels:
        if lab.gated_by is None:
            continue
        viol = (np.asarray(labels[lab.name]) != 0) & (np.asarray(labels[lab.gated_by]) == 0)
        if viol.any():
            first = int(np.argmax(viol))
            bad = first if bad is None else min(bad, first)
    return bad


def transform_stay_time(t):
    """``ln(1 + t)`` so that an absent stay (t = 0) maps to 0.0."""
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DataError("stay time must be a nonnegative number")
    out = np.log1p(arr)
    return float(out) if out.ndim == 0 else out


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(dataset: Dataset, path) -> Path:
    """Write features, labels and timestamp; floats round-trip exactly."""
    path = Path(path)
    schema = dataset.schema
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(schema.columns)
        cat = dataset.categorical.tolist()
        den = dataset.dense.tolist()
        labs = [dataset.labels[k].tolist() for k in schema.label_names]
        kinds = [lab.kind for lab in schema.labels]
        ts = None if dataset.timestamp is None else dataset.timestamp.tolist()
        for i in range(len(dataset)):
            row = [ts[i]] if schema.timestamp else []
            row += cat[i]
            row += [_fmt(v) for v in den[i]]
            row += [int(col[i]) if kind == "binary" else _fmt(col[i])
                    for col, kind in zip(labs, kinds)]
            writer.writerow(row)
    return path


def load_csv(path, schema: FeatureSchema) -> Dataset:
    """Read a CSV written against ``schema``.

    Unseen or out-of-range categorical ids map to the reserved OOV id.
    Missing columns, unparsable values, non-binary binary labels and gating
    violations raise :class:`DataError` with the 1-based data row.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty (no header)") from None
        missing = [c for c in schema.columns if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        pos = {name: header.index(name) for name in schema.columns}
        cats, dens, labs, stamps = [], [], {k: [] for k in schema.label_names}, []
        vocab = [v for _, v in schema.categoricals]
        for rowno, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(row)}", row=rowno)
            try:
                crow = []
                for (name, v) in schema.categoricals:
                    cid = int(row[pos[name]])
                    crow.append(cid if 0 <= cid < v else v)
                cats.append(crow)
                drow = [float(row[pos[name]]) for name in schema.denses]
                if not all(math.isfinite(x) for x in drow):
                    raise ValueError("non-finite dense value")
                dens.append(drow)
                for lab in schema.labels:
                    value = float(row[pos[lab.name]])
                    if lab.kind == "binary" and value not in (0.0, 1.0):
                        raise DataError(f"binary label {lab.name!r} has value {row[pos[lab.name]]!r}",
                                        row=rowno)
                    if not math.isfinite(value):
                        raise ValueError(f"non-finite label {lab.name!r}")
                    labs[lab.name].append(value)
                if schema.timestamp:
                    stamps.append(int(row[pos[schema.timestamp]]))
            except ValueError as exc:
                if isinstance(exc, DataError):
                    raise
                raise DataError(f"unparsable value: {exc}", row=rowno) from None
            for lab in schema.labels:
                if lab.gated_by and labs[lab.name][-1] != 0 and labs[lab.gated_by][-1] == 0:
                    raise DataError(
                        f"gating violation: {lab.name!r} is on while {lab.gated_by!r} is off",
                        row=rowno,
                    )
    n = len(cats)
    return Dataset(
        schema,
        np.array(cats, dtype=np.int64).reshape(n, len(vocab)),
        np.array(dens, dtype=np.float64).reshape(n, len(schema.denses)),
        {k: np.array(v, dtype=np.float64) for k, v in labs.items()},
        np.array(stamps, dtype=np.int64) if schema.timestamp else None,
    )


def write_ground_truth(dataset: Dataset, path) -> Path:
    """Sidecar CSV holding the generator's per-sample conditionals."""
    if dataset.ground_truth is None:
        raise DataError("dataset carries no ground truth")
    path = Path(path)
    keys = sorted(dataset.ground_truth)
    cols = [dataset.ground_truth[k].tolist() for k in keys]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys)
        for i in range(len(dataset)):
            writer.writerow([_fmt(c[i]) for c in cols])
    return path


def read_ground_truth(path) -> dict[str, np.ndarray]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        keys = next(reader)
        rows = [[float(x) for x in row] for row in reader if row]
    arr = np.array(rows, dtype=np.float64).reshape(len(rows), len(keys))
    return {k: arr[:, j] for j, k in enumerate(keys)}


def with_ground_truth(dataset: Dataset, truth: dict) -> Dataset:
    for k, v in truth.items():
        if len(v) != len(dataset):
            raise DataError(f"ground-truth column {k!r} length does not match dataset")
    return Dataset(dataset.schema, dataset.categorical, dataset.dense, dataset.labels,
                   dataset.timestamp, dict(truth))


def time_split(dataset: Dataset, train_fraction: float) -> tuple[Dataset, Dataset, Dataset]:
    """Chronological split: earliest ``train_fraction`` of rows to train,
    the remainder halved into validation then test.  No shuffling.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError("train_fraction must lie strictly between 0 and 1")
    if dataset.timestamp is None:
        raise DataError("dataset has no timestamp column")
    order = np.argsort(dataset.timestamp, kind="stable")
    n = len(dataset)
    n_train = int(round(train_fraction * n))
    n_valid = (n - n_train) // 2
    return (
        dataset.subset(order[:n_train]),
        dataset.subset(order[n_train:n_train + n_valid]),
        dataset.subset(order[n_train + n_valid:]),
    )
