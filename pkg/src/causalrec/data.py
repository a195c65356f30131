"""Interaction-log ingestion, validation, indexing, and time splits.

A log is a flat list of (user, item, treatment, outcome) observations with
optional browsing-position fields and per-side dense feature vectors. Storage
is columnar (one numpy array per field) so that multi-million-record logs
stay cheap to scan; `InteractionRecord` is a per-row view for small fixtures
and tests.

Feature vectors are attached to users and items, not to individual records:
they are pre-treatment attributes, so a user appearing in many records must
carry the same vector every time. Ingestion enforces this.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ParseError, ValidationError

# Sentinels inside integer/float columns for "field not present".
NO_POSITION = -1
_MAX_ERRORS_LISTED = 10


@dataclass(frozen=True)
class DatasetSchema:
    """Per-dataset feature-length and treatment-arity metadata."""

    f_u: int
    f_i: int
    l: int = 2
    user_feature_names: tuple[str, ...] | None = None
    item_feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.f_u < 0 or self.f_i < 0:
            raise ValidationError("feature lengths must be nonnegative")
        if self.l < 2:
            raise ValidationError(f"need at least 2 treatment arms, got l={self.l}")
        for names, length, side in (
            (self.user_feature_names, self.f_u, "user"),
            (self.item_feature_names, self.f_i, "item"),
        ):
            if names is not None and len(names) != length:
                raise ValidationError(
                    f"{side} feature names ({len(names)}) do not match length {length}"
                )


@dataclass(frozen=True)
class InteractionRecord:
    """One (user, item, treatment, outcome) observation.

    `position` is the display rank of the item in its session; and
    `leave_position` the last rank the session's user browsed. Both are None
    for logs without browsing information. When both are present the
    exposure rule holds: treatment is 1 exactly when position <= leave_position.
    """

    user_id: str
    item_id: str
    treatment: int
    outcome: int
    position: int | None
    leave_position: int | None
    user_features: np.ndarray
    item_features: np.ndarray
    timestamp: float | None = None


class Dataset:
    """An indexed, validated, immutable interaction log.

    Record fields live in parallel numpy arrays; `u` and `i` hold contiguous
    integer remappings of the opaque identifiers (first-appearance order).
    `user_features` / `item_features` are (m x f_u) / (n x f_i) matrices
    indexed by the remapped ids.
    """

    def __init__(
        self,
        schema: DatasetSchema,
        user_ids: list[str],
        item_ids: list[str],
        u: np.ndarray,
        i: np.ndarray,
        t: np.ndarray,
        y: np.ndarray,
        position: np.ndarray,
        leave_position: np.ndarray,
        timestamp: np.ndarray,
        user_features: np.ndarray,
        item_features: np.ndarray,
        validate: bool = True,
    ):
        self.schema = schema
        self.user_ids = user_ids
        self.item_ids = item_ids
        self.user_index = {uid: k for k, uid in enumerate(user_ids)}
        self.item_index = {iid: k for k, iid in enumerate(item_ids)}
        self.u = np.asarray(u, dtype=np.int32)
        self.i = np.asarray(i, dtype=np.int32)
        self.t = np.asarray(t, dtype=np.int8)
        self.y = np.asarray(y, dtype=np.int8)
        self.position = np.asarray(position, dtype=np.int32)
        self.leave_position = np.asarray(leave_position, dtype=np.int32)
        self.timestamp = np.asarray(timestamp, dtype=np.float64)
        self.user_features = np.asarray(user_features, dtype=np.float64)
        self.item_features = np.asarray(item_features, dtype=np.float64)
        if validate:
            self._validate()

    # -- construction ------------------------------------------------------

    @classmethod
    def from_records(
        cls, records: Sequence[InteractionRecord], schema: DatasetSchema
    ) -> "Dataset":
        """Build an indexed dataset from record objects (small-data path)."""
        n_rec = len(records)
        user_ids: list[str] = []
        item_ids: list[str] = []
        uix: dict[str, int] = {}
        iix: dict[str, int] = {}
        u = np.empty(n_rec, dtype=np.int64)
        i = np.empty(n_rec, dtype=np.int64)
        t = np.empty(n_rec, dtype=np.int8)
        y = np.empty(n_rec, dtype=np.int8)
        pos = np.full(n_rec, NO_POSITION, dtype=np.int64)
        leave = np.full(n_rec, NO_POSITION, dtype=np.int64)
        ts = np.full(n_rec, np.nan, dtype=np.float64)
        ufeat: list[np.ndarray] = []
        ifeat: list[np.ndarray] = []
        problems: list[str] = []
        for k, rec in enumerate(records):
            uf = np.asarray(rec.user_features, dtype=np.float64)
            if_ = np.asarray(rec.item_features, dtype=np.float64)
            if uf.shape != (schema.f_u,):
                problems.append(f"record {k}: user feature length {uf.size} != {schema.f_u}")
                continue
            if if_.shape != (schema.f_i,):
                problems.append(f"record {k}: item feature length {if_.size} != {schema.f_i}")
                continue
            if rec.user_id in uix:
                uk = uix[rec.user_id]
                if not np.array_equal(ufeat[uk], uf):
                    problems.append(
                        f"record {k}: user {rec.user_id!r} has inconsistent features"
                    )
                    continue
            else:
                uk = uix[rec.user_id] = len(user_ids)
                user_ids.append(rec.user_id)
                ufeat.append(uf)
            if rec.item_id in iix:
                ik = iix[rec.item_id]
                if not np.array_equal(ifeat[ik], if_):
                    problems.append(
                        f"record {k}: item {rec.item_id!r} has inconsistent features"
                    )
                    continue
            else:
                ik = iix[rec.item_id] = len(item_ids)
                item_ids.append(rec.item_id)
                ifeat.append(if_)
            u[k], i[k], t[k], y[k] = uk, ik, rec.treatment, rec.outcome
            if rec.position is not None:
                pos[k] = rec.position
            if rec.leave_position is not None:
                leave[k] = rec.leave_position
            if rec.timestamp is not None:
                ts[k] = rec.timestamp
        if problems:
            raise ValidationError(_summarize(problems))
        uf_mat = (
            np.vstack(ufeat) if ufeat else np.empty((0, schema.f_u), dtype=np.float64)
        )
        if_mat = (
            np.vstack(ifeat) if ifeat else np.empty((0, schema.f_i), dtype=np.float64)
        )
        return cls(
            schema, user_ids, item_ids, u, i, t, y, pos, leave, ts, uf_mat, if_mat
        )

    def _validate(self):
        n_rec = len(self.u)
        lengths = {
            len(a)
            for a in (self.i, self.t, self.y, self.position, self.leave_position, self.timestamp)
        }
        if lengths - {n_rec}:
            raise ValidationError("record columns have mismatched lengths")
        if self.user_features.shape != (len(self.user_ids), self.schema.f_u):
            raise ValidationError("user feature matrix shape does not match index")
        if self.item_features.shape != (len(self.item_ids), self.schema.f_i):
            raise ValidationError("item feature matrix shape does not match index")
        problems: list[str] = []
        bad = np.flatnonzero((self.t < 0) | (self.t >= self.schema.l))
        problems += [f"record {k}: treatment {self.t[k]} outside 0..{self.schema.l - 1}" for k in bad[:_MAX_ERRORS_LISTED]]
        bad = np.flatnonzero((self.y != 0) & (self.y != 1))
        problems += [f"record {k}: outcome {self.y[k]} is not binary" for k in bad[:_MAX_ERRORS_LISTED]]
        if n_rec and (self.u.min(initial=0) < 0 or self.u.max(initial=-1) >= len(self.user_ids)):
            problems.append("user index out of range")
        if n_rec and (self.i.min(initial=0) < 0 or self.i.max(initial=-1) >= len(self.item_ids)):
            problems.append("item index out of range")
        both = (self.position != NO_POSITION) & (self.leave_position != NO_POSITION)
        want_treated = self.position <= self.leave_position
        bad = np.flatnonzero(both & ((self.t == 1) != want_treated))
        problems += [
            f"record {k}: treatment={self.t[k]} inconsistent with position "
            f"{self.position[k]} vs leave_position {self.leave_position[k]}"
            for k in bad[:_MAX_ERRORS_LISTED]
        ]
        if problems:
            raise ValidationError(_summarize(problems))
        # At most one observation per (u, i, t) triple.
        key = (
            self.u.astype(np.int64) * len(self.item_ids) + self.i
        ) * self.schema.l + self.t
        order = np.argsort(key, kind="stable")
        dup_at = np.flatnonzero(np.diff(key[order]) == 0)
        if dup_at.size:
            examples = []
            for j in dup_at[:_MAX_ERRORS_LISTED]:
                k = order[j + 1]
                examples.append(
                    f"records {order[j]} and {k}: duplicate "
                    f"({self.user_ids[self.u[k]]!r}, {self.item_ids[self.i[k]]!r}, t={self.t[k]})"
                )
            raise ValidationError(
                _summarize([f"{dup_at.size} duplicate (user, item, treatment) triples"] + examples)
            )

    # -- views -------------------------------------------------------------

    @property
    def m(self) -> int:
        return len(self.user_ids)

    @property
    def n(self) -> int:
        return len(self.item_ids)

    @property
    def l(self) -> int:
        return self.schema.l

    @property
    def n_records(self) -> int:
        return len(self.u)

    def __len__(self) -> int:
        return len(self.u)

    def record(self, k: int) -> InteractionRecord:
        pos = int(self.position[k])
        leave = int(self.leave_position[k])
        ts = float(self.timestamp[k])
        return InteractionRecord(
            user_id=self.user_ids[self.u[k]],
            item_id=self.item_ids[self.i[k]],
            treatment=int(self.t[k]),
            outcome=int(self.y[k]),
            position=None if pos == NO_POSITION else pos,
            leave_position=None if leave == NO_POSITION else leave,
            user_features=self.user_features[self.u[k]],
            item_features=self.item_features[self.i[k]],
            timestamp=None if math.isnan(ts) else ts,
        )

    def __iter__(self) -> Iterator[InteractionRecord]:
        return (self.record(k) for k in range(len(self)))

    def has_browsing_positions(self) -> bool:
        """True when at least one record carries both position fields."""
        return bool(
            np.any((self.position != NO_POSITION) & (self.leave_position != NO_POSITION))
        )

    def subset(self, mask: np.ndarray) -> "Dataset":
        """Records selected by boolean mask; shares index tables and features."""
        ds = Dataset(
            self.schema,
            self.user_ids,
            self.item_ids,
            self.u[mask],
            self.i[mask],
            self.t[mask],
            self.y[mask],
            self.position[mask],
            self.leave_position[mask],
            self.timestamp[mask],
            self.user_features,
            self.item_features,
            validate=False,
        )
        return ds


def _summarize(problems: list[str]) -> str:
    shown = problems[: _MAX_ERRORS_LISTED + 1]
    suffix = "" if len(problems) <= len(shown) else f" (+{len(problems) - len(shown)} more)"
    return "; ".join(shown) + suffix


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    """Field-for-field equality of the record streams and schemas.

    Identifiers are opaque, so records are compared decoded; the contiguous
    index assignment (a function of id appearance order) may differ between
    two equal datasets. Feature matrices are compared bitwise, aligned by id.
    """
    if a.schema != b.schema or len(a) != len(b):
        return False
    if set(a.user_ids) != set(b.user_ids) or set(a.item_ids) != set(b.item_ids):
        return False
    a_users = np.asarray(a.user_ids, dtype=object)
    b_users = np.asarray(b.user_ids, dtype=object)
    a_items = np.asarray(a.item_ids, dtype=object)
    b_items = np.asarray(b.item_ids, dtype=object)
    if not np.array_equal(a_users[a.u], b_users[b.u]):
        return False
    if not np.array_equal(a_items[a.i], b_items[b.i]):
        return False
    int_cols = ("t", "y", "position", "leave_position")
    if not all(np.array_equal(getattr(a, c), getattr(b, c)) for c in int_cols):
        return False
    if not np.array_equal(a.timestamp, b.timestamp, equal_nan=True):
        return False
    b_u_perm = np.array([b.user_index[uid] for uid in a.user_ids])
    b_i_perm = np.array([b.item_index[iid] for iid in a.item_ids])
    return np.array_equal(a.user_features, b.user_features[b_u_perm]) and np.array_equal(
        a.item_features, b.item_features[b_i_perm]
    )


# -- serialization ----------------------------------------------------------

_CSV_COLUMNS = [
    "user_id",
    "item_id",
    "treatment",
    "outcome",
    "position",
    "leave_position",
    "timestamp",
    "user_features",
    "item_features",
]


def _fmt_float(x: float) -> str:
    # repr round-trips exactly, keeping save -> load bit-identical.
    return repr(float(x))


def _fmt_vec(v: np.ndarray) -> str:
    return ";".join(_fmt_float(x) for x in v)


def _parse_vec(cell: str, length: int, line: int, side: str) -> np.ndarray:
    if cell == "":
        parts: list[str] = []
    else:
        parts = cell.split(";")
    if len(parts) != length:
        raise ParseError(f"{side} feature vector has {len(parts)} entries, expected {length}", line)
    try:
        return np.array([float(p) for p in parts], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"bad {side} feature value: {exc}", line) from None


def detect_format(path: str | Path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix in (".jsonl", ".ndjson"):
        return "jsonl"
    return "csv"


def save_dataset(ds: Dataset, path: str | Path, format: str | None = None) -> None:
    """Write the log in the CSV or JSONL schema (see README for layouts)."""
    fmt = format or detect_format(path)
    path = Path(path)
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            header = f"# f_u={ds.schema.f_u} f_i={ds.schema.f_i} l={ds.schema.l}"
            if ds.schema.user_feature_names:
                header += " u_names=" + ";".join(ds.schema.user_feature_names)
            if ds.schema.item_feature_names:
                header += " i_names=" + ";".join(ds.schema.item_feature_names)
            fh.write(header + "\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(_CSV_COLUMNS)
            for k in range(len(ds)):
                pos = ds.position[k]
                leave = ds.leave_position[k]
                ts = ds.timestamp[k]
                writer.writerow(
                    [
                        ds.user_ids[ds.u[k]],
                        ds.item_ids[ds.i[k]],
                        int(ds.t[k]),
                        int(ds.y[k]),
                        "" if pos == NO_POSITION else int(pos),
                        "" if leave == NO_POSITION else int(leave),
                        "" if math.isnan(ts) else _fmt_float(ts),
                        _fmt_vec(ds.user_features[ds.u[k]]),
                        _fmt_vec(ds.item_features[ds.i[k]]),
                    ]
                )
    elif fmt == "jsonl":
        with path.open("w") as fh:
            head: dict = {"f_u": ds.schema.f_u, "f_i": ds.schema.f_i, "l": ds.schema.l}
            if ds.schema.user_feature_names:
                head["user_feature_names"] = list(ds.schema.user_feature_names)
            if ds.schema.item_feature_names:
                head["item_feature_names"] = list(ds.schema.item_feature_names)
            fh.write(json.dumps(head) + "\n")
            for rec in ds:
                obj = {
                    "user_id": rec.user_id,
                    "item_id": rec.item_id,
                    "treatment": rec.treatment,
                    "outcome": rec.outcome,
                    "position": rec.position,
                    "leave_position": rec.leave_position,
                    "timestamp": rec.timestamp,
                    "user_features": [float(x) for x in rec.user_features],
                    "item_features": [float(x) for x in rec.item_features],
                }
                fh.write(json.dumps(obj) + "\n")
    else:
        raise ValidationError(f"unknown format {fmt!r}")


def _parse_schema_line(line: str, lineno: int) -> DatasetSchema:
    if not line.startswith("#"):
        raise ParseError("missing schema line '# f_u=.. f_i=.. l=..'", lineno)
    fields: dict[str, str] = {}
    for tok in line[1:].split():
        if "=" not in tok:
            raise ParseError(f"bad schema token {tok!r}", lineno)
        k, v = tok.split("=", 1)
        fields[k] = v
    try:
        return DatasetSchema(
            f_u=int(fields["f_u"]),
            f_i=int(fields["f_i"]),
            l=int(fields.get("l", "2")),
            user_feature_names=tuple(fields["u_names"].split(";")) if "u_names" in fields else None,
            item_feature_names=tuple(fields["i_names"].split(";")) if "i_names" in fields else None,
        )
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad schema line: {exc}", lineno) from None


def _opt_int(cell: str, line: int, name: str) -> int | None:
    if cell == "":
        return None
    try:
        v = int(cell)
    except ValueError:
        raise ParseError(f"bad {name} {cell!r}", line) from None
    if v < 0:
        raise ParseError(f"{name} must be nonnegative, got {v}", line)
    return v


def load_dataset(path: str | Path, format: str | None = None) -> Dataset:
    """Parse and validate a CSV/JSONL log into an indexed Dataset.

    Raises ParseError with the offending line number on malformed rows and
    ValidationError (listing rows) on invariant violations.
    """
    fmt = format or detect_format(path)
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    records: list[InteractionRecord] = []
    if fmt == "csv":
        with path.open(newline="") as fh:
            first = fh.readline()
            schema = _parse_schema_line(first.rstrip("\n"), 1)
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != _CSV_COLUMNS:
                raise ParseError(f"expected columns {_CSV_COLUMNS}, got {header}", 2)
            for lineno, row in enumerate(reader, start=3):
                if not row:
                    continue
                if len(row) != len(_CSV_COLUMNS):
                    raise ParseError(f"expected {len(_CSV_COLUMNS)} cells, got {len(row)}", lineno)
                try:
                    treatment = int(row[2])
                    outcome = int(row[3])
                except ValueError as exc:
                    raise ParseError(str(exc), lineno) from None
                ts = None
                if row[6] != "":
                    try:
                        ts = float(row[6])
                    except ValueError:
                        raise ParseError(f"bad timestamp {row[6]!r}", lineno) from None
                records.append(
                    InteractionRecord(
                        user_id=row[0],
                        item_id=row[1],
                        treatment=treatment,
                        outcome=outcome,
                        position=_opt_int(row[4], lineno, "position"),
                        leave_position=_opt_int(row[5], lineno, "leave_position"),
                        user_features=_parse_vec(row[7], schema.f_u, lineno, "user"),
                        item_features=_parse_vec(row[8], schema.f_i, lineno, "item"),
                        timestamp=ts,
                    )
                )
    elif fmt == "jsonl":
        with path.open() as fh:
            first = fh.readline()
            try:
                head = json.loads(first)
                schema = DatasetSchema(
                    f_u=int(head["f_u"]),
                    f_i=int(head["f_i"]),
                    l=int(head.get("l", 2)),
                    user_feature_names=tuple(head["user_feature_names"])
                    if head.get("user_feature_names")
                    else None,
                    item_feature_names=tuple(head["item_feature_names"])
                    if head.get("item_feature_names")
                    else None,
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad JSONL header: {exc}", 1) from None
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    records.append(
                        InteractionRecord(
                            user_id=str(obj["user_id"]),
                            item_id=str(obj["item_id"]),
                            treatment=int(obj["treatment"]),
                            outcome=int(obj["outcome"]),
                            position=obj.get("position"),
                            leave_position=obj.get("leave_position"),
                            user_features=np.asarray(obj["user_features"], dtype=np.float64),
                            item_features=np.asarray(obj["item_features"], dtype=np.float64),
                            timestamp=obj.get("timestamp"),
                        )
                    )
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise ParseError(str(exc), lineno) from None
                rec = records[-1]
                if rec.user_features.shape != (schema.f_u,):
                    raise ParseError(
                        f"user feature vector has {rec.user_features.size} entries, "
                        f"expected {schema.f_u}",
                        lineno,
                    )
                if rec.item_features.shape != (schema.f_i,):
                    raise ParseError(
                        f"item feature vector has {rec.item_features.size} entries, "
                        f"expected {schema.f_i}",
                        lineno,
                    )
    else:
        raise ValidationError(f"unknown format {fmt!r}")
    return Dataset.from_records(records, schema)


def dataset_manifest(ds: Dataset, data_path: str | Path) -> dict:
    """Summary block for reproducibility manifests: sizes plus a content hash."""
    digest = hashlib.sha256(Path(data_path).read_bytes()).hexdigest()
    return {
        "m": ds.m,
        "n": ds.n,
        "l": ds.l,
        "f_u": ds.schema.f_u,
        "f_i": ds.schema.f_i,
        "n_records": ds.n_records,
        "checksum_sha256": digest,
    }


def write_dataset_manifest(ds: Dataset, data_path: str | Path, manifest_path: str | Path) -> None:
    Path(manifest_path).write_text(json.dumps(dataset_manifest(ds, data_path), indent=2) + "\n")


# -- splitting ---------------------------------------------------------------


def split_by_time(ds: Dataset, boundary: float) -> tuple[Dataset, Dataset]:
    """Partition into (train, test) by timestamp or by order fraction.

    A boundary strictly inside (0, 1) is an order fraction: the earliest
    round(boundary * n) records form the train side (earliest by timestamp
    when every record has one, else by record order). Any other value is a
    timestamp boundary: train takes records with timestamp <= boundary.
    """
    n_rec = len(ds)
    if n_rec == 0:
        raise ValidationError("cannot split an empty dataset")
    have_ts = ~np.isnan(ds.timestamp)
    if 0.0 < boundary < 1.0:
        n_train = int(round(boundary * n_rec))
        if have_ts.all():
            order = np.argsort(ds.timestamp, kind="stable")
        else:
            order = np.arange(n_rec)
        mask = np.zeros(n_rec, dtype=bool)
        mask[order[:n_train]] = True
    else:
        if not have_ts.all():
            raise ValidationError(
                "timestamp boundary requires a timestamp on every record"
            )
        mask = ds.timestamp <= boundary
    if not mask.any() or mask.all():
        raise ValidationError(
            f"boundary {boundary!r} leaves an empty side "
            f"({int(mask.sum())} train / {int((~mask).sum())} test)"
        )
    return ds.subset(mask), ds.subset(~mask)
