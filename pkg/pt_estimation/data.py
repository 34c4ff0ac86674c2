"""
Ingestion of annotation and prediction tables, and ground-truth derivation.

annotations.csv: item_id, group_id, annotator_id, kind, value[, estimator_id]
predictions.csv: item_id, group_id, estimator_id, sample_idx, value

Direct values are one of DIRECT_LEVELS or a pre-binarized 0/1. Perspective and
prediction values are fractions, given either as decimals ("0.42") or percent
strings ("42%").
"""

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Literal, Sequence, Tuple

import numpy as np
import pandas as pd

from pt_estimation.errors import MissingGroundTruthError, TableValidationError

DIRECT_LEVELS = ("VeryToxic", "Toxic", "Neither", "Healthy", "VeryHealthy")
POSITIVE_LEVELS = frozenset({"VeryToxic", "Toxic"})
BINARY_LABELS = ("0", "1")

ANNOTATION_COLUMNS = ["item_id", "group_id", "annotator_id", "kind", "value"]
PREDICTION_COLUMNS = ["item_id", "group_id", "estimator_id", "sample_idx", "value"]
DEFAULT_PERSPECTIVE_ESTIMATOR = "human_pt"

Kind = Literal["direct", "perspective"]
PoolKey = Tuple[str, str, str]  # (item_id, group_id, estimator_id)
Pools = Dict[PoolKey, np.ndarray]


@dataclass(frozen=True)
class AnnotationRecord:
    item_id: str
    group_id: str
    annotator_id: str
    kind: Kind
    value: str | float  # level name / "0" / "1" for direct, fraction for perspective
    estimator_id: str = DEFAULT_PERSPECTIVE_ESTIMATOR

    @property
    def key(self) -> Tuple[str, str, str, str]:
        return (self.item_id, self.group_id, self.annotator_id, self.kind)


@dataclass(frozen=True)
class PredictionRecord:
    item_id: str
    group_id: str
    estimator_id: str
    sample_idx: int
    value: float

    @property
    def key(self) -> Tuple[str, str, str, int]:
        return (self.item_id, self.group_id, self.estimator_id, self.sample_idx)


@dataclass(frozen=True)
class GroundTruthEntry:
    f_star: float
    support_count: int


def parse_fraction(text: str) -> float:
    """Parse "75%" or "0.75" into a fraction in [0, 1]."""
    raw = str(text).strip()
    if raw.endswith("%"):
        value = float(raw[:-1].strip()) / 100.0
    else:
        value = float(raw)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {raw!r}")
    if value < 0.0 or value > 1.0:
        raise ValueError(f"value {raw!r} outside [0, 1]")
    return value


def parse_direct_value(text: str) -> str:
    raw = str(text).strip()
    if raw in DIRECT_LEVELS or raw in BINARY_LABELS:
        return raw
    raise ValueError(
        f"unknown ordinal level {raw!r} (expected one of {', '.join(DIRECT_LEVELS)} or 0/1)"
    )


def default_binarize(value: str | float) -> int:
    """{VeryToxic, Toxic} -> 1, other levels -> 0; pre-binarized labels pass through."""
    raw = str(value)
    if raw in BINARY_LABELS:
        return int(raw)
    if raw in POSITIVE_LEVELS:
        return 1
    if raw in DIRECT_LEVELS:
        return 0
    raise ValueError(f"cannot binarize {raw!r}")


def _require_columns(frame: pd.DataFrame, required: Sequence[str], source: str):
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise TableValidationError(
            source, [(1, f"missing required column {c!r}") for c in missing]
        )


def _require_ids(row: Dict[str, str], names: Sequence[str]):
    for name in names:
        if not str(row[name]).strip():
            raise ValueError(f"empty {name}")


def _read_csv(source: str) -> pd.DataFrame:
    return pd.read_csv(
        source, dtype=str, keep_default_na=False, encoding="utf-8", skipinitialspace=False
    )


def _record_lines(source: str, n_rows: int) -> List[int]:
    """Physical line on which each data row starts, matching the rows pandas keeps."""
    lines: List[int] = []
    header_seen = False
    with open(source, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        end = 0
        for row in reader:
            start, end = end + 1, reader.line_num
            if not row:
                continue
            if header_seen:
                lines.append(start)
            header_seen = True
    if len(lines) != n_rows:
        return [i + 2 for i in range(n_rows)]
    return lines


@dataclass(frozen=True)
class AnnotationTable:
    records: Tuple[AnnotationRecord, ...]

    @classmethod
    def from_records(
        cls,
        records: Iterable[AnnotationRecord],
        source: str = "<records>",
        lines: Sequence[int] | None = None,
    ) -> "AnnotationTable":
        problems: List[Tuple[int, str]] = []
        seen: Dict[Tuple[str, str, str, str], int] = {}
        checked: List[AnnotationRecord] = []
        for i, rec in enumerate(records):
            line = lines[i] if lines is not None else i + 2
            try:
                checked.append(_check_annotation(rec))
            except ValueError as e:
                problems.append((line, str(e)))
                continue
            if rec.key in seen:
                problems.append(
                    (line, f"duplicate key {rec.key} (first seen on line {seen[rec.key]})")
                )
            else:
                seen[rec.key] = line
        if problems:
            raise TableValidationError(source, problems)
        return cls(tuple(checked))

    def __len__(self) -> int:
        return len(self.records)

    def direct(self) -> List[AnnotationRecord]:
        return [r for r in self.records if r.kind == "direct"]

    def perspective(self) -> List[AnnotationRecord]:
        return [r for r in self.records if r.kind == "perspective"]

    def groups(self) -> List[str]:
        return sorted({r.group_id for r in self.records})

    def perspective_pools(self) -> Pools:
        """Perspective annotations as prediction pools, ordered by annotator_id."""
        grouped: Dict[PoolKey, List[Tuple[str, float]]] = defaultdict(list)
        for r in self.perspective():
            grouped[(r.item_id, r.group_id, r.estimator_id)].append(
                (r.annotator_id, float(r.value))
            )
        return {
            key: np.array([v for _, v in sorted(vals)], dtype=float)
            for key, vals in sorted(grouped.items())
        }


def _check_annotation(rec: AnnotationRecord) -> AnnotationRecord:
    _require_ids(
        {
            "item_id": rec.item_id,
            "group_id": rec.group_id,
            "annotator_id": rec.annotator_id,
        },
        ["item_id", "group_id", "annotator_id"],
    )
    if rec.kind == "direct":
        return AnnotationRecord(
            rec.item_id,
            rec.group_id,
            rec.annotator_id,
            "direct",
            parse_direct_value(str(rec.value)),
            rec.estimator_id,
        )
    if rec.kind == "perspective":
        if isinstance(rec.value, (int, float)):
            value = float(rec.value)
        else:
            value = parse_fraction(rec.value)
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"perspective value {value} outside [0, 1]")
        return AnnotationRecord(
            rec.item_id,
            rec.group_id,
            rec.annotator_id,
            "perspective",
            value,
            rec.estimator_id or DEFAULT_PERSPECTIVE_ESTIMATOR,
        )
    raise ValueError(f"unknown kind {rec.kind!r} (expected direct or perspective)")


def load_annotations(source: str) -> AnnotationTable:
    frame = _read_csv(source)
    _require_columns(frame, ANNOTATION_COLUMNS, str(source))
    has_estimator = "estimator_id" in frame.columns

    records = []
    for row in frame.to_dict(orient="records"):
        kind = str(row["kind"]).strip()
        estimator = str(row["estimator_id"]).strip() if has_estimator else ""
        records.append(
            AnnotationRecord(
                item_id=str(row["item_id"]),
                group_id=str(row["group_id"]),
                annotator_id=str(row["annotator_id"]),
                kind=kind,  # type: ignore[arg-type]
                value=str(row["value"]),
                estimator_id=estimator or DEFAULT_PERSPECTIVE_ESTIMATOR,
            )
        )
    lines = _record_lines(source, len(records))
    return AnnotationTable.from_records(records, source=str(source), lines=lines)


@dataclass(frozen=True)
class PredictionTable:
    records: Tuple[PredictionRecord, ...]

    @classmethod
    def from_records(
        cls,
        records: Iterable[PredictionRecord],
        source: str = "<records>",
        lines: Sequence[int] | None = None,
    ) -> "PredictionTable":
        problems: List[Tuple[int, str]] = []
        seen: Dict[Tuple[str, str, str, int], int] = {}
        checked: List[PredictionRecord] = []
        for i, rec in enumerate(records):
            line = lines[i] if lines is not None else i + 2
            try:
                _require_ids(
                    {
                        "item_id": rec.item_id,
                        "group_id": rec.group_id,
                        "estimator_id": rec.estimator_id,
                    },
                    ["item_id", "group_id", "estimator_id"],
                )
                if rec.sample_idx < 0:
                    raise ValueError(f"negative sample_idx {rec.sample_idx}")
                if not (math.isfinite(rec.value) and 0.0 <= rec.value <= 1.0):
                    raise ValueError(f"value {rec.value} outside [0, 1]")
            except ValueError as e:
                problems.append((line, str(e)))
                continue
            if rec.key in seen:
                problems.append(
                    (line, f"duplicate key {rec.key} (first seen on line {seen[rec.key]})")
                )
            else:
                seen[rec.key] = line
                checked.append(rec)
        if problems:
            raise TableValidationError(source, problems)
        return cls(tuple(checked))

    def __len__(self) -> int:
        return len(self.records)

    def estimators(self) -> List[str]:
        return sorted({r.estimator_id for r in self.records})

    def pools(self) -> Pools:
        """(item, group, estimator) -> predictions ordered by sample_idx."""
        grouped: Dict[PoolKey, List[Tuple[int, float]]] = defaultdict(list)
        for r in self.records:
            grouped[(r.item_id, r.group_id, r.estimator_id)].append(
                (r.sample_idx, r.value)
            )
        return {
            key: np.array([v for _, v in sorted(vals)], dtype=float)
            for key, vals in sorted(grouped.items())
        }

    def merged(self, other: "PredictionTable") -> "PredictionTable":
        return PredictionTable.from_records(self.records + other.records)


def load_predictions(source: str) -> PredictionTable:
    frame = _read_csv(source)
    _require_columns(frame, PREDICTION_COLUMNS, str(source))

    lines = _record_lines(source, len(frame))
    problems: List[Tuple[int, str]] = []
    records = []
    for line, row in zip(lines, frame.to_dict(orient="records")):
        try:
            raw_idx = str(row["sample_idx"]).strip()
            if not raw_idx.isdigit():
                raise ValueError(f"sample_idx {raw_idx!r} is not a non-negative integer")
            records.append(
                PredictionRecord(
                    item_id=str(row["item_id"]),
                    group_id=str(row["group_id"]),
                    estimator_id=str(row["estimator_id"]),
                    sample_idx=int(raw_idx),
                    value=parse_fraction(row["value"]),
                )
            )
        except ValueError as e:
            problems.append((line, str(e)))
    if problems:
        raise TableValidationError(str(source), problems)
    return PredictionTable.from_records(records, source=str(source), lines=lines)


def load_prediction_files(sources: Sequence[str]) -> PredictionTable:
    records: List[PredictionRecord] = []
    for source in sources:
        records.extend(load_predictions(source).records)
    return PredictionTable.from_records(records, source=", ".join(sources))


@dataclass(frozen=True)
class GroundTruthTable:
    entries: Dict[Tuple[str, str], GroundTruthEntry]

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: Tuple[str, str]) -> bool:
        return key in self.entries

    def f_star(self, item_id: str, group_id: str) -> float:
        return self.entries[(item_id, group_id)].f_star

    def groups(self) -> List[str]:
        return sorted({g for _, g in self.entries})

    def items(self, group_id: str) -> List[str]:
        return sorted(x for x, g in self.entries if g == group_id)


def derive_ground_truth(
    table: AnnotationTable,
    binarize: Callable[[str | float], int] = default_binarize,
    keys: Iterable[Tuple[str, str]] | None = None,
) -> GroundTruthTable:
    """
    f_star(x, g) = fraction of direct annotators whose binarized rating is 1.

    With keys=None every (item, group) holding a direct annotation is derived;
    explicitly requested keys without direct annotations are an error.
    """
    labels: Dict[Tuple[str, str], List[int]] = defaultdict(list)
    for r in table.direct():
        label = binarize(r.value)
        if label not in (0, 1):
            raise ValueError(f"binarize rule returned {label!r} for {r.value!r}")
        labels[(r.item_id, r.group_id)].append(label)

    wanted = sorted(labels) if keys is None else sorted(set(keys))
    missing = [k for k in wanted if k not in labels]
    if missing:
        raise MissingGroundTruthError(
            f"{len(missing)} (item, group) key(s) have no direct annotations, e.g. {missing[:5]}"
        )

    return GroundTruthTable(
        {
            key: GroundTruthEntry(
                f_star=sum(labels[key]) / len(labels[key]),
                support_count=len(labels[key]),
            )
            for key in wanted
        }
    )


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def write_annotations(table: AnnotationTable, path: str) -> None:
    with_estimator = any(
        r.kind == "perspective" and r.estimator_id != DEFAULT_PERSPECTIVE_ESTIMATOR
        for r in table.records
    )
    rows = []
    for r in table.records:
        row = {
            "item_id": r.item_id,
            "group_id": r.group_id,
            "annotator_id": r.annotator_id,
            "kind": r.kind,
            "value": _fmt(float(r.value)) if r.kind == "perspective" else str(r.value),
        }
        if with_estimator:
            row["estimator_id"] = r.estimator_id if r.kind == "perspective" else ""
        rows.append(row)
    columns = ANNOTATION_COLUMNS + (["estimator_id"] if with_estimator else [])
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False, encoding="utf-8")


def write_predictions(table: PredictionTable, path: str) -> None:
    rows = [
        {
            "item_id": r.item_id,
            "group_id": r.group_id,
            "estimator_id": r.estimator_id,
            "sample_idx": r.sample_idx,
            "value": _fmt(r.value),
        }
        for r in table.records
    ]
    pd.DataFrame(rows, columns=PREDICTION_COLUMNS).to_csv(
        path, index=False, encoding="utf-8"
    )


def write_ground_truth(truth: GroundTruthTable, path: str) -> None:
    rows = [
        {
            "item_id": item,
            "group_id": group,
            "f_star": _fmt(entry.f_star),
            "support_count": entry.support_count,
        }
        for (item, group), entry in sorted(truth.entries.items())
    ]
    pd.DataFrame(
        rows, columns=["item_id", "group_id", "f_star", "support_count"]
    ).to_csv(path, index=False, encoding="utf-8")
