"""Metric manifests and raw IQA score tables.

Two on-disk formats are accepted for score tables, both with the four
fields ``group_id, candidate_id, metric, value``: a CSV with that header,
or JSONL with one object per record. Metric directions and families come
from a separate JSON manifest, never from metric names.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import (
    DuplicateTriple,
    EmptyFamily,
    InvalidManifest,
    MalformedRow,
    NonFiniteValue,
    SingletonGroup,
    SparseGroup,
    UnknownMetric,
)

FIELDS = ("group_id", "candidate_id", "metric", "value")


class Family(str, Enum):
    FR = "FR"
    NR = "NR"


class Direction(str, Enum):
    HIGHER = "higher"
    LOWER = "lower"


@dataclass(frozen=True)
class MetricSpec:
    name: str
    family: Family
    direction: Direction

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "direction", Direction(self.direction))


@dataclass(frozen=True)
class MetricSet:
    metrics: tuple[MetricSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "metrics", tuple(self.metrics))
        names = [m.name for m in self.metrics]
        if len(set(names)) != len(names):
            raise InvalidManifest(f"duplicate metric names in {names}")
        if not names:
            raise InvalidManifest("metric set is empty")

    def __len__(self):
        return len(self.metrics)

    def __iter__(self):
        return iter(self.metrics)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.metrics)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def family_indices(self, family: Family) -> list[int]:
        return [i for i, m in enumerate(self.metrics) if m.family == family]

    def lower_better_mask(self) -> np.ndarray:
        return np.array([m.direction == Direction.LOWER for m in self.metrics])

    def require_both_families(self):
        for fam in Family:
            if not self.family_indices(fam):
                raise EmptyFamily(f"metric set has no {fam.value} metric")

    def to_json(self) -> str:
        return json.dumps(
            [
                {"name": m.name, "family": m.family.value, "direction": m.direction.value}
                for m in self.metrics
            ],
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "MetricSet":
        try:
            entries = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidManifest(f"manifest is not valid JSON: {exc}") from None
        if not isinstance(entries, list):
            raise InvalidManifest("manifest must be a JSON array")
        specs = []
        for i, e in enumerate(entries):
            try:
                specs.append(MetricSpec(e["name"], e["family"], e["direction"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise InvalidManifest(f"bad manifest entry {i}: {e!r} ({exc})") from None
        return cls(tuple(specs))


def load_manifest(path) -> MetricSet:
    with open(path, encoding="utf-8") as f:
        return MetricSet.from_json(f.read())


@dataclass(frozen=True)
class ScoreRecord:
    group_id: str
    candidate_id: str
    metric: str
    value: float


@dataclass(frozen=True)
class ScoreTable:
    metrics: MetricSet
    records: tuple[ScoreRecord, ...]

    @property
    def group_ids(self) -> list[str]:
        return list(dict.fromkeys(r.group_id for r in self.records))


@dataclass(frozen=True, eq=False)
class CandidateGroup:
    """The M rollouts for one conditioning input.

    ``raw_scores`` is M x len(metrics), rows parallel to ``candidate_ids``.
    ``aligned`` marks that lower-is-better columns have been negated.
    """

    group_id: str
    candidate_ids: tuple[str, ...]
    raw_scores: np.ndarray
    aligned: bool = False
    metric_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        scores = np.array(self.raw_scores, dtype=np.float64)
        scores.setflags(write=False)
        object.__setattr__(self, "raw_scores", scores)
        object.__setattr__(self, "candidate_ids", tuple(self.candidate_ids))
        if len(self.candidate_ids) < 2:
            raise SingletonGroup(f"group {self.group_id!r} has a single candidate")
        if scores.shape[0] != len(self.candidate_ids):
            raise ValueError("raw_scores rows must match candidate_ids")

    @property
    def size(self) -> int:
        return len(self.candidate_ids)


def _to_value(raw, line, source) -> float:
    if isinstance(raw, bool) or raw is None:
        raise MalformedRow(f"value {raw!r} is not numeric", line=line, source=source)
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise MalformedRow(f"value {raw!r} is not numeric", line=line, source=source) from None
    if not math.isfinite(value):
        raise NonFiniteValue(f"value {raw!r} is not finite", line=line, source=source)
    return value


def _iter_csv(text: str, source):
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedRow("empty CSV, expected a header", line=1, source=source) from None
    if tuple(h.strip() for h in header) != FIELDS:
        raise MalformedRow(f"expected header {','.join(FIELDS)}, got {header}", line=1, source=source)
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != 4 or not all(cell.strip() for cell in row[:3]):
            raise MalformedRow(f"expected 4 fields, got {row}", line=line, source=source)
        yield line, row[0].strip(), row[1].strip(), row[2].strip(), row[3].strip()


def _iter_jsonl(text: str, source):
    for line, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise MalformedRow(f"invalid JSON ({exc})", line=line, source=source) from None
        if not isinstance(obj, dict) or set(obj) != set(FIELDS):
            raise MalformedRow(f"expected keys {FIELDS}", line=line, source=source)
        ids = [obj["group_id"], obj["candidate_id"], obj["metric"]]
        if not all(isinstance(x, (str, int)) and not isinstance(x, bool) for x in ids):
            raise MalformedRow("identifiers must be strings", line=line, source=source)
        yield line, str(ids[0]), str(ids[1]), str(ids[2]), obj["value"]


def parse_score_table(
    source: bytes | str | IO,
    fmt: str,
    metrics: MetricSet,
    *,
    name: str | None = None,
) -> ScoreTable:
    """Parse a CSV or JSONL score table, validating it against ``metrics``.

    ``source`` may be raw bytes, decoded text, or a readable file object.
    Record order is preserved. Density is checked later by
    :func:`group_candidates`.
    """
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedRow(f"input is not UTF-8 ({exc})", source=name) from None
    fmt = fmt.lower()
    if fmt == "csv":
        rows = _iter_csv(source, name)
    elif fmt == "jsonl":
        rows = _iter_jsonl(source, name)
    else:
        raise ValueError(f"unknown score format {fmt!r}")

    known = set(metrics.names)
    seen = set()
    records = []
    for line, gid, cid, metric, raw in rows:
        if metric not in known:
            raise UnknownMetric(f"metric {metric!r} not in manifest", line=line, source=name)
        key = (gid, cid, metric)
        if key in seen:
            raise DuplicateTriple(
                f"duplicate (group_id, candidate_id, metric) = {key}", line=line, source=name
            )
        seen.add(key)
        records.append(ScoreRecord(gid, cid, metric, _to_value(raw, line, name)))
    return ScoreTable(metrics, tuple(records))


def read_score_table(path, metrics: MetricSet, fmt: str | None = None) -> ScoreTable:
    if fmt is None:
        fmt = "jsonl" if str(path).endswith((".jsonl", ".ndjson")) else "csv"
    with open(path, "rb") as f:
        return parse_score_table(f.read(), fmt, metrics, name=str(path))


def serialize_score_table(table: ScoreTable, fmt: str) -> str:
    fmt = fmt.lower()
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(FIELDS)
        for r in table.records:
            writer.writerow([r.group_id, r.candidate_id, r.metric, repr(r.value)])
        return buf.getvalue()
    if fmt == "jsonl":
        return "".join(
            json.dumps(
                {"group_id": r.group_id, "candidate_id": r.candidate_id, "metric": r.metric, "value": r.value}
            )
            + "\n"
            for r in table.records
        )
    raise ValueError(f"unknown score format {fmt!r}")


def build_score_table(
    metrics: MetricSet,
    group_ids: Sequence[str],
    candidate_ids: Sequence[Sequence[str]],
    scores: Iterable[np.ndarray],
) -> ScoreTable:
    """Assemble a dense table from per-group score matrices (M x metrics)."""
    records = []
    for gid, cids, mat in zip(group_ids, candidate_ids, scores):
        mat = np.asarray(mat, dtype=np.float64)
        for cid, row in zip(cids, mat):
            for name, value in zip(metrics.names, row):
                records.append(ScoreRecord(gid, cid, name, float(value)))
    return ScoreTable(metrics, tuple(records))


def group_candidates(table: ScoreTable) -> list[CandidateGroup]:
    """Partition a table into dense candidate groups, in first-seen order."""
    col = {name: j for j, name in enumerate(table.metrics.names)}
    groups: dict[str, dict[str, dict[str, float]]] = {}
    for r in table.records:
        groups.setdefault(r.group_id, {}).setdefault(r.candidate_id, {})[r.metric] = r.value

    out = []
    for gid, cands in groups.items():
        mat = np.empty((len(cands), len(col)))
        for i, (cid, vals) in enumerate(cands.items()):
            missing = [m for m in col if m not in vals]
            if missing:
                raise SparseGroup(f"group {gid!r} candidate {cid!r} lacks metrics {missing}")
            for name, j in col.items():
                mat[i, j] = vals[name]
        if len(cands) < 2:
            raise SingletonGroup(f"group {gid!r} has a single candidate")
        out.append(CandidateGroup(gid, tuple(cands), mat, metric_names=table.metrics.names))
    return out
