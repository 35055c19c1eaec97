"""On-disk artifacts passed between pipeline stages.

Every JSONL artifact has a JSON schema in ``SCHEMAS``; readers validate
each row. Floats are written with ``repr`` so a read/write cycle is exact.
"""

from __future__ import annotations

import csv
import json
import os
from typing import Iterable, Iterator, Sequence

import jsonschema
import numpy as np

from .curation import PreferencePair
from .errors import MalformedRow
from .hpo import HpoMode, WeightedPair, WeightedPairDataset
from .reward import RewardVector, rank_candidates

_ID = {"type": "string", "minLength": 1}
_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}


def _obj(**props):
    return {"type": "object", "properties": props, "required": list(props), "additionalProperties": False}


SCHEMAS = {
    "rewards": _obj(group_id=_ID, candidate_id=_ID, reward={"type": "number", "minimum": 0, "maximum": 1},
                    rank={"type": "integer", "minimum": 1}),
    "pairs": _obj(group_id=_ID, winner_id=_ID, loser_id=_ID, reward_gap={"type": "number", "minimum": 0}),
    "weighted_pairs": _obj(group_id=_ID, winner_id=_ID, loser_id=_ID, reward_gap={"type": "number", "minimum": 0},
                           w_intra={"type": "number", "minimum": 0}, w_inter={"type": "number", "minimum": 0},
                           w_total={"type": "number", "minimum": 0}),
    "rollouts": _obj(group_id=_ID, candidate_id=_ID, cond=_VEC, sample=_VEC, seed={"type": "integer"}),
    "conditions": _obj(group_id=_ID, cond=_VEC, target=_VEC),
}

TRAINLOG_COLUMNS = ("iteration", "loss", "best", "mean", "worst")
SWEEP_COLUMNS = ("M", "N", "ratio", "iteration", "loss", "best", "mean", "worst")
SWEEP_CELL_COLUMNS = ("M", "N", "ratio", "status", "best", "mean", "worst", "error")


def write_jsonl(path, rows: Iterable[dict]):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for r in rows:
            f.write(json.dumps(r) + "\n")


def read_jsonl(path, kind: str | None = None) -> Iterator[dict]:
    validator = jsonschema.Draft7Validator(SCHEMAS[kind]) if kind else None
    with open(path, encoding="utf-8") as f:
        for line, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            try:
                row = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise MalformedRow(f"invalid JSON ({exc})", line=line, source=str(path)) from None
            if validator is not None:
                err = next(iter(validator.iter_errors(row)), None)
                if err is not None:
                    raise MalformedRow(f"{kind} row invalid: {err.message}", line=line, source=str(path))
            yield row


# --- rewards -------------------------------------------------------------------


def reward_rows(groups: Sequence[RewardVector]) -> list[dict]:
    rows = []
    for rv in groups:
        rank = np.empty(len(rv), dtype=int)
        rank[rank_candidates(rv)] = np.arange(1, len(rv) + 1)
        for cid, r, k in zip(rv.candidate_ids, rv.rewards, rank):
            rows.append({"group_id": rv.group_id, "candidate_id": cid, "reward": float(r), "rank": int(k)})
    return rows


def read_rewards(path) -> list[RewardVector]:
    groups: dict[str, list[tuple[str, float]]] = {}
    for row in read_jsonl(path, "rewards"):
        groups.setdefault(row["group_id"], []).append((row["candidate_id"], float(row["reward"])))
    return [RewardVector(gid, [c for c, _ in rows], [r for _, r in rows]) for gid, rows in groups.items()]


# --- pairs ----------------------------------------------------------------------


def read_weighted_pairs(path) -> WeightedPairDataset:
    pairs = []
    for row in read_jsonl(path, "weighted_pairs"):
        p = PreferencePair(row["group_id"], row["winner_id"], row["loser_id"], float(row["reward_gap"]))
        pairs.append(WeightedPair(p, float(row["w_intra"]), float(row["w_inter"]), float(row["w_total"])))
    ones = all(wp.w_intra == 1.0 for wp in pairs), all(wp.w_inter == 1.0 for wp in pairs)
    mode = {(True, True): HpoMode.BASE, (False, True): HpoMode.INTRA, (True, False): HpoMode.INTER}.get(ones, HpoMode.BOTH)
    return WeightedPairDataset(tuple(pairs), mode)


# --- rollouts and conditions -------------------------------------------------------


def rollout_rows(group_ids, candidate_ids, conds, samples, seeds) -> list[dict]:
    rows = []
    for g, gid in enumerate(group_ids):
        for i, cid in enumerate(candidate_ids):
            rows.append({
                "group_id": gid,
                "candidate_id": cid,
                "cond": [float(v) for v in conds[g]],
                "sample": [float(v) for v in samples[g, i]],
                "seed": int(seeds[g][i]),
            })
    return rows


def read_rollouts(path) -> tuple[dict[tuple[str, str], np.ndarray], dict[str, np.ndarray]]:
    samples, conds = {}, {}
    for row in read_jsonl(path, "rollouts"):
        samples[row["group_id"], row["candidate_id"]] = np.array(row["sample"], dtype=np.float64)
        conds[row["group_id"]] = np.array(row["cond"], dtype=np.float64)
    return samples, conds


def condition_rows(group_ids, conds, targets) -> list[dict]:
    return [
        {"group_id": gid, "cond": [float(v) for v in c], "target": [float(v) for v in t]}
        for gid, c, t in zip(group_ids, conds, targets)
    ]


def read_conditions(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    rows = list(read_jsonl(path, "conditions"))
    if not rows:
        raise MalformedRow("no conditions", source=str(path))
    return (
        [r["group_id"] for r in rows],
        np.array([r["cond"] for r in rows], dtype=np.float64),
        np.array([r["target"] for r in rows], dtype=np.float64),
    )


# --- CSV logs ----------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def trainlog_rows(run) -> list[dict]:
    stats = dict(run.reward_stats_log)
    n = max(len(run.loss_log), max(stats, default=-1) + 1)
    rows = []
    for it in range(n):
        s = stats.get(it)
        rows.append({
            "iteration": it,
            "loss": run.loss_log[it] if it < len(run.loss_log) else None,
            "best": s.best if s else None,
            "mean": s.mean if s else None,
            "worst": s.worst if s else None,
        })
    return rows


def write_csv(path, columns: Sequence[str], rows: Iterable[dict]):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def read_csv(path) -> list[dict]:
    """Rows with numeric cells parsed as float (int where integral) and blanks as None."""
    out = []
    with open(path, encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            parsed = {}
            for k, v in row.items():
                if v == "":
                    parsed[k] = None
                    continue
                try:
                    parsed[k] = int(v)
                except ValueError:
                    try:
                        parsed[k] = float(v)
                    except ValueError:
                        parsed[k] = v
            out.append(parsed)
    return out


def sweep_rows(report) -> tuple[list[dict], list[dict]]:
    """Per-iteration rows for sweep.csv and one summary row per cell."""
    rows, cells = [], []
    for c in report.cells:
        ratio = f"{c.ratio.numerator}/{c.ratio.denominator}"
        final = None
        if c.run is not None:
            for r in trainlog_rows(c.run):
                rows.append({"M": c.m, "N": c.n, "ratio": ratio, **r})
            if c.run.reward_stats_log:
                final = c.run.reward_stats_log[-1][1]
        cells.append({
            "M": c.m, "N": c.n, "ratio": ratio, "status": c.status,
            "best": final.best if final else None,
            "mean": final.mean if final else None,
            "worst": final.worst if final else None,
            "error": c.error,
        })
    return rows, cells
