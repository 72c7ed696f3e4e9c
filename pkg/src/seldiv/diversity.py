"""Per-condition sample diversity and its normalized lookup table."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from .datasets import ConditionedDataset, condition_key
from .errors import InvalidArgumentError, MissingConditionError, StateError


def raw_diversity(group_samples) -> float:
    """Sum over coordinates of the population standard deviation across samples.

    ``group_samples`` is a sequence of equally shaped samples (points or
    images); the first axis indexes samples.
    """
    if isinstance(group_samples, np.ndarray):
        arr = group_samples
    else:
        if len(group_samples) == 0:
            raise InvalidArgumentError("empty group")
        shapes = {np.shape(s) for s in group_samples}
        if len(shapes) != 1:
            raise InvalidArgumentError(f"samples differ in shape: {sorted(shapes)}")
        arr = np.stack([np.asarray(s) for s in group_samples])
    if arr.shape[0] == 0:
        raise InvalidArgumentError("empty group")
    # working relative to the first sample keeps large offsets from eating
    # precision and makes representable shifts cancel exactly
    arr = arr.astype(np.float64, copy=False)
    arr = arr - arr[0]
    mu = arr.mean(axis=0)
    return float(np.sqrt(((arr - mu) ** 2).mean(axis=0)).sum())


@dataclass(frozen=True)
class DiversityTable:
    raw: Dict[bytes, float]
    normalized: Dict[bytes, float]
    stats: Tuple[float, float]
    q: float = 0.0

    def __len__(self) -> int:
        return len(self.raw)

    def lookup_many(self, conditions) -> np.ndarray:
        conditions = np.atleast_2d(np.asarray(conditions, dtype=np.float64))
        return np.array([lookup(self, c) for c in conditions])

    def to_json(self) -> str:
        rows = [
            {"key": k.hex(), "raw": self.raw[k], "normalized": self.normalized[k]}
            for k in self.raw
        ]
        doc = {
            "q": self.q,
            "raw_min": self.stats[0],
            "raw_max": self.stats[1],
            "normalization": "min-max",
            "entries": rows,
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DiversityTable":
        doc = json.loads(text)
        raw, norm = {}, {}
        for row in doc["entries"]:
            k = bytes.fromhex(row["key"])
            raw[k] = float(row["raw"])
            norm[k] = float(row["normalized"])
        return cls(raw, norm, (float(doc["raw_min"]), float(doc["raw_max"])), float(doc["q"]))


def normalize(raw: Dict[bytes, float]) -> Dict[bytes, float]:
    """Min-max map onto [0, 1]; all-equal inputs map to 1."""
    lo, hi = min(raw.values()), max(raw.values())
    if hi == lo:
        return {k: 1.0 for k in raw}
    return {k: (v - lo) / (hi - lo) for k, v in raw.items()}


def build_table(dataset: ConditionedDataset) -> DiversityTable:
    if not dataset.is_grouped:
        raise StateError("dataset must be grouped before building a diversity table")
    raw = {}
    for key, idx in dataset.iter_groups():
        # a singleton has no observable spread; raw_diversity returns 0 for it too
        raw[key] = raw_diversity(dataset.samples[idx]) if len(idx) > 1 else 0.0
    values = raw.values()
    return DiversityTable(raw, normalize(raw), (min(values), max(values)), dataset.q)


def lookup(table: DiversityTable, condition) -> float:
    key = condition_key(condition, table.q)
    try:
        return table.normalized[key]
    except KeyError:
        raise MissingConditionError(
            f"condition {np.asarray(condition).tolist()} not in diversity table"
        ) from None


def save_table(table: DiversityTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(table.to_json())


def load_table(path) -> DiversityTable:
    with open(path, encoding="utf-8") as fh:
        return DiversityTable.from_json(fh.read())


def group_raw_diversity(dataset: ConditionedDataset, conditions: Sequence = None) -> Dict[bytes, float]:
    """Raw diversity of each group, optionally restricted to ``conditions``."""
    if not dataset.is_grouped:
        raise StateError("dataset is not grouped")
    keys = None if conditions is None else {dataset.key(c) for c in conditions}
    return {
        k: raw_diversity(dataset.samples[idx])
        for k, idx in dataset.iter_groups()
        if keys is None or k in keys
    }
