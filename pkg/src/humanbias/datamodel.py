"""Domain types, CSV ingestion and stratified partitioning."""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

# group encoding used everywhere: 1 is the audited group ``a``, 0 is ``~a``
GROUP_A = 1
GROUP_NOT_A = 0

MISSING_TOKENS = {"", "?", "NA", "NaN", "nan"}


class DataError(ValueError):
    """Base class for ingestion and validation problems."""


class SchemaError(DataError):
    pass


class PartitionError(DataError):
    pass


class SamplingError(DataError):
    pass


@dataclass(frozen=True)
class Instance:
    features: tuple[float, ...]
    group: int
    gold_label: int | None = None
    decision: int | None = None
    row: int = 0
    dataset_id: str = ""

    def __post_init__(self):
        if self.group not in (GROUP_A, GROUP_NOT_A):
            raise DataError(f"group must be 0 or 1, got {self.group!r}")

    @property
    def uid(self) -> tuple[str, int]:
        return (self.dataset_id, self.row)


class _InstanceArrays:
    """Array views shared by the two instance pools."""

    instances: tuple[Instance, ...]

    @cached_property
    def X(self) -> np.ndarray:
        return np.array([inst.features for inst in self.instances], dtype=float)

    @cached_property
    def groups(self) -> np.ndarray:
        return np.array([inst.group for inst in self.instances], dtype=int)

    @cached_property
    def uids(self) -> set[tuple[str, int]]:
        return {inst.uid for inst in self.instances}

    def __len__(self) -> int:
        return len(self.instances)


@dataclass(frozen=True)
class DecisionSet(_InstanceArrays):
    """Instances judged by one human, each carrying that human's decision."""

    human_id: str
    instances: tuple[Instance, ...]

    def __post_init__(self):
        if not self.instances:
            raise DataError(f"decision set {self.human_id!r} is empty")
        if any(inst.decision is None for inst in self.instances):
            raise DataError(f"decision set {self.human_id!r} has instances without a decision")
        present = {inst.group for inst in self.instances}
        if present != {GROUP_A, GROUP_NOT_A}:
            raise DataError(f"decision set {self.human_id!r} must contain both groups")

    @cached_property
    def decisions(self) -> np.ndarray:
        return np.array([inst.decision for inst in self.instances], dtype=int)

    @cached_property
    def gold_labels(self) -> np.ndarray | None:
        """Retained gold labels (only simulated worlds have them)."""
        if any(inst.gold_label is None for inst in self.instances):
            return None
        return np.array([inst.gold_label for inst in self.instances], dtype=int)


@dataclass(frozen=True)
class GoldStandardSet(_InstanceArrays):
    instances: tuple[Instance, ...]

    def __post_init__(self):
        if not self.instances:
            raise DataError("gold standard set is empty")
        if any(inst.gold_label is None for inst in self.instances):
            raise DataError("gold standard set has instances without a gold label")
        cells = {(inst.group, inst.gold_label) for inst in self.instances}
        missing = {(g, y) for g in (0, 1) for y in (0, 1)} - cells
        if missing:
            raise DataError(f"gold standard set is missing (group, label) cells {sorted(missing)}")

    @cached_property
    def labels(self) -> np.ndarray:
        return np.array([inst.gold_label for inst in self.instances], dtype=int)


@dataclass(frozen=True)
class DatasetSchema:
    feature_names: tuple[str, ...]
    group_column: str
    group_positive_value: str
    label_column: str | None = None
    decision_column: str | None = None
    categorical_columns: tuple[str, ...] = ()
    label_positive_value: str | None = None
    decision_positive_value: str | None = None
    dataset_id: str = "dataset"
    # decision files holding several humans name the column identifying them
    human_column: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "categorical_columns", tuple(self.categorical_columns))
        named = [*self.feature_names, self.group_column]
        named += [c for c in (self.label_column, self.decision_column, self.human_column) if c]
        if len(set(named)) != len(named):
            raise SchemaError(f"schema column names must be distinct: {named}")
        unknown = set(self.categorical_columns) - set(self.feature_names)
        if unknown:
            raise SchemaError(f"categorical columns not among features: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict) -> DatasetSchema:
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> DatasetSchema:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "group_column": self.group_column,
            "group_positive_value": self.group_positive_value,
            "label_column": self.label_column,
            "decision_column": self.decision_column,
            "categorical_columns": list(self.categorical_columns),
            "label_positive_value": self.label_positive_value,
            "decision_positive_value": self.decision_positive_value,
            "dataset_id": self.dataset_id,
            "human_column": self.human_column,
        }


def _parse_binary(value: str, positive: str | None, column: str, row: int) -> int | None:
    # a blank cell means "not recorded", e.g. no gold label for a decided instance
    if value.strip() in MISSING_TOKENS:
        return None
    if positive is not None:
        return int(value.strip() == positive)
    try:
        out = int(float(value))
    except ValueError:
        raise DataError(f"row {row}: column {column!r} value {value!r} is not binary") from None
    if out not in (0, 1):
        raise DataError(f"row {row}: column {column!r} value {value!r} is not binary")
    return out


def ingest_csv(
    path: str | Path, schema: DatasetSchema, categories: dict[str, list[str]] | None = None
) -> tuple[list[Instance], list[str]]:
    """Read a CSV file into instances.

    Returns the instances (file order, rows with missing features dropped) and
    the expanded feature names. Categorical columns are one-hot encoded with
    lexicographically ordered categories; pass ``categories`` (see
    ``schema_categories``) to share one encoding across several files.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)

    for col in (*schema.feature_names, schema.group_column):
        if col not in header:
            raise SchemaError(f"column {col!r} not found in {path}")
    label_col = schema.label_column if schema.label_column in header else None
    decision_col = schema.decision_column if schema.decision_column in header else None
    for col, name in ((schema.label_column, label_col), (schema.decision_column, decision_col)):
        if col and name is None:
            logger.info("optional column %r absent from %s", col, path)

    kept, dropped = [], 0
    for i, r in enumerate(rows):
        if any(r[c].strip() in MISSING_TOKENS for c in schema.feature_names):
            dropped += 1
            continue
        kept.append((i, r))
    if dropped:
        logger.warning("dropped %d rows with missing feature values from %s", dropped, path)

    group_values = sorted({r[schema.group_column].strip() for _, r in kept})
    if len(group_values) > 2:
        raise DataError(f"group column {schema.group_column!r} has {len(group_values)} values: {group_values}")

    if categories is None:
        categories = {
            c: sorted({r[c].strip() for _, r in kept}) for c in schema.categorical_columns
        }
    feature_names: list[str] = []
    for c in schema.feature_names:
        if c in categories:
            feature_names += [f"{c}={v}" for v in categories[c]]
        else:
            feature_names.append(c)

    instances = []
    for i, r in kept:
        feats: list[float] = []
        for c in schema.feature_names:
            value = r[c].strip()
            if c in categories:
                feats += [1.0 if value == v else 0.0 for v in categories[c]]
                continue
            try:
                feats.append(float(value))
            except ValueError:
                raise DataError(f"row {i}: column {c!r} value {value!r} is not numeric") from None
        group = GROUP_A if r[schema.group_column].strip() == schema.group_positive_value else GROUP_NOT_A
        label = None
        if label_col:
            label = _parse_binary(r[label_col], schema.label_positive_value, label_col, i)
        decision = None
        if decision_col:
            decision = _parse_binary(r[decision_col], schema.decision_positive_value, decision_col, i)
        instances.append(
            Instance(tuple(feats), group, label, decision, row=i, dataset_id=schema.dataset_id)
        )
    return instances, feature_names


def schema_categories(paths: Iterable[str | Path], schema: DatasetSchema) -> dict[str, list[str]]:
    """Union of categorical values over several files, sorted."""
    seen: dict[str, set[str]] = {c: set() for c in schema.categorical_columns}
    for path in paths:
        with open(path, newline="", encoding="utf-8") as fh:
            for r in csv.DictReader(fh):
                for c in seen:
                    value = r[c].strip()
                    if value not in MISSING_TOKENS:
                        seen[c].add(value)
    return {c: sorted(v) for c, v in seen.items()}


def ingest_decision_sets(
    path: str | Path, schema: DatasetSchema, categories: dict[str, list[str]] | None = None
) -> tuple[list[DecisionSet], list[str]]:
    """Decision sets from one CSV, split by ``schema.human_column`` (one human if unset)."""
    if not schema.decision_column:
        raise SchemaError("schema has no decision column")
    instances, names = ingest_csv(path, schema, categories)
    if any(inst.decision is None for inst in instances):
        raise SchemaError(f"decision column {schema.decision_column!r} not found in {path}")
    if schema.human_column:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if schema.human_column not in (reader.fieldnames or []):
                raise SchemaError(f"column {schema.human_column!r} not found in {path}")
            owner = [r[schema.human_column].strip() for r in reader]
    else:
        owner = None
    by_human: dict[str, list[Instance]] = defaultdict(list)
    for inst in instances:
        by_human[owner[inst.row] if owner else "h01"].append(inst)
    return [DecisionSet(h, tuple(by_human[h])) for h in sorted(by_human)], names


def write_instances_csv(path: str | Path, instances: Iterable[Instance], feature_names: Sequence[str]) -> None:
    """Write instances with full-precision floats; inverse of ``ingest_csv`` for numeric schemas."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", *feature_names, "group", "gold_label", "decision"])
        for inst in instances:
            w.writerow([
                inst.row,
                *(repr(float(v)) for v in inst.features),
                inst.group,
                "" if inst.gold_label is None else inst.gold_label,
                "" if inst.decision is None else inst.decision,
            ])


def read_instances_csv(path: str | Path, dataset_id: str = "") -> tuple[list[Instance], list[str]]:
    """Read a file produced by ``write_instances_csv``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        feature_names = header[1:-3]
        out = []
        for r in reader:
            out.append(Instance(
                features=tuple(float(v) for v in r[1:-3]),
                group=int(r[-3]),
                gold_label=int(r[-2]) if r[-2] != "" else None,
                decision=int(r[-1]) if r[-1] != "" else None,
                row=int(r[0]),
                dataset_id=dataset_id,
            ))
    return out, feature_names


def design_matrix(instances: Sequence[Instance] | DecisionSet | GoldStandardSet) -> np.ndarray:
    """Feature matrix with the group indicator appended as the last column."""
    if isinstance(instances, (DecisionSet, GoldStandardSet)):
        return np.column_stack([instances.X, instances.groups])
    X = np.array([inst.features for inst in instances], dtype=float)
    g = np.array([inst.group for inst in instances], dtype=float)
    return np.column_stack([X, g])


def stratified_folds(keys: Sequence, k_parts: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Split indices into ``k_parts`` folds, balanced within every stratum key."""
    if k_parts < 1:
        raise PartitionError("k_parts must be >= 1")
    strata: dict = defaultdict(list)
    for i, key in enumerate(keys):
        strata[key].append(i)
    parts: list[list[int]] = [[] for _ in range(k_parts)]
    offset = 0
    for key in sorted(strata):
        idx = np.array(strata[key])
        if len(idx) < k_parts:
            raise PartitionError(f"stratum {key} has {len(idx)} members, fewer than {k_parts} parts")
        idx = idx[rng.permutation(len(idx))]
        for j, i in enumerate(idx):
            parts[(j + offset) % k_parts].append(int(i))
        # rotate the start so leftover members do not pile onto part 0
        offset = (offset + len(idx)) % k_parts
    return [np.array(sorted(p), dtype=int) for p in parts]


def stratified_partition(instances: Sequence[Instance], k_parts: int, seed: int) -> list[list[Instance]]:
    """Disjoint parts, each stratified by (group, gold label)."""
    keys = [(inst.group, -1 if inst.gold_label is None else inst.gold_label) for inst in instances]
    folds = stratified_folds(keys, k_parts, np.random.default_rng(seed))
    return [[instances[i] for i in fold] for fold in folds]


def sample_gs_pool(instances: Sequence[Instance], per_group: int, seed: int) -> GoldStandardSet:
    """Draw ``per_group`` labeled instances from each group, class-stratified.

    The positive count per group is ``round(per_group * prevalence)`` where the
    prevalence is taken over all labeled input instances. Draws are nested: a
    larger ``per_group`` with the same seed returns a superset.
    """
    if per_group < 1:
        raise SamplingError("per_group must be positive")
    labeled = [inst for inst in instances if inst.gold_label is not None]
    if not labeled:
        raise SamplingError("no labeled instances to sample from")
    prevalence = np.mean([inst.gold_label for inst in labeled])
    rng = np.random.default_rng(seed)
    chosen: list[Instance] = []
    for g in (GROUP_A, GROUP_NOT_A):
        members = [inst for inst in labeled if inst.group == g]
        if len(members) < per_group:
            raise SamplingError(f"group {g} has {len(members)} labeled instances, need {per_group}")
        n_pos = int(round(per_group * prevalence))
        wanted = {1: n_pos, 0: per_group - n_pos}
        for y in (1, 0):
            stratum = [inst for inst in members if inst.gold_label == y]
            if len(stratum) < wanted[y]:
                raise SamplingError(
                    f"group {g} label {y} has {len(stratum)} instances, need {wanted[y]}"
                )
            order = rng.permutation(len(stratum))
            chosen += [stratum[i] for i in order[: wanted[y]]]
    chosen.sort(key=lambda inst: inst.uid)
    return GoldStandardSet(tuple(chosen))


def overlap(gold: GoldStandardSet, decision_sets: Iterable[DecisionSet]) -> set[tuple[str, int]]:
    """Instance identities present both in the gold pool and in some decision set."""
    shared: set[tuple[str, int]] = set()
    for ds in decision_sets:
        shared |= gold.uids & ds.uids
    return shared
