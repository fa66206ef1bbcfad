"""Domain types shared by every stage of an audit.

Records, pairs and prediction sets are immutable once built. Labels are kept
as raw integers next to an explicit :class:`TriageScale`, so a 2-5 scale and a
1-4 scale can live side by side without remapping.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from types import MappingProxyType
from typing import Any, Iterable, Iterator, Mapping

import numpy as np

SCHEMA_VERSION = "v1"
EMPTY_TEXT = ""
TEXT_FIELDS = ("chief_complaint", "hpi", "pmh")


class AuditError(Exception):
    """Base class for errors raised by this package."""


class DataError(AuditError):
    """Malformed or inconsistent input data."""


class ConfigError(AuditError):
    """Invalid configuration."""


class ServiceError(AuditError):
    """An external service could not be reached or answered unusably."""


class UndefinedMetricError(AuditError, ValueError):
    """A statistic is undefined on the given data (empty group, zero cell...)."""


class Sex(enum.IntEnum):
    MALE = 0
    FEMALE = 1

    def flip(self) -> "Sex":
        return Sex(1 - int(self))

    @property
    def code(self) -> str:
        return "M" if self is Sex.MALE else "F"

    @classmethod
    def parse(cls, value: Any) -> "Sex":
        if isinstance(value, Sex):
            return value
        if isinstance(value, bool):
            raise DataError(f"unrecognised sex value {value!r}")
        if isinstance(value, int):
            if value in (0, 1):
                return cls(value)
            raise DataError(f"unrecognised sex value {value!r}")
        if isinstance(value, str):
            key = value.strip().casefold()
            if key in _SEX_ALIASES:
                return _SEX_ALIASES[key]
        raise DataError(f"unrecognised sex value {value!r}")


_SEX_ALIASES = {
    "m": Sex.MALE, "male": Sex.MALE, "h": Sex.MALE, "homme": Sex.MALE,
    "masculin": Sex.MALE, "0": Sex.MALE,
    "f": Sex.FEMALE, "female": Sex.FEMALE, "femme": Sex.FEMALE,
    "féminin": Sex.FEMALE, "feminin": Sex.FEMALE, "1": Sex.FEMALE,
}


class Condition(str, enum.Enum):
    FULL = "full"
    TEXT_ISO = "text_iso"
    TAB_ISO = "tab_iso"

    @classmethod
    def parse_list(cls, spec: str | Iterable[str]) -> tuple["Condition", ...]:
        items = spec.split(",") if isinstance(spec, str) else list(spec)
        out = []
        for item in items:
            item = item.strip().replace("-", "_")
            if item:
                out.append(cls(item))
        if not out:
            raise ConfigError("at least one condition is required")
        return tuple(dict.fromkeys(out))


class Direction(str, enum.Enum):
    M_TO_F = "m_to_f"
    F_TO_M = "f_to_m"

    @classmethod
    def from_original_sex(cls, sex: Sex) -> "Direction":
        return cls.M_TO_F if sex is Sex.MALE else cls.F_TO_M


class Role(str, enum.Enum):
    ORIGINAL = "original"
    COUNTERFACTUAL = "counterfactual"


class Quality(str, enum.Enum):
    CORRECT = "correct"
    INCOMPLETE = "incomplete"
    FAILED = "failed"
    UNVALIDATED = "unvalidated"


@dataclass(frozen=True)
class TriageScale:
    """Inclusive ordinal label range; ``min`` is the most severe level."""

    min: int
    max: int

    def __post_init__(self):
        if not isinstance(self.min, int) or not isinstance(self.max, int):
            raise ConfigError("scale bounds must be integers")
        if self.min >= self.max:
            raise ConfigError(f"empty or degenerate scale [{self.min}, {self.max}]")

    @property
    def k(self) -> int:
        return self.max - self.min + 1

    @property
    def levels(self) -> range:
        return range(self.min, self.max + 1)

    def __contains__(self, value) -> bool:
        return isinstance(value, int) and not isinstance(value, bool) and self.min <= value <= self.max

    def check(self, value: Any) -> int:
        if value not in self:
            raise DataError(f"label {value!r} outside scale [{self.min}, {self.max}]")
        return value

    def to_dict(self) -> dict:
        return {"min": self.min, "max": self.max}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TriageScale":
        return cls(int(d["min"]), int(d["max"]))


BORDEAUX_SCALE = TriageScale(2, 5)
MIMIC_SCALE = TriageScale(1, 4)


def _freeze(mapping: Mapping | None) -> Mapping:
    return MappingProxyType(dict(mapping or {}))


@dataclass(frozen=True)
class DecisionRecord:
    """One admission: tabular context, free text and an optional reference label.

    ``sex`` is ``None`` only for text-isolated variants, where the tabular sex
    field has been dropped.
    """

    id: str
    sex: Sex | None
    age: float | None
    tabular: Mapping[str, Any] = field(default_factory=dict)
    chief_complaint: str = EMPTY_TEXT
    hpi: str = EMPTY_TEXT
    pmh: str = EMPTY_TEXT
    label: int | None = None
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "tabular", _freeze(self.tabular))
        object.__setattr__(self, "meta", _freeze(self.meta))

    @property
    def text(self) -> str:
        return " ".join(t for t in (self.chief_complaint, self.hpi, self.pmh) if t)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "id": self.id,
            "sex": None if self.sex is None else self.sex.code,
            "age": self.age,
            "tabular": dict(self.tabular),
            "chief_complaint": self.chief_complaint,
            "hpi": self.hpi,
            "pmh": self.pmh,
            "label": self.label,
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DecisionRecord":
        if not isinstance(d, Mapping):
            raise DataError("record must be a JSON object")
        schema = d.get("schema", SCHEMA_VERSION)
        if schema != SCHEMA_VERSION:
            raise DataError(f"unsupported schema version {schema!r}")
        if d.get("id") in (None, ""):
            raise DataError("record has no id")
        sex = d.get("sex")
        age = d.get("age")
        label = d.get("label")
        if label is not None:
            if isinstance(label, bool) or not isinstance(label, (int, float)) or int(label) != label:
                raise DataError(f"label must be an integer, got {label!r}")
            label = int(label)
        if age is not None and (isinstance(age, bool) or not isinstance(age, (int, float))):
            raise DataError(f"age must be numeric, got {age!r}")
        texts = {}
        for name in TEXT_FIELDS:
            value = d.get(name)
            if value is None:
                value = EMPTY_TEXT
            if not isinstance(value, str):
                raise DataError(f"{name} must be text")
            texts[name] = value
        tabular = d.get("tabular") or {}
        if not isinstance(tabular, Mapping):
            raise DataError("tabular must be an object")
        return cls(
            id=str(d["id"]),
            sex=None if sex is None else Sex.parse(sex),
            age=age,
            tabular=tabular,
            label=label,
            meta=d.get("meta") or {},
            **texts,
        )


@dataclass(frozen=True)
class CounterfactualPair:
    pair_id: str
    original: DecisionRecord
    counterfactual: DecisionRecord
    direction: Direction
    condition: Condition = Condition.FULL
    cf_quality: Quality = Quality.UNVALIDATED
    validation: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "validation", _freeze(self.validation))

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "pair_id": self.pair_id,
            "direction": self.direction.value,
            "condition": self.condition.value,
            "cf_quality": self.cf_quality.value,
            "original": self.original.to_dict(),
            "counterfactual": self.counterfactual.to_dict(),
            "validation": dict(self.validation),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CounterfactualPair":
        try:
            pair = cls(
                pair_id=str(d["pair_id"]),
                original=DecisionRecord.from_dict(d["original"]),
                counterfactual=DecisionRecord.from_dict(d["counterfactual"]),
                direction=Direction(d["direction"]),
                condition=Condition(d.get("condition", "full")),
                cf_quality=Quality(d.get("cf_quality", "unvalidated")),
                validation=d.get("validation") or {},
            )
        except (KeyError, ValueError) as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"malformed pair: {exc}") from exc
        check_pair(pair)
        return pair


def check_pair(pair: CounterfactualPair) -> None:
    """Raise :class:`DataError` unless the pair respects the flip invariants."""
    orig, cf = pair.original, pair.counterfactual
    if orig.sex is None:
        raise DataError(f"pair {pair.pair_id}: original has no sex")
    if classify_direction(pair) is not pair.direction:
        raise DataError(f"pair {pair.pair_id}: direction inconsistent with original sex")
    if pair.condition in (Condition.FULL, Condition.TAB_ISO) and cf.sex is not orig.sex.flip():
        raise DataError(f"pair {pair.pair_id}: counterfactual sex is not flipped")
    if dict(orig.tabular) != dict(cf.tabular) or orig.age != cf.age:
        raise DataError(f"pair {pair.pair_id}: tabular fields differ between variants")


def classify_direction(pair: CounterfactualPair) -> Direction:
    orig, cf = pair.original, pair.counterfactual
    if orig.sex is None:
        raise DataError(f"pair {pair.pair_id}: original has no sex")
    if cf.sex is not None and cf.sex is orig.sex:
        raise DataError(f"pair {pair.pair_id}: counterfactual has the same sex as the original")
    return Direction.from_original_sex(orig.sex)


def make_variant(record: DecisionRecord, condition: Condition) -> DecisionRecord:
    """Project a record onto the information allowed by ``condition``.

    ``text_iso`` drops the tabular sex field; ``tab_iso`` replaces every text
    field by the empty placeholder and keeps sex.
    """
    condition = Condition(condition)
    if condition is Condition.FULL:
        return record
    if condition is Condition.TEXT_ISO:
        return replace(record, sex=None)
    return replace(record, chief_complaint=EMPTY_TEXT, hpi=EMPTY_TEXT, pmh=EMPTY_TEXT)


def variant_pair(pair: CounterfactualPair, condition: Condition) -> tuple[DecisionRecord, DecisionRecord]:
    return make_variant(pair.original, condition), make_variant(pair.counterfactual, condition)


@dataclass(frozen=True)
class PairedPrediction:
    pair_id: str
    condition: Condition
    y_orig: int
    y_cf: int
    direction: Direction


@dataclass(frozen=True)
class IndexSet:
    """Ordered, duplicate-free pair ids shared by every condition of one audit."""

    ids: tuple[str, ...]

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        if len(set(ids)) != len(ids):
            raise DataError("index set contains duplicate pair ids")
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[str]:
        return iter(self.ids)

    @cached_property
    def _members(self) -> frozenset:
        return frozenset(self.ids)

    @cached_property
    def digest(self) -> str:
        """SHA-256 of the ordered ids; equal digests mean the same index set."""
        return hashlib.sha256("\n".join(self.ids).encode("utf-8")).hexdigest()

    def __contains__(self, pair_id) -> bool:
        return pair_id in self._members


# JSONL helpers ---------------------------------------------------------------

def iter_jsonl(path) -> Iterator[tuple[int, Any]]:
    """Yield ``(line_number, parsed_or_exception)`` for every non-blank line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                yield lineno, exc


def read_jsonl(path) -> list:
    out = []
    for lineno, obj in iter_jsonl(path):
        if isinstance(obj, Exception):
            raise DataError(f"{path}:{lineno}: invalid JSON ({obj})")
        out.append(obj)
    return out


def dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def write_jsonl(path, rows: Iterable) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            if hasattr(row, "to_dict"):
                row = row.to_dict()
            fh.write(dumps(row) + "\n")
            n += 1
    return n


def read_records(path) -> list[DecisionRecord]:
    out = []
    for lineno, obj in iter_jsonl(path):
        if isinstance(obj, Exception):
            raise DataError(f"{path}:{lineno}: invalid JSON ({obj})")
        try:
            out.append(DecisionRecord.from_dict(obj))
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return out


def read_pairs(path) -> list[CounterfactualPair]:
    return [CounterfactualPair.from_dict(obj) for obj in read_jsonl(path)]


# Prediction sets ----------------------------------------------------------------

DIRECTION_CODES = {Direction.M_TO_F: 0, Direction.F_TO_M: 1}
_DIRECTIONS = (Direction.M_TO_F, Direction.F_TO_M)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class PredictionSet:
    """Aligned predictions for both variants of every pair, per condition.

    ``labels[condition]`` is an ``(N, 2)`` integer array whose columns are
    the original and counterfactual predictions, row-aligned with
    ``index_set``. ``directions`` holds 0 for M->F and 1 for F->M, always
    taken from the original record's (pre-neutralisation) sex.
    """

    index_set: IndexSet
    directions: np.ndarray
    labels: Mapping[Condition, np.ndarray]
    scale: TriageScale
    reference: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.index_set)
        directions = np.asarray(self.directions, dtype=np.int8)
        if directions.shape != (n,) or not np.isin(directions, (0, 1)).all():
            raise DataError("directions must be a 0/1 vector aligned with the index set")
        if not self.labels:
            raise DataError("prediction set has no conditions")
        labels = {}
        for cond, arr in self.labels.items():
            arr = np.asarray(arr, dtype=np.int64)
            if arr.shape != (n, 2):
                raise DataError(f"labels for {Condition(cond).value} must have shape ({n}, 2)")
            if n and (arr.min() < self.scale.min or arr.max() > self.scale.max):
                raise DataError(f"predicted labels for {Condition(cond).value} fall outside the scale")
            labels[Condition(cond)] = _readonly(arr)
        object.__setattr__(self, "directions", _readonly(directions))
        object.__setattr__(self, "labels", MappingProxyType(dict(sorted(labels.items(), key=lambda kv: list(Condition).index(kv[0])))))
        if self.reference is not None:
            ref = np.asarray(self.reference, dtype=np.int64)
            if ref.shape != (n,):
                raise DataError("reference labels must align with the index set")
            object.__setattr__(self, "reference", _readonly(ref))

    def __len__(self) -> int:
        return len(self.index_set)

    @property
    def conditions(self) -> tuple[Condition, ...]:
        return tuple(self.labels)

    def y_orig(self, condition=Condition.FULL) -> np.ndarray:
        return self.labels[Condition(condition)][:, 0]

    def y_cf(self, condition=Condition.FULL) -> np.ndarray:
        return self.labels[Condition(condition)][:, 1]

    def only(self, *conditions) -> "PredictionSet":
        return PredictionSet(self.index_set, self.directions,
                             {Condition(c): self.labels[Condition(c)] for c in conditions},
                             self.scale, self.reference)

    def take(self, rows) -> "PredictionSet":
        rows = np.asarray(rows, dtype=np.int64)
        ids = tuple(self.index_set.ids[i] for i in rows)
        return PredictionSet(IndexSet(ids), self.directions[rows],
                             {c: a[rows] for c, a in self.labels.items()}, self.scale,
                             None if self.reference is None else self.reference[rows])

    def with_reference(self, reference: Mapping[str, int]) -> "PredictionSet":
        ref = []
        for pid in self.index_set:
            if pid not in reference or reference[pid] is None:
                raise DataError(f"no reference label for pair {pid}")
            ref.append(reference[pid])
        return PredictionSet(self.index_set, self.directions, self.labels, self.scale, np.array(ref))

    def paired(self, condition=Condition.FULL) -> list[PairedPrediction]:
        arr = self.labels[Condition(condition)]
        return [
            PairedPrediction(pid, Condition(condition), int(arr[i, 0]), int(arr[i, 1]), _DIRECTIONS[self.directions[i]])
            for i, pid in enumerate(self.index_set)
        ]

    def to_rows(self) -> list[dict]:
        rows = []
        for i, pid in enumerate(self.index_set):
            for cond, arr in self.labels.items():
                for j, role in enumerate((Role.ORIGINAL, Role.COUNTERFACTUAL)):
                    row = {
                        "pair_id": pid,
                        "condition": cond.value,
                        "role": role.value,
                        "label": int(arr[i, j]),
                        "direction": _DIRECTIONS[self.directions[i]].value,
                    }
                    if self.reference is not None:
                        row["reference"] = int(self.reference[i])
                    rows.append(row)
        return rows

    @classmethod
    def from_rows(cls, rows: Iterable[Mapping], scale: TriageScale) -> "PredictionSet":
        """Rebuild from ``{pair_id, condition, role, label, direction}`` rows.

        Every pair must be present under every condition with both roles.
        """
        order: dict[str, None] = {}
        direction: dict[str, Direction] = {}
        reference: dict[str, int] = {}
        cells: dict[tuple[str, Condition, Role], int] = {}
        conditions: dict[Condition, None] = {}
        for row in rows:
            try:
                pid = str(row["pair_id"])
                cond = Condition(row["condition"])
                role = Role(row["role"])
                label = row["label"]
                d = Direction(row["direction"])
            except (KeyError, ValueError) as exc:
                raise DataError(f"malformed prediction row {row!r}: {exc}") from exc
            if isinstance(label, bool) or not isinstance(label, int):
                raise DataError(f"prediction label must be an integer: {row!r}")
            if direction.setdefault(pid, d) is not d:
                raise DataError(f"pair {pid} has conflicting directions")
            if "reference" in row and row["reference"] is not None:
                reference[pid] = int(row["reference"])
            key = (pid, cond, role)
            if key in cells:
                raise DataError(f"duplicate prediction for {pid}/{cond.value}/{role.value}")
            cells[key] = label
            order.setdefault(pid)
            conditions.setdefault(cond)
        ids = tuple(order)
        labels = {}
        for cond in conditions:
            arr = np.empty((len(ids), 2), dtype=np.int64)
            for i, pid in enumerate(ids):
                for j, role in enumerate((Role.ORIGINAL, Role.COUNTERFACTUAL)):
                    try:
                        arr[i, j] = cells[(pid, cond, role)]
                    except KeyError:
                        raise DataError(
                            f"pair {pid} lacks a {role.value} prediction under {cond.value}; "
                            "all conditions must share one index set"
                        ) from None
            labels[cond] = arr
        ref = None
        if reference:
            if len(reference) != len(ids):
                raise DataError("reference labels present for only some pairs")
            ref = np.array([reference[p] for p in ids])
        dirs = np.array([DIRECTION_CODES[direction[p]] for p in ids], dtype=np.int8)
        return cls(IndexSet(ids), dirs, labels, scale, ref)
