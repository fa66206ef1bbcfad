"""Exclusion cascade and label-stratified partitioning."""

from __future__ import annotations

import datetime as dt
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .core import (
    TEXT_FIELDS,
    ConfigError,
    DataError,
    DecisionRecord,
    TriageScale,
)
from .lexicons import EXCLUDED_CHIEF_COMPLAINTS, GenderLexicon, default_lexicon

# Rule order is part of the contract: a record is tagged with the first rule it
# trips, so reason counts are reproducible.
REASONS = (
    "parse_error",
    "pre_date",
    "missing_field",
    "under_age",
    "excluded_label",
    "excluded_chief_complaint",
    "lexicon",
)

DEFAULT_REQUIRED = ("sex", "age", "label")


@dataclass(frozen=True)
class FilterConfig:
    lexicon: GenderLexicon
    scale: TriageScale
    min_age: float = 18
    min_date: dt.date | None = None
    date_field: str = "admission_time"
    excluded_labels: frozenset = frozenset()
    excluded_chief_complaint_classes: frozenset = frozenset(EXCLUDED_CHIEF_COMPLAINTS)
    required_fields: tuple[str, ...] = DEFAULT_REQUIRED
    screen_fields: tuple[str, ...] = TEXT_FIELDS

    def __post_init__(self):
        object.__setattr__(self, "excluded_labels", frozenset(int(x) for x in self.excluded_labels))
        object.__setattr__(
            self,
            "excluded_chief_complaint_classes",
            frozenset(c.strip().casefold() for c in self.excluded_chief_complaint_classes),
        )
        bad = [x for x in self.excluded_labels if x not in self.scale]
        if bad:
            raise ConfigError(f"excluded labels {bad} outside scale")
        unknown = set(self.screen_fields) - set(TEXT_FIELDS)
        if unknown:
            raise ConfigError(f"cannot screen non-text fields {sorted(unknown)}")
        if isinstance(self.min_date, str):
            object.__setattr__(self, "min_date", dt.date.fromisoformat(self.min_date))

    @classmethod
    def from_dict(cls, d: Mapping, *, scale: TriageScale | None = None) -> "FilterConfig":
        d = dict(d)
        lex = d.pop("lexicon", None)
        language = d.pop("language", None)
        if isinstance(lex, Mapping):
            lexicon = GenderLexicon.from_dict(lex)
        elif isinstance(lex, str):
            lexicon = default_lexicon(lex)
        elif language:
            lexicon = default_lexicon(language)
        else:
            raise ConfigError("filter config needs a lexicon or language")
        raw_scale = d.pop("scale", None)
        if raw_scale is not None:
            scale = TriageScale.from_dict(raw_scale)
        if scale is None:
            raise ConfigError("filter config needs a label scale")
        known = {f for f in cls.__dataclass_fields__} - {"lexicon", "scale"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown filter options {sorted(extra)}")
        for key in ("required_fields", "screen_fields"):
            if key in d:
                d[key] = tuple(d[key])
        for key in ("excluded_labels", "excluded_chief_complaint_classes"):
            if key in d:
                d[key] = frozenset(d[key])
        return cls(lexicon=lexicon, scale=scale, **d)


@dataclass
class FilterResult:
    kept: list[DecisionRecord] = field(default_factory=list)
    rejected: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        counts = Counter(r["reason"] for r in self.rejected)
        return {
            "kept": len(self.kept),
            "rejected": len(self.rejected),
            "reasons": {reason: counts.get(reason, 0) for reason in REASONS},
        }


def _field_missing(record: DecisionRecord, name: str) -> bool:
    if name in TEXT_FIELDS:
        return not getattr(record, name).strip()
    if name in ("sex", "age", "label"):
        return getattr(record, name) is None
    if name == "text":
        return not record.text.strip()
    value = record.tabular.get(name, record.meta.get(name))
    return value is None or (isinstance(value, str) and not value.strip())


def _record_date(value: Any) -> dt.date:
    if isinstance(value, (int, float)):
        return dt.datetime.fromtimestamp(value, tz=dt.timezone.utc).date()
    return dt.date.fromisoformat(str(value)[:10])


def rejection_reason(record: DecisionRecord, cfg: FilterConfig) -> tuple[str, str] | None:
    """First rule tripped by ``record`` as ``(reason, detail)``, or ``None``."""
    if cfg.min_date is not None:
        raw = record.tabular.get(cfg.date_field)
        if raw is None:
            return "missing_field", cfg.date_field
        try:
            when = _record_date(raw)
        except (ValueError, OverflowError):
            return "parse_error", f"bad date {raw!r}"
        if when < cfg.min_date:
            return "pre_date", when.isoformat()

    for name in cfg.required_fields:
        if _field_missing(record, name):
            return "missing_field", name
    if not record.text.strip():
        return "missing_field", "text"

    if record.age is not None and record.age < cfg.min_age:
        return "under_age", str(record.age)

    if record.label is not None:
        if record.label not in cfg.scale:
            return "excluded_label", f"{record.label} outside scale"
        if record.label in cfg.excluded_labels:
            return "excluded_label", str(record.label)

    if record.chief_complaint.strip().casefold() in cfg.excluded_chief_complaint_classes:
        return "excluded_chief_complaint", record.chief_complaint

    for name in cfg.screen_fields:
        hits = cfg.lexicon.find(getattr(record, name))
        if hits:
            return "lexicon", f"{name}:{','.join(hits)}"
    return None


def filter_dataset(records: Iterable, cfg: FilterConfig) -> FilterResult:
    """Apply the exclusion cascade, keeping input order.

    Items may be :class:`DecisionRecord` objects, parsed JSON objects or raw
    JSONL lines. Anything that does not parse is rejected with
    ``parse_error`` and the stream continues.
    """
    result = FilterResult()
    for position, item in enumerate(records):
        raw = item
        try:
            if isinstance(item, str):
                item = json.loads(item)
            record = item if isinstance(item, DecisionRecord) else DecisionRecord.from_dict(item)
        except (json.JSONDecodeError, DataError, TypeError, ValueError) as exc:
            result.rejected.append(
                {"position": position, "id": _maybe_id(raw), "reason": "parse_error", "detail": str(exc), "raw": raw if isinstance(raw, str) else _jsonable(raw)}
            )
            continue
        found = rejection_reason(record, cfg)
        if found is None:
            result.kept.append(record)
        else:
            reason, detail = found
            result.rejected.append(
                {"position": position, "id": record.id, "reason": reason, "detail": detail, "record": record.to_dict()}
            )
    return result


def _maybe_id(raw):
    if isinstance(raw, Mapping):
        return raw.get("id")
    if isinstance(raw, str):
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError:
            return None
        return obj.get("id") if isinstance(obj, dict) else None
    return None


def _jsonable(raw):
    try:
        json.dumps(raw)
        return raw
    except TypeError:
        return repr(raw)


def _apportion(sizes: Mapping[int, int], fraction: float, rng: np.random.Generator) -> dict[int, int]:
    # Largest-remainder rounding: every label gets floor or ceil of its quota
    # and the train total lands on round(fraction * N).
    labels = sorted(sizes)
    quotas = {lab: fraction * sizes[lab] for lab in labels}
    alloc = {lab: int(np.floor(quotas[lab])) for lab in labels}
    target = int(round(fraction * sum(sizes.values())))
    remaining = target - sum(alloc.values())
    if remaining > 0:
        tiebreak = rng.random(len(labels))
        order = sorted(
            (lab for lab in labels if alloc[lab] < sizes[lab]),
            key=lambda lab: (-(quotas[lab] - alloc[lab]), tiebreak[labels.index(lab)]),
        )
        for lab in order[:remaining]:
            alloc[lab] += 1
    return alloc


def stratified_split(records: list[DecisionRecord], fraction: float, seed: int) -> tuple[list, list]:
    """Split into ``(train, test)`` with matching label proportions.

    Per-label train counts are the floor or ceiling of ``fraction`` times the
    label total. Both partitions keep the input order.
    """
    if not 0 < fraction < 1:
        raise ConfigError("fraction must lie strictly between 0 and 1")
    by_label: dict[int, list[int]] = defaultdict(list)
    for i, rec in enumerate(records):
        if rec.label is None:
            raise DataError(f"record {rec.id} has no label; cannot stratify")
        by_label[rec.label].append(i)
    rng = np.random.default_rng(seed)
    alloc = _apportion({lab: len(idx) for lab, idx in by_label.items()}, fraction, rng)
    train_idx = set()
    for lab in sorted(by_label):
        idx = np.array(by_label[lab])
        chosen = rng.permutation(len(idx))[: alloc[lab]]
        train_idx.update(idx[chosen].tolist())
    train = [r for i, r in enumerate(records) if i in train_idx]
    test = [r for i, r in enumerate(records) if i not in train_idx]
    return train, test


class RecordFilter(TransformerMixin, BaseEstimator):
    """Transformer wrapper around :func:`filter_dataset`.

    ``transform`` returns the kept records; the rejections of the last call
    are available as ``rejected_``.
    """

    def __init__(self, language="fr", scale=(1, 5), min_age=18, min_date=None,
                 excluded_labels=(), excluded_chief_complaint_classes=EXCLUDED_CHIEF_COMPLAINTS,
                 required_fields=DEFAULT_REQUIRED, screen_fields=TEXT_FIELDS):
        self.language = language
        self.scale = scale
        self.min_age = min_age
        self.min_date = min_date
        self.excluded_labels = excluded_labels
        self.excluded_chief_complaint_classes = excluded_chief_complaint_classes
        self.required_fields = required_fields
        self.screen_fields = screen_fields

    def _config(self) -> FilterConfig:
        return FilterConfig(
            lexicon=default_lexicon(self.language),
            scale=TriageScale(*self.scale),
            min_age=self.min_age,
            min_date=self.min_date,
            excluded_labels=frozenset(self.excluded_labels),
            excluded_chief_complaint_classes=frozenset(self.excluded_chief_complaint_classes),
            required_fields=tuple(self.required_fields),
            screen_fields=tuple(self.screen_fields),
        )

    def fit(self, X, y=None):
        self.config_ = self._config()
        return self

    def transform(self, X):
        cfg = getattr(self, "config_", None) or self._config()
        result = filter_dataset(X, cfg)
        self.rejected_ = result.rejected
        return result.kept
