"""Counterfactual pair generation.

The tabular flip is deterministic; text is rewritten by an external model
prompted with few-shot exemplars, then parsed and checked mechanically.
"""

from __future__ import annotations

import json
import logging
import os
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .core import (
    CounterfactualPair,
    DataError,
    DecisionRecord,
    Direction,
    IndexSet,
    Quality,
    ServiceError,
    Sex,
    dumps,
)
from .lexicons import GenderedTerms, default_gendered_terms, tokenize
from .service import ChatClient, GenServiceConfig
from .templates import PromptTemplate, build_messages

log = logging.getLogger(__name__)

CORRECT_OVERLAP = 0.90
FAILED_OVERLAP = 0.70


class GenerationParseError(DataError):
    """Model output does not follow the labelled ``sex, field, field`` layout."""


def flip_tabular(record: DecisionRecord) -> DecisionRecord:
    if record.sex is None:
        raise DataError(f"record {record.id} has no sex to flip")
    return replace(record, sex=record.sex.flip())


def _anchor(label: str) -> str:
    return r"\s*".join(re.escape(part) for part in label.split())


def _output_pattern(template: PromptTemplate) -> re.Pattern:
    # Anchored on the field labels, in order. Clinical text may contain commas,
    # so each value runs lazily up to the next ", <label> :" anchor.
    parts = [_anchor(template.sex_label) + r"\s*:\s*(?P<sex>[^\s,]+)"]
    for i, (label, _) in enumerate(template.fields):
        last = i == len(template.fields) - 1
        value = r"(?P<f%d>.*)" % i if last else r"(?P<f%d>.*?)" % i
        parts.append(_anchor(label) + r"\s*:[ \t]*" + value)
    return re.compile(r"\s*,\s*".join(parts), re.DOTALL)


def parse_generation(output: str, template: PromptTemplate) -> tuple[Sex, str, str]:
    """Split a model reply into ``(sex, first_field, second_field)``.

    For the French template the fields are history of present illness and
    past medical history; for the English one, chief complaint and note.
    """
    if not isinstance(output, str):
        raise GenerationParseError("generation output is not text")
    match = _output_pattern(template).search(output)
    if match is None:
        raise GenerationParseError("output does not contain the labelled fields in order")
    try:
        sex = Sex.parse(match["sex"])
    except DataError as exc:
        raise GenerationParseError(str(exc)) from exc
    values = [match[f"f{i}"].strip() for i in range(len(template.fields))]
    return (sex, *values)


def apply_generation(record: DecisionRecord, parsed: Sequence, template: PromptTemplate) -> DecisionRecord:
    """Counterfactual record: tabular flip plus the rewritten text fields."""
    _, *values = parsed
    updates = {attr: value for (_, attr), value in zip(template.fields, values)}
    return replace(flip_tabular(record), **updates)


@dataclass(frozen=True)
class ValidationReport:
    quality: Quality
    flipped_marker_found: bool
    residual_source_gender_terms: tuple[str, ...]
    non_gender_token_overlap: float
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "quality": self.quality.value,
            "flipped_marker_found": self.flipped_marker_found,
            "residual_source_gender_terms": list(self.residual_source_gender_terms),
            "non_gender_token_overlap": round(self.non_gender_token_overlap, 6),
            "note": self.note,
        }


def _normalise(token: str, language: str) -> str:
    # French adjectives and participles agree with the patient; dropping a
    # final "e" on both sides keeps "connu"/"connue" from counting as an edit.
    if language == "fr" and len(token) > 3 and token.endswith("e"):
        return token[:-1]
    return token


# French "il" in impersonal constructions ("il y a deux jours", "il s'agit")
# does not refer to the patient.
_IMPERSONAL_FR = re.compile(
    r"\bil(?=\s+(?:y\s+a(?:vait)?|s['’]agit|faut|fallait|semble|existe|reste)\b)", re.IGNORECASE)


def _tokens(text: str, language: str) -> list[str]:
    if language == "fr":
        text = _IMPERSONAL_FR.sub(" ", text)
    return tokenize(text)


def token_overlap(a: Iterable[str], b: Iterable[str]) -> float:
    """Multiset intersection size over the larger multiset size."""
    ca, cb = Counter(a), Counter(b)
    denom = max(sum(ca.values()), sum(cb.values()))
    if denom == 0:
        return 1.0
    return sum((ca & cb).values()) / denom


def validate_cf(original: DecisionRecord, candidate: DecisionRecord, terms: GenderedTerms,
                *, correct_threshold: float = CORRECT_OVERLAP,
                failed_threshold: float = FAILED_OVERLAP) -> ValidationReport:
    """Grade a rewrite as correct, incomplete or failed.

    A flipped marker needs the candidate's sex to be the opposite of the
    original's and, when the original text carried source-sex wording, at
    least one more target-sex word than the original had. Residuals are
    source-sex words left in the candidate. Overlap compares the remaining
    tokens once gendered and partner words are removed.
    """
    if original.sex is None:
        raise DataError(f"record {original.id} has no sex")
    source, target = original.sex, original.sex.flip()
    src_terms, tgt_terms = terms.terms_for(source), terms.terms_for(target)
    orig_tokens = _tokens(original.text, terms.language)
    cand_tokens = _tokens(candidate.text, terms.language)

    orig_src = sum(t in src_terms for t in orig_tokens)
    orig_tgt = sum(t in tgt_terms for t in orig_tokens)
    cand_tgt = sum(t in tgt_terms for t in cand_tokens)
    residual = tuple(t for t in cand_tokens if t in src_terms)

    sex_flipped = candidate.sex is target
    marker = sex_flipped and (orig_src == 0 or cand_tgt > orig_tgt)

    gendered = terms.all_terms
    lang = terms.language
    overlap = token_overlap(
        (_normalise(t, lang) for t in orig_tokens if t not in gendered),
        (_normalise(t, lang) for t in cand_tokens if t not in gendered),
    )

    if not marker:
        quality, note = Quality.FAILED, "sex field not flipped" if not sex_flipped else "no target-sex wording"
    elif overlap < failed_threshold:
        quality, note = Quality.FAILED, "clinical content altered"
    elif residual or overlap < correct_threshold:
        quality = Quality.INCOMPLETE
        note = "residual source-sex wording" if residual else "minor clinical edits"
    else:
        quality, note = Quality.CORRECT, ""
    return ValidationReport(quality, marker, residual, overlap, note)


@dataclass
class GenerationResult:
    pairs: list[CounterfactualPair] = field(default_factory=list)
    log: list[dict] = field(default_factory=list)

    @property
    def index_set(self) -> IndexSet:
        return IndexSet(tuple(p.pair_id for p in self.pairs if p.cf_quality is not Quality.FAILED))

    def quality_histogram(self) -> dict:
        counts = Counter(entry["quality"] for entry in self.log)
        return {q.value: counts.get(q.value, 0) for q in (Quality.CORRECT, Quality.INCOMPLETE, Quality.FAILED)}


def _one(record: DecisionRecord, template: PromptTemplate, client: ChatClient, terms: GenderedTerms):
    reply = client.complete(build_messages(record, template))
    try:
        parsed = parse_generation(reply, template)
    except GenerationParseError as exc:
        entry = {"pair_id": record.id, "status": "parse_error", "quality": Quality.FAILED.value, "error": str(exc)}
        return None, entry
    candidate = apply_generation(record, parsed, template)
    report = validate_cf(record, candidate, terms)
    quality = report.quality
    validation = report.to_dict()
    if parsed[0] is not record.sex.flip():
        quality = Quality.FAILED
        validation["note"] = "generated sex code not flipped"
        validation["quality"] = quality.value
    pair = CounterfactualPair(
        pair_id=record.id,
        original=record,
        counterfactual=candidate,
        direction=Direction.from_original_sex(record.sex),
        cf_quality=quality,
        validation=validation,
    )
    return pair, {"pair_id": record.id, "status": "ok", "quality": quality.value, "error": None}


def _load_checkpoint(path) -> dict[str, tuple[dict | None, dict]]:
    done = {}
    if not path or not os.path.exists(path):
        return done
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                done[obj["log"]["pair_id"]] = (obj.get("pair"), obj["log"])
    return done


def generate_pairs(records: Sequence[DecisionRecord], template: PromptTemplate,
                   service: GenServiceConfig | None = None, *, client: ChatClient | None = None,
                   terms: GenderedTerms | None = None, checkpoint: str | os.PathLike | None = None,
                   checkpoint_every: int = 100) -> GenerationResult:
    """Rewrite every record and grade the result.

    Failed rewrites stay in the log and are left out of ``index_set``. With a
    ``checkpoint`` path, completed items are appended every
    ``checkpoint_every`` completions and a rerun only requests the missing
    ones. If the service stays unreachable the checkpoint is flushed and
    :class:`ServiceError` propagates.
    """
    if client is None:
        if service is None:
            raise ValueError("either service or client is required")
        client = ChatClient(service)
    terms = terms or default_gendered_terms(template.language)
    workers = service.concurrency if service else client.config.concurrency
    for rec in records:
        if rec.sex is None:
            raise DataError(f"record {rec.id} has no sex")

    done = _load_checkpoint(checkpoint)
    todo = [r for r in records if r.id not in done]
    pending: list[str] = []

    def flush():
        if checkpoint and pending:
            with open(checkpoint, "a", encoding="utf-8") as fh:
                fh.writelines(pending)
            pending.clear()

    failure = None
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {rec.id: pool.submit(_one, rec, template, client, terms) for rec in todo}
        for rec in todo:
            try:
                pair, entry = futures[rec.id].result()
            except ServiceError as exc:
                failure = failure or exc
                continue
            done[rec.id] = (pair.to_dict() if pair else None, entry)
            pending.append(dumps({"pair": done[rec.id][0], "log": entry}) + "\n")
            if len(pending) >= checkpoint_every:
                flush()
    flush()
    if failure is not None:
        raise ServiceError(f"{failure}; {len(done)} of {len(records)} items checkpointed")

    result = GenerationResult()
    for rec in records:
        pair_dict, entry = done[rec.id]
        result.log.append(entry)
        if pair_dict is not None:
            result.pairs.append(CounterfactualPair.from_dict(pair_dict))
    return result
