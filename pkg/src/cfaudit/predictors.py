"""Predictors: anything that maps a record variant to a triage label.

Three bindings are provided: a lookup table, a remote chat-completion
service parsed into the label set, and a small hashed bag-of-words
classifier that lets the whole audit loop run offline.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy import optimize, sparse
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .core import (
    DIRECTION_CODES,
    AuditError,
    Condition,
    ConfigError,
    CounterfactualPair,
    DataError,
    DecisionRecord,
    IndexSet,
    PredictionSet,
    Quality,
    Role,
    TriageScale,
    UndefinedMetricError,
    make_variant,
)
from .lexicons import tokenize
from .service import ChatClient, GenServiceConfig
from .templates import TRIAGE_PROMPTS, triage_prompt

log = logging.getLogger(__name__)


class PredictionError(AuditError):
    """A predictor produced no usable label for one input."""


def parse_label(reply: str, scale: TriageScale) -> int:
    """First integer token of ``reply`` that lies on ``scale``."""
    for token in re.findall(r"\d+", reply or ""):
        value = int(token)
        if value in scale:
            return value
    raise PredictionError(f"no label in [{scale.min}, {scale.max}] found in reply {reply[:80]!r}")


class Predictor:
    """Base class. Subclasses implement :meth:`predict_record`."""

    scale: TriageScale

    def predict_record(self, record: DecisionRecord, condition: Condition = Condition.FULL,
                       role: Role = Role.ORIGINAL) -> int:
        raise NotImplementedError

    def predict_many(self, items: Sequence[tuple[DecisionRecord, Condition, Role]]) -> list:
        """Labels or :class:`PredictionError` instances, aligned with ``items``."""
        out = []
        for record, condition, role in items:
            try:
                out.append(self._checked(self.predict_record(record, condition, role)))
            except PredictionError as exc:
                out.append(exc)
        return out

    def _checked(self, label) -> int:
        if label not in self.scale:
            raise PredictionError(f"label {label!r} outside scale")
        return int(label)


class TablePredictor(Predictor):
    """Lookup of precomputed labels.

    Keys are ``(pair_id, condition, role)`` tuples or plain record ids; the
    specific key wins when both exist.
    """

    def __init__(self, table: Mapping, scale: TriageScale):
        self.table = dict(table)
        self.scale = scale

    def predict_record(self, record, condition=Condition.FULL, role=Role.ORIGINAL):
        key = (record.id, Condition(condition).value, Role(role).value)
        if key in self.table:
            return self.table[key]
        if record.id in self.table:
            return self.table[record.id]
        raise PredictionError(f"no table entry for {key}")

    @classmethod
    def from_rows(cls, rows: Iterable[Mapping], scale: TriageScale) -> "TablePredictor":
        table = {}
        for row in rows:
            if "condition" in row and "role" in row:
                table[(str(row["pair_id"]), row["condition"], row["role"])] = int(row["label"])
            else:
                table[str(row.get("id", row.get("pair_id")))] = int(row["label"])
        return cls(table, scale)


class RemotePredictor(Predictor):
    """Scores records through a chat-completion service.

    Decoding cannot be restricted on a remote service, so the reply is parsed
    for its first in-scale integer and anything else is a prediction error.
    """

    def __init__(self, client: ChatClient, scale: TriageScale, language: str = "fr",
                 template: str | None = None, max_tokens: int = 4):
        self.client = client
        self.scale = scale
        self.language = language
        self.template = template or TRIAGE_PROMPTS[language]
        self.max_tokens = max_tokens

    def predict_record(self, record, condition=Condition.FULL, role=Role.ORIGINAL):
        prompt = triage_prompt(record, self.language, self.template)
        reply = self.client.complete([{"role": "user", "content": prompt}], max_tokens=self.max_tokens)
        return parse_label(reply, self.scale)

    def predict_many(self, items):
        with ThreadPoolExecutor(max_workers=self.client.config.concurrency) as pool:
            futures = [pool.submit(self.predict_record, *item) for item in items]
            out = []
            for fut in futures:
                try:
                    out.append(self._checked(fut.result()))
                except PredictionError as exc:
                    out.append(exc)
            return out


# Bag-of-words baseline ---------------------------------------------------------

def record_tokens(record: DecisionRecord | str) -> list[str]:
    """Word tokens of the text plus coarse tokens for the tabular fields."""
    if isinstance(record, str):
        return tokenize(record)
    tokens = tokenize(record.text)
    if record.sex is not None:
        tokens.append(f"__sex={record.sex.code}")
    if record.age is not None:
        tokens.append(f"__age={int(record.age) // 10}")
    for key in sorted(record.tabular):
        value = record.tabular[key]
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            tokens.append(f"__{key}={round(float(value), -1):g}")
        elif isinstance(value, str):
            tokens.append(f"__{key}={value.casefold()}")
    return tokens


def _bucket(token: str, n_features: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % n_features


def hash_features(X: Sequence, n_features: int) -> sparse.csr_matrix:
    rows, cols, vals = [], [], []
    for i, item in enumerate(X):
        counts: dict[int, int] = {}
        for tok in record_tokens(item):
            b = _bucket(tok, n_features)
            counts[b] = counts.get(b, 0) + 1
        if counts:
            v = np.log1p(np.array(list(counts.values()), dtype=float))
            v /= np.linalg.norm(v)
            rows.extend([i] * len(counts))
            cols.extend(counts.keys())
            vals.extend(v.tolist())
    return sparse.csr_matrix((vals, (rows, cols)), shape=(len(X), n_features))


class BagOfWordsTriageClassifier(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression on hashed bag-of-words features.

    ``X`` is a sequence of :class:`DecisionRecord` or plain strings. Training
    is full-batch L-BFGS from a seeded initialisation, so a given
    ``random_state`` always yields the same weights.
    """

    def __init__(self, n_features=2**14, alpha=1e-4, max_iter=300, random_state=0):
        self.n_features = n_features
        self.alpha = alpha
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y):
        y = np.asarray(y)
        if len(X) == 0:
            raise DataError("cannot train on an empty set")
        if len(X) != len(y):
            raise DataError("X and y have different lengths")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        n_classes = len(self.classes_)
        F = hash_features(X, self.n_features)
        Y = np.zeros((len(y), n_classes))
        Y[np.arange(len(y)), y_idx] = 1.0
        n, d = F.shape
        rng = np.random.default_rng(self.random_state)
        w0 = rng.normal(scale=1e-3, size=(d + 1) * n_classes)

        def loss(w):
            W = w.reshape(d + 1, n_classes)
            Z = F @ W[:-1] + W[-1]
            Z -= Z.max(axis=1, keepdims=True)
            logsum = np.log(np.exp(Z).sum(axis=1, keepdims=True))
            P = np.exp(Z - logsum)
            nll = -(Y * (Z - logsum)).sum() / n
            reg = 0.5 * self.alpha * (W[:-1] ** 2).sum()
            G = np.empty_like(W)
            R = (P - Y) / n
            G[:-1] = F.T @ R + self.alpha * W[:-1]
            G[-1] = R.sum(axis=0)
            return nll + reg, G.ravel()

        res = optimize.minimize(loss, w0, jac=True, method="L-BFGS-B", options={"maxiter": self.max_iter})
        W = res.x.reshape(d + 1, n_classes)
        self.coef_ = W[:-1].T.copy()
        self.intercept_ = W[-1].copy()
        self.n_iter_ = res.nit
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        F = hash_features(X, self.n_features)
        return np.asarray(F @ self.coef_.T) + self.intercept_

    def predict_proba(self, X):
        Z = self.decision_function(X)
        Z -= Z.max(axis=1, keepdims=True)
        P = np.exp(Z)
        return P / P.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    # Persistence: JSON with raw little-endian float64 blobs, byte-stable for a
    # given fit.
    def to_dict(self) -> dict:
        check_is_fitted(self, "coef_")
        return {
            "kind": "bow_baseline",
            "params": self.get_params(),
            "classes": [int(c) for c in self.classes_],
            "coef": base64.b64encode(self.coef_.astype("<f8").tobytes()).decode("ascii"),
            "intercept": base64.b64encode(self.intercept_.astype("<f8").tobytes()).decode("ascii"),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: Mapping) -> "BagOfWordsTriageClassifier":
        model = cls(**d["params"])
        model.classes_ = np.array(d["classes"])
        k = len(model.classes_)
        model.coef_ = np.frombuffer(base64.b64decode(d["coef"]), dtype="<f8").reshape(k, model.n_features).copy()
        model.intercept_ = np.frombuffer(base64.b64decode(d["intercept"]), dtype="<f8").copy()
        return model

    @classmethod
    def load(cls, path) -> "BagOfWordsTriageClassifier":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def train_bow_baseline(records: Sequence[DecisionRecord], seed: int = 0, **params) -> BagOfWordsTriageClassifier:
    labelled = [r for r in records if r.label is not None]
    if not labelled:
        raise DataError("training set is empty or unlabelled")
    return BagOfWordsTriageClassifier(random_state=seed, **params).fit(labelled, [r.label for r in labelled])


class EstimatorPredictor(Predictor):
    """Adapts any fitted estimator with ``predict(list_of_records)``."""

    def __init__(self, estimator, scale: TriageScale):
        self.estimator = estimator
        self.scale = scale

    def predict_record(self, record, condition=Condition.FULL, role=Role.ORIGINAL):
        return int(self.estimator.predict([record])[0])

    def predict_many(self, items):
        if not items:
            return []
        labels = self.estimator.predict([rec for rec, _, _ in items])
        out = []
        for label in labels:
            try:
                out.append(self._checked(int(label)))
            except PredictionError as exc:
                out.append(exc)
        return out


# Bindings ---------------------------------------------------------------------

BINDING_KINDS = ("remote", "table", "bow_baseline")


@dataclass(frozen=True)
class PredictorBinding:
    kind: str
    scale: TriageScale
    language: str = "fr"
    table_path: str | None = None
    model_path: str | None = None
    service: GenServiceConfig | None = None
    prompt_template: str | None = None

    def __post_init__(self):
        if self.kind not in BINDING_KINDS:
            raise ConfigError(f"unknown predictor kind {self.kind!r}")
        if self.kind == "table" and not self.table_path:
            raise ConfigError("table binding needs table_path")
        if self.kind == "bow_baseline" and not self.model_path:
            raise ConfigError("bow_baseline binding needs model_path")
        if self.kind == "remote" and self.service is None:
            raise ConfigError("remote binding needs a [service] section")

    @classmethod
    def from_dict(cls, d: Mapping, base_dir: Path | None = None, scale: TriageScale | None = None) -> "PredictorBinding":
        d = dict(d)
        base = Path(base_dir or ".")
        if "scale" in d:
            scale = TriageScale.from_dict(d.pop("scale"))
        if scale is None:
            raise ConfigError("binding needs a label scale")
        service = d.pop("service", None)
        for key in ("table_path", "model_path"):
            if d.get(key):
                d[key] = str(base / d[key])
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigError(f"unknown binding options {sorted(extra)}")
        return cls(scale=scale, service=GenServiceConfig.from_dict(service) if service else None, **d)

    def build(self, *, client: ChatClient | None = None) -> Predictor:
        if self.kind == "table":
            rows = [json.loads(line) for line in Path(self.table_path).read_text(encoding="utf-8").splitlines() if line.strip()]
            return TablePredictor.from_rows(rows, self.scale)
        if self.kind == "bow_baseline":
            return EstimatorPredictor(BagOfWordsTriageClassifier.load(self.model_path), self.scale)
        return RemotePredictor(client or ChatClient(self.service), self.scale, self.language, self.prompt_template)


def predict(record: DecisionRecord, predictor: Predictor, condition=Condition.FULL, role=Role.ORIGINAL) -> int:
    result = predictor.predict_many([(record, Condition(condition), Role(role))])[0]
    if isinstance(result, Exception):
        raise result
    return result


def predict_paired(pairs: Sequence[CounterfactualPair], conditions: Sequence[Condition],
                   predictor: Predictor) -> tuple[PredictionSet, list[dict]]:
    """Score both variants of every pair under every condition.

    Pairs graded ``failed`` are left out. A pair whose prediction fails under
    any requested condition is dropped from all conditions, so the returned
    set keeps one index set across conditions. The log lists every dropped
    pair with its reason.
    """
    conditions = tuple(Condition(c) for c in conditions)
    dropped: list[dict] = []
    usable = []
    seen = set()
    for pair in pairs:
        if pair.pair_id in seen:
            raise DataError(f"duplicate pair id {pair.pair_id}")
        seen.add(pair.pair_id)
        if pair.cf_quality is Quality.FAILED:
            dropped.append({"pair_id": pair.pair_id, "reason": "failed_counterfactual"})
        else:
            usable.append(pair)

    items = []
    for pair in usable:
        for cond in conditions:
            items.append((make_variant(pair.original, cond), cond, Role.ORIGINAL))
            items.append((make_variant(pair.counterfactual, cond), cond, Role.COUNTERFACTUAL))
    results = predictor.predict_many(items)

    per = 2 * len(conditions)
    keep_rows, labels = [], {c: [] for c in conditions}
    for i, pair in enumerate(usable):
        chunk = results[i * per:(i + 1) * per]
        errors = [(items[i * per + j][1], items[i * per + j][2], r) for j, r in enumerate(chunk) if isinstance(r, Exception)]
        if errors:
            cond, role, exc = errors[0]
            dropped.append({"pair_id": pair.pair_id, "reason": "prediction_error",
                            "condition": cond.value, "role": role.value, "detail": str(exc)})
            continue
        keep_rows.append(pair)
        for k, cond in enumerate(conditions):
            labels[cond].append((chunk[2 * k], chunk[2 * k + 1]))

    ids = IndexSet(tuple(p.pair_id for p in keep_rows))
    directions = np.array([DIRECTION_CODES[p.direction] for p in keep_rows], dtype=np.int8)
    arrays = {c: np.array(v, dtype=np.int64).reshape(len(keep_rows), 2) for c, v in labels.items()}
    refs = [p.original.label for p in keep_rows]
    reference = np.array(refs) if keep_rows and all(r is not None for r in refs) else None
    return PredictionSet(ids, directions, arrays, predictor.scale, reference), dropped


# Agreement ------------------------------------------------------------------------

def agreement_matrix(reference: Sequence[int], predicted: Sequence[int], scale: TriageScale) -> np.ndarray:
    """``k x k`` counts with rows indexed by reference and columns by prediction."""
    ref = np.asarray(reference, dtype=np.int64)
    pred = np.asarray(predicted, dtype=np.int64)
    if ref.shape != pred.shape:
        raise DataError("reference and predicted labels differ in length")
    for arr in (ref, pred):
        if arr.size and (arr.min() < scale.min or arr.max() > scale.max):
            raise DataError("labels outside scale")
    k = scale.k
    m = np.zeros((k, k), dtype=np.int64)
    np.add.at(m, (ref - scale.min, pred - scale.min), 1)
    return m


def weighted_kappa(matrix: Any) -> float:
    """Quadratically weighted Cohen's kappa of a ``k x k`` agreement matrix."""
    O = np.asarray(matrix, dtype=float)
    if O.ndim != 2 or O.shape[0] != O.shape[1] or O.shape[0] < 2:
        raise DataError("agreement matrix must be square with at least two levels")
    if (O < 0).any() or not np.isfinite(O).all():
        raise DataError("agreement counts must be finite and non-negative")
    total = O.sum()
    if total <= 0:
        raise UndefinedMetricError("agreement matrix is empty")
    rows, cols = O.sum(axis=1), O.sum(axis=0)
    if np.count_nonzero(rows) < 2:
        raise UndefinedMetricError("kappa undefined: a single reference class")
    k = O.shape[0]
    idx = np.arange(k)
    W = (idx[:, None] - idx[None, :]) ** 2 / (k - 1) ** 2
    E = np.outer(rows, cols) / total
    expected = (W * E).sum()
    if expected == 0:
        raise UndefinedMetricError("kappa undefined: no expected disagreement")
    return float(1.0 - (W * O).sum() / expected)
