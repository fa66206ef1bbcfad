"""Audit entry point: predictions for one or more conditions in, reports out."""

from __future__ import annotations

from dataclasses import replace
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .bootstrap import BootstrapConfig, bootstrap_reports
from .core import Condition, DataError, PredictionSet
from .metrics import MetricReport, cell_counts, point_report


def combine(per_condition: Mapping[Condition, PredictionSet]) -> PredictionSet:
    """Merge single-condition sets that must share one index set."""
    items = [(Condition(c), p) for c, p in per_condition.items()]
    if not items:
        raise DataError("no prediction sets given")
    _, first = items[0]
    labels = {}
    for cond, preds in items:
        if preds.index_set.ids != first.index_set.ids:
            raise DataError(f"index set of {cond.value} differs from {items[0][0].value}; "
                            "every condition must use the same pairs in the same order")
        if not np.array_equal(preds.directions, first.directions):
            raise DataError(f"directions under {cond.value} disagree with {items[0][0].value}")
        if preds.scale != first.scale:
            raise DataError("conditions use different label scales")
        labels[cond] = preds.labels[cond] if cond in preds.labels else preds.labels[preds.conditions[0]]
    return PredictionSet(first.index_set, first.directions, labels, first.scale, first.reference)


def audit(preds: PredictionSet | Mapping[Condition, PredictionSet],
          bootstrap: BootstrapConfig | None = None,
          conditions: Sequence[Condition] | None = None) -> dict[Condition, MetricReport]:
    """One :class:`MetricReport` per condition.

    With ``bootstrap=None`` only point estimates are produced. Resampling is
    shared across conditions so their intervals stay paired.
    """
    if isinstance(preds, Mapping):
        preds = combine(preds)
    conditions = tuple(Condition(c) for c in (conditions or preds.conditions))
    missing = [c.value for c in conditions if c not in preds.labels]
    if missing:
        raise DataError(f"no predictions for conditions {missing}")
    if len(preds) == 0:
        raise DataError("prediction set is empty")
    if bootstrap is None:
        reports = {c: point_report(cell_counts(preds, c), c) for c in conditions}
    else:
        reports = bootstrap_reports(preds, bootstrap, conditions)
    digest = preds.index_set.digest
    return {c: replace(r, index_digest=digest) for c, r in reports.items()}


class CounterfactualBiasAuditor(BaseEstimator):
    """Estimator-style wrapper: ``fit(prediction_set)`` stores ``reports_``."""

    def __init__(self, iterations=1000, confidence=0.95, seed=0, conditions=None, n_jobs=1):
        self.iterations = iterations
        self.confidence = confidence
        self.seed = seed
        self.conditions = conditions
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        cfg = None
        if self.iterations:
            cfg = BootstrapConfig(self.iterations, self.confidence, self.seed, n_jobs=self.n_jobs)
        self.reports_ = audit(X, cfg, self.conditions)
        return self

    def summary(self) -> dict[str, dict]:
        return {c.value: r.to_dict() for c, r in self.reports_.items()}
