"""Paired counterfactual bias metrics.

Every metric is a function of one integer array ``C[direction, y_orig, y_cf]``
(directions ordered M->F, F->M; labels offset by the scale minimum). Counting
happens once; ratios are formed at the end. The same functions accept a
leading batch axis, which is how the bootstrap evaluates all resamples at
once.

Sign conventions: "up" means the counterfactual received a higher label than
the original, i.e. a less severe score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import Condition, DataError, PredictionSet, UndefinedMetricError

METRICS = (
    "pdr",
    "p_down_mf",
    "p_up_mf",
    "p_down_fm",
    "p_up_fm",
    "dts_m_given_f",
    "dts_f_given_m",
    "nats_minus",
    "nats_plus",
    "nmdf",
)
PROPORTION_METRICS = METRICS[:-1]
# Directions (0 = M->F, 1 = F->M) that must be non-empty for each metric.
_NEEDS = {
    "pdr": (),
    "nmdf": (),
    "p_down_mf": (0,),
    "p_up_mf": (0,),
    "dts_f_given_m": (0,),
    "p_down_fm": (1,),
    "p_up_fm": (1,),
    "dts_m_given_f": (1,),
    "nats_minus": (0, 1),
    "nats_plus": (0, 1),
}
MF, FM = 0, 1


def cell_counts(preds: PredictionSet, condition=Condition.FULL) -> np.ndarray:
    """``(2, k, k)`` counts indexed by direction, original label, counterfactual label."""
    arr = preds.labels[Condition(condition)] - preds.scale.min
    k = preds.scale.k
    C = np.zeros((2, k, k), dtype=np.int64)
    np.add.at(C, (preds.directions.astype(np.intp), arr[:, 0], arr[:, 1]), 1)
    return C


@dataclass(frozen=True)
class DirectionalCounts:
    n_mf: int
    up_mf: int
    down_mf: int
    n_fm: int
    up_fm: int
    down_fm: int

    @property
    def same_mf(self) -> int:
        return self.n_mf - self.up_mf - self.down_mf

    @property
    def same_fm(self) -> int:
        return self.n_fm - self.up_fm - self.down_fm

    @property
    def n(self) -> int:
        return self.n_mf + self.n_fm

    @property
    def changed(self) -> int:
        return self.up_mf + self.down_mf + self.up_fm + self.down_fm

    @classmethod
    def from_cells(cls, C: np.ndarray) -> "DirectionalCounts":
        n, up, down = _tallies(np.asarray(C))
        return cls(int(n[MF]), int(up[MF]), int(down[MF]), int(n[FM]), int(up[FM]), int(down[FM]))

    def probabilities(self) -> dict[str, float | None]:
        def ratio(x, n):
            return x / n if n else None
        return {
            "p_up_mf": ratio(self.up_mf, self.n_mf),
            "p_down_mf": ratio(self.down_mf, self.n_mf),
            "p_up_fm": ratio(self.up_fm, self.n_fm),
            "p_down_fm": ratio(self.down_fm, self.n_fm),
        }

    def to_dict(self) -> dict:
        return {
            "m_to_f": {"n": self.n_mf, "up": self.up_mf, "down": self.down_mf, "same": self.same_mf},
            "f_to_m": {"n": self.n_fm, "up": self.up_fm, "down": self.down_fm, "same": self.same_fm},
        }


def _tallies(C: np.ndarray):
    k = C.shape[-1]
    i, j = np.indices((k, k))
    n = C.sum(axis=(-2, -1))
    up = (C * (j > i)).sum(axis=(-2, -1))
    down = (C * (j < i)).sum(axis=(-2, -1))
    return n, up, down


def metrics_from_cells(C: np.ndarray) -> dict[str, np.ndarray]:
    """All metrics from cell counts of shape ``(..., 2, k, k)``.

    Undefined values (an empty direction, or no pairs at all) come back as NaN.
    """
    C = np.asarray(C)
    k = C.shape[-1]
    i, j = np.indices((k, k))
    n, up, down = _tallies(C)
    total = n.sum(axis=-1)
    # female minus male presentation: cf - orig for M->F pairs, orig - cf for F->M
    shift = (C * (j - i)).sum(axis=(-2, -1))
    with np.errstate(divide="ignore", invalid="ignore"):
        p_up = np.where(n > 0, up / np.maximum(n, 1), np.nan)
        p_down = np.where(n > 0, down / np.maximum(n, 1), np.nan)
        ok = total > 0
        pdr = np.where(ok, (up.sum(axis=-1) + down.sum(axis=-1)) / np.maximum(total, 1), np.nan)
        nmdf = np.where(ok, (shift[..., MF] - shift[..., FM]) / np.maximum(total, 1), np.nan)
    return {
        "pdr": pdr,
        "p_down_mf": p_down[..., MF],
        "p_up_mf": p_up[..., MF],
        "p_down_fm": p_down[..., FM],
        "p_up_fm": p_up[..., FM],
        "dts_m_given_f": p_up[..., FM] - p_down[..., FM],
        "dts_f_given_m": p_up[..., MF] - p_down[..., MF],
        "nats_minus": p_down[..., FM] - p_down[..., MF],
        "nats_plus": p_up[..., FM] - p_up[..., MF],
        "nmdf": nmdf,
    }


def undefined_metrics(C: np.ndarray) -> tuple[str, ...]:
    n = np.asarray(C).sum(axis=(-2, -1))
    if n.sum() == 0:
        return METRICS
    return tuple(m for m in METRICS if any(n[d] == 0 for d in _NEEDS[m]))


# Single-metric entry points ---------------------------------------------------

def _nonempty(preds: PredictionSet) -> None:
    if len(preds) == 0:
        raise DataError("prediction set is empty")


def pdr(preds: PredictionSet, condition=Condition.FULL) -> float:
    _nonempty(preds)
    arr = preds.labels[Condition(condition)]
    return float(np.count_nonzero(arr[:, 0] != arr[:, 1]) / len(arr))


def directional_probs(preds: PredictionSet, condition=Condition.FULL) -> tuple[DirectionalCounts, dict]:
    """Direction counts plus the four conditional probabilities.

    A direction with no pairs yields ``None`` for its two probabilities.
    """
    _nonempty(preds)
    counts = DirectionalCounts.from_cells(cell_counts(preds, condition))
    return counts, counts.probabilities()


def _require(probs: Mapping, *keys) -> list[float]:
    values = []
    for key in keys:
        v = probs.get(key)
        if v is None or (isinstance(v, float) and math.isnan(v)):
            raise UndefinedMetricError(f"{key} is undefined (empty direction)")
        values.append(float(v))
    return values


def nats(probs: Mapping) -> tuple[float, float]:
    """``(nats_plus, nats_minus)`` from the four directional probabilities."""
    up_fm, up_mf, down_fm, down_mf = _require(probs, "p_up_fm", "p_up_mf", "p_down_fm", "p_down_mf")
    return up_fm - up_mf, down_fm - down_mf


def dts(probs: Mapping) -> tuple[float, float]:
    """``(dts_f_given_m, dts_m_given_f)``."""
    up_mf, down_mf, up_fm, down_fm = _require(probs, "p_up_mf", "p_down_mf", "p_up_fm", "p_down_fm")
    return up_mf - down_mf, up_fm - down_fm


def nmdf(preds: PredictionSet, condition=Condition.FULL) -> float:
    """Mean female-minus-male predicted label.

    Which presentation is female follows the original record's sex, also
    when the condition hides the sex field from the predictor.
    """
    _nonempty(preds)
    arr = preds.labels[Condition(condition)]
    diff = arr[:, 1] - arr[:, 0]
    sign = np.where(preds.directions == MF, 1, -1)
    return float((sign * diff).sum() / len(arr))


# Reports ----------------------------------------------------------------------

@dataclass(frozen=True)
class MetricEstimate:
    point: float | None
    lower: float | None = None
    upper: float | None = None

    @property
    def defined(self) -> bool:
        return self.point is not None

    def to_dict(self) -> dict:
        return {"point": self.point, "lower": self.lower, "upper": self.upper}


@dataclass(frozen=True)
class MetricReport:
    condition: Condition
    n_pairs: int
    counts: DirectionalCounts
    estimates: Mapping[str, MetricEstimate]
    undefined: tuple[str, ...] = ()
    bootstrap: Mapping | None = None
    flags: tuple[str, ...] = field(default=())
    index_digest: str | None = None

    def __getitem__(self, name: str) -> MetricEstimate:
        return self.estimates[name]

    def point(self, name: str) -> float | None:
        return self.estimates[name].point

    def to_dict(self) -> dict:
        return {
            "condition": self.condition.value,
            "n_pairs": self.n_pairs,
            "counts": self.counts.to_dict(),
            "metrics": {m: self.estimates[m].to_dict() for m in METRICS},
            "undefined": list(self.undefined),
            "bootstrap": dict(self.bootstrap) if self.bootstrap else None,
            "flags": list(self.flags),
            "index_digest": self.index_digest,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricReport":
        c = d["counts"]
        counts = DirectionalCounts(c["m_to_f"]["n"], c["m_to_f"]["up"], c["m_to_f"]["down"],
                                   c["f_to_m"]["n"], c["f_to_m"]["up"], c["f_to_m"]["down"])
        est = {m: MetricEstimate(v["point"], v.get("lower"), v.get("upper")) for m, v in d["metrics"].items()}
        return cls(Condition(d["condition"]), int(d["n_pairs"]), counts, est,
                   tuple(d.get("undefined", ())), d.get("bootstrap"), tuple(d.get("flags", ())),
                   d.get("index_digest"))


def point_report(C: np.ndarray, condition: Condition) -> MetricReport:
    """Point estimates only, from cell counts."""
    values = metrics_from_cells(C)
    undefined = undefined_metrics(C)
    est = {m: MetricEstimate(None if m in undefined else float(values[m])) for m in METRICS}
    counts = DirectionalCounts.from_cells(C)
    return MetricReport(Condition(condition), counts.n, counts, est, undefined)
