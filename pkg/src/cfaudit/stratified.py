"""Per-label discordance tables with odds ratios.

Pairs are grouped by the reference label of the original record. Within a
stratum the 2x2 table counts, for male-origin and female-origin pairs, how
often the counterfactual received a lower (more severe) label:

    a = cf < orig, male origin      b = cf >= orig, male origin
    c = cf < orig, female origin    d = cf >= orig, female origin
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .core import Condition, DataError, PredictionSet, UndefinedMetricError

Z_95 = 1.959964
MIN_CELL = 5


def odds_ratio(a: int, b: int, c: int, d: int, z: float = Z_95) -> tuple[float, float, float]:
    """Cross-product odds ratio ``ad/bc`` with a Woolf (log-normal) interval."""
    cells = (a, b, c, d)
    if any(x < 0 for x in cells):
        raise DataError("contingency counts must be non-negative")
    if any(x == 0 for x in cells):
        raise UndefinedMetricError("odds ratio undefined with a zero cell")
    log_or = math.log(a) + math.log(d) - math.log(b) - math.log(c)
    se = math.sqrt(1 / a + 1 / b + 1 / c + 1 / d)
    return math.exp(log_or), math.exp(log_or - z * se), math.exp(log_or + z * se)


def chi_square_statistic(a: int, b: int, c: int, d: int) -> float:
    """Pearson statistic of a 2x2 table without continuity correction."""
    if min(a, b, c, d) < 0:
        raise DataError("contingency counts must be non-negative")
    n = a + b + c + d
    if n == 0:
        raise UndefinedMetricError("empty contingency table")
    margins = (a + b) * (c + d) * (a + c) * (b + d)
    if margins == 0:
        raise UndefinedMetricError("a row or column of the table is empty")
    # Python integers keep (ad - bc)^2 exact before the single division.
    return n * (a * d - b * c) ** 2 / margins


def chi_square_p(a: int, b: int, c: int, d: int) -> float:
    """Two-sided p-value of the Pearson test with one degree of freedom.

    For one degree of freedom the survival function is the regularised upper
    incomplete gamma ``Q(1/2, x/2)``, which equals ``erfc(sqrt(x/2))``; the
    complementary error function keeps full relative precision far into the
    tail, so tiny p-values do not collapse to zero.
    """
    return math.erfc(math.sqrt(chi_square_statistic(a, b, c, d) / 2))


@dataclass(frozen=True)
class StratumTable:
    label: int
    a: int
    b: int
    c: int
    d: int
    up_m: int
    up_f: int
    or_value: float | None = None
    ci: tuple[float, float] | None = None
    p_value: float | None = None
    suppressed: str | None = None

    @property
    def n_male(self) -> int:
        return self.a + self.b

    @property
    def n_female(self) -> int:
        return self.c + self.d

    def _pct(self, x, n):
        return 100.0 * x / n if n else None

    @property
    def pct_up_m(self):
        return self._pct(self.up_m, self.n_male)

    @property
    def pct_down_m(self):
        return self._pct(self.a, self.n_male)

    @property
    def pct_up_f(self):
        return self._pct(self.up_f, self.n_female)

    @property
    def pct_down_f(self):
        return self._pct(self.c, self.n_female)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "counts": {"a": self.a, "b": self.b, "c": self.c, "d": self.d, "up_m": self.up_m, "up_f": self.up_f},
            "pct_up_m": self.pct_up_m,
            "pct_down_m": self.pct_down_m,
            "pct_up_f": self.pct_up_f,
            "pct_down_f": self.pct_down_f,
            "or": self.or_value,
            "ci": list(self.ci) if self.ci else None,
            "p_value": self.p_value,
            "suppressed": self.suppressed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "StratumTable":
        c = d["counts"]
        return cls(int(d["label"]), c["a"], c["b"], c["c"], c["d"], c["up_m"], c["up_f"], d.get("or"),
                   tuple(d["ci"]) if d.get("ci") else None, d.get("p_value"), d.get("suppressed"))


def stratum(label: int, a: int, b: int, c: int, d: int, up_m: int = 0, up_f: int = 0,
            min_cell: int = MIN_CELL) -> StratumTable:
    """Build a stratum and attach OR, CI and p unless the table is too sparse."""
    reason = None
    if min(a, b, c, d) == 0:
        reason = "zero_cell"
    elif min(a, b, c, d) < min_cell:
        reason = "small_cell"
    if reason:
        return StratumTable(label, a, b, c, d, up_m, up_f, suppressed=reason)
    or_value, lo, hi = odds_ratio(a, b, c, d)
    return StratumTable(label, a, b, c, d, up_m, up_f, or_value, (lo, hi), chi_square_p(a, b, c, d))


def stratify(preds: PredictionSet, reference: Mapping[str, int] | None = None,
             condition=Condition.FULL, min_cell: int = MIN_CELL) -> list[StratumTable]:
    """One table per label of the scale, in ascending label order."""
    if reference is not None:
        preds = preds.with_reference(reference)
    if preds.reference is None:
        raise DataError("stratification needs the original records' reference labels")
    arr = preds.labels[Condition(condition)]
    orig, cf = arr[:, 0], arr[:, 1]
    male = preds.directions == 0
    down, up = cf < orig, cf > orig
    out = []
    for label in preds.scale.levels:
        s = preds.reference == label
        m, f = s & male, s & ~male
        a, c = int(np.count_nonzero(m & down)), int(np.count_nonzero(f & down))
        out.append(stratum(label, a, int(np.count_nonzero(m)) - a, c, int(np.count_nonzero(f)) - c,
                           int(np.count_nonzero(m & up)), int(np.count_nonzero(f & up)), min_cell))
    return out
