"""Pair-level percentile bootstrap.

The resampling unit is a pair, and every condition of a pair travels with
it. Pairs with the same direction and the same labels under every condition
are interchangeable, so the pairs are collapsed into distinct profiles and
each iteration draws profile multiplicities from a multinomial. That has
exactly the distribution of N draws with replacement, at a cost that does
not grow with N.

Iteration ``i`` always uses its own generator seeded from ``(seed, i)``,
so serial and chunked parallel runs give identical intervals.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import Condition, ConfigError, DataError, PredictionSet, UndefinedMetricError
from .metrics import (
    METRICS,
    _NEEDS,
    DirectionalCounts,
    MetricEstimate,
    MetricReport,
    metrics_from_cells,
    undefined_metrics,
)

METHOD = "percentile"


@dataclass(frozen=True)
class BootstrapConfig:
    iterations: int = 1000
    confidence: float = 0.95
    seed: int = 0
    method: str = METHOD
    max_redraws: int = 1000
    n_jobs: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not 0 < self.confidence < 1:
            raise ConfigError("confidence must lie strictly between 0 and 1")
        if self.method != METHOD:
            raise ConfigError(f"unsupported bootstrap method {self.method!r}; only {METHOD!r}")
        if self.n_jobs < 1:
            raise ConfigError("n_jobs must be >= 1")

    @classmethod
    def from_dict(cls, d: Mapping) -> "BootstrapConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigError(f"unknown bootstrap options {sorted(extra)}")
        return cls(**d)

    def metadata(self, redraws: int = 0) -> dict:
        return {
            "method": self.method,
            "iterations": self.iterations,
            "confidence": self.confidence,
            "seed": self.seed,
            "resampling_unit": "pair",
            "redraws": redraws,
        }


@dataclass(frozen=True)
class Profiles:
    """Distinct pair profiles and how many pairs share each."""

    weights: np.ndarray            # (P,)
    cells: np.ndarray              # (P, n_conditions) flat index into (2, k, k)
    directions: np.ndarray         # (P,)
    conditions: tuple[Condition, ...]
    k: int

    @property
    def n(self) -> int:
        return int(self.weights.sum())

    @classmethod
    def from_predictions(cls, preds: PredictionSet, conditions: Sequence[Condition] | None = None) -> "Profiles":
        conditions = tuple(Condition(c) for c in (conditions or preds.conditions))
        if len(preds) == 0:
            raise DataError("cannot bootstrap an empty prediction set")
        k = preds.scale.k
        d = preds.directions.astype(np.int64)
        flat = []
        for cond in conditions:
            arr = preds.labels[cond] - preds.scale.min
            flat.append(d * k * k + arr[:, 0] * k + arr[:, 1])
        keys = np.stack(flat, axis=1)
        uniq, counts = np.unique(keys, axis=0, return_counts=True)
        return cls(counts.astype(np.int64), uniq, uniq[:, 0] // (k * k), conditions, k)

    def cells_for(self, multiplicity: np.ndarray) -> np.ndarray:
        """Cell counts ``(B, n_conditions, 2, k, k)`` for profile multiplicities ``(B, P)``."""
        size = 2 * self.k * self.k
        out = np.zeros((multiplicity.shape[0], len(self.conditions), size), dtype=np.int64)
        for c in range(len(self.conditions)):
            onehot = np.zeros((len(self.weights), size), dtype=np.int64)
            onehot[np.arange(len(self.weights)), self.cells[:, c]] = 1
            out[:, c] = multiplicity @ onehot
        return out.reshape(multiplicity.shape[0], len(self.conditions), 2, self.k, self.k)


def _draw_block(profiles: Profiles, cfg: BootstrapConfig, start: int, stop: int,
                required_directions: tuple[int, ...]) -> tuple[np.ndarray, int]:
    n = profiles.n
    pvals = profiles.weights / n
    dir_masks = [profiles.directions == d for d in required_directions]
    out = np.empty((stop - start, len(profiles.weights)), dtype=np.int64)
    redraws = 0
    for row, i in enumerate(range(start, stop)):
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(i,)))
        for attempt in range(cfg.max_redraws + 1):
            draw = rng.multinomial(n, pvals)
            if all(draw[m].sum() > 0 for m in dir_masks):
                break
            redraws += 1
        else:
            raise UndefinedMetricError(
                f"statistic undefined on {cfg.max_redraws + 1} consecutive resamples at iteration {i}")
        out[row] = draw
    return out, redraws


def resample(profiles: Profiles, cfg: BootstrapConfig,
             required_directions: tuple[int, ...] = ()) -> tuple[np.ndarray, int]:
    """Profile multiplicities ``(iterations, P)`` and the number of redraws.

    A resample lacking any direction in ``required_directions`` is redrawn
    from the same iteration's generator.
    """
    chunks = np.array_split(np.arange(cfg.iterations), cfg.n_jobs)
    bounds = [(int(c[0]), int(c[-1]) + 1) for c in chunks if len(c)]
    if len(bounds) == 1:
        return _draw_block(profiles, cfg, *bounds[0], required_directions)
    with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
        parts = list(pool.map(lambda b: _draw_block(profiles, cfg, *b, required_directions), bounds))
    return np.concatenate([p[0] for p in parts]), sum(p[1] for p in parts)


def percentile_interval(values: np.ndarray, confidence: float) -> tuple[float, float]:
    alpha = 1.0 - confidence
    lo, hi = np.quantile(values, [alpha / 2, 1 - alpha / 2])
    return float(lo), float(hi)


@dataclass(frozen=True)
class CIResult:
    point: float
    lower: float
    upper: float
    redraws: int = 0

    def __iter__(self):
        return iter((self.point, self.lower, self.upper))


def bootstrap_ci(preds: PredictionSet, statistic: str | Callable[[np.ndarray], np.ndarray],
                 cfg: BootstrapConfig | None = None, condition=Condition.FULL) -> CIResult:
    """Point estimate and percentile interval for one statistic.

    ``statistic`` is a metric name or a function of cell counts shaped
    ``(..., 2, k, k)`` returning one value per leading index (NaN where it is
    undefined).
    """
    cfg = cfg or BootstrapConfig()
    condition = Condition(condition)
    profiles = Profiles.from_predictions(preds, [condition])
    base = profiles.cells_for(profiles.weights[None, :])[0, 0]
    if isinstance(statistic, str):
        if statistic not in METRICS:
            raise ValueError(f"unknown metric {statistic!r}")
        name = statistic
        fn = lambda C: metrics_from_cells(C)[name]  # noqa: E731
        required = _NEEDS[name]
    else:
        fn = statistic
        required = None
    point = float(fn(base))
    if math.isnan(point):
        raise UndefinedMetricError("statistic is undefined on the full set")
    if required is None:
        draws, redraws = _resample_until_defined(profiles, cfg, fn)
    else:
        draws, redraws = resample(profiles, cfg, required)
    values = np.asarray(fn(profiles.cells_for(draws)[:, 0]), dtype=float)
    lower, upper = percentile_interval(values, cfg.confidence)
    return CIResult(point, lower, upper, redraws)


def _resample_until_defined(profiles, cfg, fn):
    # Generic statistics: draw per iteration and check the value directly.
    out = np.empty((cfg.iterations, len(profiles.weights)), dtype=np.int64)
    redraws = 0
    pvals = profiles.weights / profiles.n
    for i in range(cfg.iterations):
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(i,)))
        for _ in range(cfg.max_redraws + 1):
            draw = rng.multinomial(profiles.n, pvals)
            if not math.isnan(float(fn(profiles.cells_for(draw[None, :])[0, 0]))):
                break
            redraws += 1
        else:
            raise UndefinedMetricError(f"statistic undefined on every redraw at iteration {i}")
        out[i] = draw
    return out, redraws


def bootstrap_reports(preds: PredictionSet, cfg: BootstrapConfig | None = None,
                      conditions: Sequence[Condition] | None = None) -> dict[Condition, MetricReport]:
    """Metric reports with intervals for every condition, from one shared resample."""
    cfg = cfg or BootstrapConfig()
    profiles = Profiles.from_predictions(preds, conditions)
    base = profiles.cells_for(profiles.weights[None, :])[0]
    populated = tuple(d for d in (0, 1) if base[0, d].sum() > 0)
    draws, redraws = resample(profiles, cfg, populated)
    cells = profiles.cells_for(draws)
    reports = {}
    for c, cond in enumerate(profiles.conditions):
        undefined = undefined_metrics(base[c])
        point_values = metrics_from_cells(base[c])
        boot_values = metrics_from_cells(cells[:, c])
        est, flags = {}, []
        for m in METRICS:
            if m in undefined:
                est[m] = MetricEstimate(None)
                continue
            point = float(point_values[m])
            lo, hi = percentile_interval(boot_values[m], cfg.confidence)
            if not lo - 1e-12 <= point <= hi + 1e-12:
                flags.append(f"point_outside_interval:{m}")
            est[m] = MetricEstimate(point, lo, hi)
        counts = DirectionalCounts.from_cells(base[c])
        reports[cond] = MetricReport(cond, counts.n, counts, est, undefined, cfg.metadata(redraws), tuple(flags))
    return reports
