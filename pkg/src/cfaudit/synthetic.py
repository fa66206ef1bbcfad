"""Synthetic paired populations with a known injected sex effect.

Generative model, per pair:

* a base label ``L`` is drawn from ``base_distribution``;
* the male presentation scores ``L``; the female presentation scores
  ``min(L + 1, max)`` with probability ``delta`` and ``L`` otherwise;
* each presentation then independently moves one level down or up with
  probability ``epsilon / 2`` each, clamped to the scale;
* the original record is male with probability ``male_fraction``.

Because every metric only depends on the joint law of the female and male
scores, the true values follow by enumeration (see :func:`closed_form_truth`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import (
    DIRECTION_CODES,
    Condition,
    ConfigError,
    CounterfactualPair,
    DecisionRecord,
    Direction,
    IndexSet,
    PredictionSet,
    Quality,
    Sex,
    TriageScale,
)
from .predictors import TablePredictor

_COMPLAINTS = ("chest pain", "abdominal pain", "headache", "dyspnea", "fall", "fever", "back pain", "dizziness")


@dataclass(frozen=True)
class SynthConfig:
    n_pairs: int
    scale: TriageScale = TriageScale(2, 5)
    base_distribution: tuple[float, ...] | None = None
    delta: float = 0.0
    epsilon: float = 0.0
    male_fraction: float = 0.55
    seed: int = 0
    conditions: tuple[Condition, ...] = (Condition.FULL,)

    def __post_init__(self):
        if self.n_pairs < 1:
            raise ConfigError("n_pairs must be >= 1")
        base = self.base_distribution
        if base is None:
            base = (1.0 / self.scale.k,) * self.scale.k
        base = tuple(float(p) for p in base)
        if len(base) != self.scale.k:
            raise ConfigError(f"base distribution needs {self.scale.k} entries")
        if any(p < 0 for p in base) or abs(sum(base) - 1.0) > 1e-9:
            raise ConfigError("base distribution must be non-negative and sum to 1")
        object.__setattr__(self, "base_distribution", base)
        for name in ("delta", "epsilon", "male_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        object.__setattr__(self, "conditions", tuple(Condition(c) for c in self.conditions))
        if not self.conditions:
            raise ConfigError("at least one condition is required")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthConfig":
        d = dict(d)
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigError(f"unknown synth options {sorted(extra)}")
        if "scale" in d:
            d["scale"] = TriageScale.from_dict(d["scale"])
        if "conditions" in d:
            d["conditions"] = Condition.parse_list(d["conditions"])
        if d.get("base_distribution") is not None:
            d["base_distribution"] = tuple(d["base_distribution"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "n_pairs": self.n_pairs,
            "scale": self.scale.to_dict(),
            "base_distribution": list(self.base_distribution),
            "delta": self.delta,
            "epsilon": self.epsilon,
            "male_fraction": self.male_fraction,
            "seed": self.seed,
            "conditions": [c.value for c in self.conditions],
        }


def joint_distribution(cfg: SynthConfig) -> np.ndarray:
    """``P[f, m]``: probability that the female scores level ``f`` and the male ``m`` (offset by scale min)."""
    k = cfg.scale.k
    noise = {-1: cfg.epsilon / 2, 0: 1 - cfg.epsilon, 1: cfg.epsilon / 2}
    P = np.zeros((k, k))
    for base, p_base in enumerate(cfg.base_distribution):
        if p_base == 0:
            continue
        for bumped, p_bump in ((True, cfg.delta), (False, 1 - cfg.delta)):
            f0 = min(base + 1, k - 1) if bumped else base
            for nf, pf in noise.items():
                for nm, pm in noise.items():
                    f = min(max(f0 + nf, 0), k - 1)
                    m = min(max(base + nm, 0), k - 1)
                    P[f, m] += p_base * p_bump * pf * pm
    return P


def closed_form_truth(cfg: SynthConfig) -> dict[str, float]:
    P = joint_distribution(cfg)
    k = cfg.scale.k
    f, m = np.indices((k, k))
    higher = float(P[f > m].sum())   # female presentation less severe
    lower = float(P[f < m].sum())
    d = higher - lower
    # M->F pairs: original = male, counterfactual = female; F->M the reverse.
    return {
        "pdr": higher + lower,
        "p_down_mf": lower,
        "p_up_mf": higher,
        "p_down_fm": higher,
        "p_up_fm": lower,
        "dts_m_given_f": -d,
        "dts_f_given_m": d,
        "nats_minus": d,
        "nats_plus": -d,
        "nmdf": float((P * (f - m)).sum()),
    }


@dataclass
class SynthResult:
    config: SynthConfig
    pairs: list[CounterfactualPair]
    predictions: PredictionSet
    truth: dict[str, float]
    predictor: TablePredictor = field(repr=False)


def _labels(rng: np.random.Generator, base: np.ndarray, bump: np.ndarray, cfg: SynthConfig):
    k = cfg.scale.k
    n = len(base)

    def noisy(x):
        u = rng.random(n)
        step = np.where(u < cfg.epsilon / 2, -1, np.where(u < cfg.epsilon, 1, 0))
        return np.clip(x + step, 0, k - 1)

    female = np.where(bump, np.minimum(base + 1, k - 1), base)
    return noisy(female), noisy(base)


def _record(pid: str, sex: Sex, age: int, complaint: str, label: int, hr: int) -> DecisionRecord:
    noun, pron = ("woman", "She") if sex is Sex.FEMALE else ("man", "He")
    return DecisionRecord(
        id=pid,
        sex=sex,
        age=age,
        tabular={"heart_rate": hr},
        chief_complaint=complaint,
        hpi=f"Adult {noun} presenting with {complaint}. {pron} reports onset today.",
        pmh="none",
        label=label,
    )


def generate(cfg: SynthConfig, *, with_records: bool = True) -> SynthResult:
    """Draw a population and its predictions; deterministic for ``cfg.seed``.

    ``with_records=False`` skips building record objects, which is what
    large replication studies want.
    """
    rng = np.random.default_rng(cfg.seed)
    n, lo = cfg.n_pairs, cfg.scale.min
    base = rng.choice(cfg.scale.k, size=n, p=cfg.base_distribution)
    male_orig = rng.random(n) < cfg.male_fraction
    bump = rng.random(n) < cfg.delta
    labels = {}
    for cond in cfg.conditions:
        female, male = _labels(rng, base, bump, cfg)
        orig = np.where(male_orig, male, female) + lo
        cf = np.where(male_orig, female, male) + lo
        labels[cond] = np.stack([orig, cf], axis=1)
    ids = tuple(f"syn{i:07d}" for i in range(n))
    directions = np.where(male_orig, DIRECTION_CODES[Direction.M_TO_F], DIRECTION_CODES[Direction.F_TO_M])
    preds = PredictionSet(IndexSet(ids), directions, labels, cfg.scale, base + lo)

    pairs = []
    if with_records:
        ages = rng.integers(18, 95, size=n)
        hrs = rng.integers(50, 130, size=n)
        complaints = rng.integers(0, len(_COMPLAINTS), size=n)
        for i, pid in enumerate(ids):
            sex = Sex.MALE if male_orig[i] else Sex.FEMALE
            orig = _record(pid, sex, int(ages[i]), _COMPLAINTS[complaints[i]], int(base[i] + lo), int(hrs[i]))
            cf = _record(pid, sex.flip(), int(ages[i]), _COMPLAINTS[complaints[i]], int(base[i] + lo), int(hrs[i]))
            pairs.append(CounterfactualPair(pid, orig, cf, Direction.from_original_sex(sex), Condition.FULL, Quality.CORRECT))

    table = {}
    for cond, arr in labels.items():
        for i, pid in enumerate(ids):
            table[(pid, cond.value, "original")] = int(arr[i, 0])
            table[(pid, cond.value, "counterfactual")] = int(arr[i, 1])
    return SynthResult(cfg, pairs, preds, closed_form_truth(cfg), TablePredictor(table, cfg.scale))


def replicate(cfg: SynthConfig, seeds: Sequence[int]):
    """Yield one :class:`SynthResult` per seed, without record objects."""
    for seed in seeds:
        yield generate(SynthConfig(**{**cfg.__dict__, "seed": int(seed)}), with_records=False)
