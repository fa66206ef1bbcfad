"""Counterfactual sex/gender bias audits for ordinal decisions."""

__version__ = "0.1.0"

from .audit import CounterfactualBiasAuditor, audit, combine
from .bootstrap import BootstrapConfig, bootstrap_ci, bootstrap_reports
from .core import (
    AuditError,
    Condition,
    ConfigError,
    CounterfactualPair,
    DataError,
    DecisionRecord,
    Direction,
    IndexSet,
    PredictionSet,
    Quality,
    Role,
    ServiceError,
    Sex,
    TriageScale,
    UndefinedMetricError,
    classify_direction,
    make_variant,
)
from .filtering import FilterConfig, RecordFilter, filter_dataset, stratified_split
from .generation import flip_tabular, generate_pairs, parse_generation, validate_cf
from .lexicons import GenderLexicon, default_lexicon, matches_lexicon
from .metrics import MetricReport, directional_probs, dts, nats, nmdf, pdr
from .predictors import (
    BagOfWordsTriageClassifier,
    PredictionError,
    PredictorBinding,
    TablePredictor,
    agreement_matrix,
    predict,
    predict_paired,
    weighted_kappa,
)
from .report import ImpactInput, compare_predictors, emit_report, project_impact
from .stratified import chi_square_p, odds_ratio, stratify
from .synthetic import SynthConfig, closed_form_truth, generate
from .templates import build_prompt, get_template

__all__ = [name for name in dir() if not name.startswith("_")]
