"""Report rendering, predictor comparison, impact projection and run manifests."""

from __future__ import annotations

import datetime as dt
import json
import os
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import __version__
from .config import config_hash, file_digest
from .core import Condition, ConfigError, DataError
from .metrics import METRICS, PROPORTION_METRICS, MetricEstimate, MetricReport
from .stratified import StratumTable

REPORT_SCHEMA = "cfaudit.report/v1"
MANIFEST_NAME = "manifest.json"

ROW_LABELS = {
    "pdr": "Pairwise Disagreement Rate (PDR)",
    "p_down_mf": "P↓ M→F (counterfactual more severe)",
    "p_up_mf": "P↑ M→F (counterfactual less severe)",
    "p_down_fm": "P↓ F→M (counterfactual more severe)",
    "p_up_fm": "P↑ F→M (counterfactual less severe)",
    "dts_m_given_f": "DTS M|F (F→M pairs)",
    "dts_f_given_m": "DTS F|M (M→F pairs)",
    "nats_minus": "NATS(−)",
    "nats_plus": "NATS(+)",
    "nmdf": "NMDF (female − male)",
}
_GROUPS = {"p_down_mf": "Directional probabilities", "dts_m_given_f": "Net effects"}
CONDITION_TITLES = {Condition.FULL: "Full", Condition.TEXT_ISO: "Text-iso", Condition.TAB_ISO: "Tab-iso"}
DASH = "—"


# Impact projection --------------------------------------------------------------

@dataclass(frozen=True)
class ImpactInput:
    annual_visits: float
    share: float
    differential: float

    def __post_init__(self):
        if min(self.annual_visits, self.share, self.differential) < 0:
            raise ConfigError("impact inputs must be non-negative")
        if self.share > 1 or self.differential > 1:
            raise ConfigError("share and differential are ratios and cannot exceed 1")


@dataclass(frozen=True)
class ImpactResult:
    raw: float
    rounded: float

    def to_dict(self) -> dict:
        return {"raw": self.raw, "rounded": self.rounded}


def round_sig(x: float, digits: int = 2) -> float:
    if x == 0:
        return 0.0
    return float(f"{x:.{digits - 1}e}")


def project_impact(inp: ImpactInput, digits: int = 2) -> ImpactResult:
    """``visits * share * differential``, also rounded to ``digits`` significant figures.

    The product is formed in decimal arithmetic on the shortest decimal form
    of each factor, so inputs like ``20.9e6`` multiply without binary drift.
    """
    raw = Decimal(repr(float(inp.annual_visits))) * Decimal(repr(float(inp.share))) * Decimal(repr(float(inp.differential)))
    raw = float(raw)
    return ImpactResult(raw, round_sig(raw, digits))


# Formatting -------------------------------------------------------------------

def _clean(x: float, decimals: int) -> float:
    r = round(x, decimals)
    return 0.0 if r == 0 else r


def format_value(metric: str, value: float | None, pct_decimals: int) -> str:
    if value is None:
        return DASH
    if metric in PROPORTION_METRICS:
        return f"{_clean(100 * value, pct_decimals):.{pct_decimals}f}%"
    d = pct_decimals + 2
    return f"{_clean(value, d):.{d}f}"


def format_estimate(metric: str, est: MetricEstimate, pct_decimals: int) -> str:
    if not est.defined:
        return DASH
    point = format_value(metric, est.point, pct_decimals)
    if est.lower is None or est.upper is None:
        return point
    lo = format_value(metric, est.lower, pct_decimals)
    hi = format_value(metric, est.upper, pct_decimals)
    return f"{point} [{lo}–{hi}]"


def format_p(p: float | None) -> str:
    if p is None:
        return DASH
    if p < 1e-15:
        return "<1e-15"
    if p < 1e-3:
        return f"{p:.1e}"
    return f"{p:.4f}"


@dataclass(frozen=True)
class ReportColumn:
    title: str
    report: MetricReport
    pct_decimals: int = 1

    def to_dict(self) -> dict:
        return {"title": self.title, "pct_decimals": self.pct_decimals, "report": self.report.to_dict()}


def columns_for(reports: Mapping[Condition, MetricReport], pct_decimals: int = 1,
                prefix: str = "") -> list[ReportColumn]:
    return [ReportColumn(f"{prefix}{CONDITION_TITLES[Condition(c)]}", r, pct_decimals) for c, r in reports.items()]


def metric_table_markdown(columns: Sequence[ReportColumn]) -> str:
    """Rows in the fixed metric order, one column per report."""
    if not columns:
        raise DataError("no report columns")
    width = len(columns) + 1
    lines = ["| Metric | " + " | ".join(c.title for c in columns) + " |",
             "|" + "---|" * width]
    for metric in METRICS:
        if metric in _GROUPS:
            lines.append(f"| *{_GROUPS[metric]}* |" + " |" * len(columns))
        cells = [format_estimate(metric, c.report[metric], c.pct_decimals) for c in columns]
        lines.append(f"| {ROW_LABELS[metric]} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def _pct(x: float | None, d: int) -> str:
    return DASH if x is None else f"{_clean(x, d):.{d}f}%"


def _delta(x: float | None, y: float | None, d: int) -> str:
    if x is None or y is None:
        return DASH
    v = _clean(x - y, d)
    return f"{v:.{d}f}" if v == 0 else f"{v:+.{d}f}"


def strata_markdown(strata: Sequence[StratumTable], pct_decimals: int = 1) -> str:
    d = pct_decimals
    out = ["| Label | cf>orig (M) | cf<orig (M) | cf>orig (F) | cf<orig (F) | Δ M−F cf> | Δ M−F cf< |",
           "|---|---|---|---|---|---|---|"]
    for s in strata:
        out.append(
            f"| {s.label} | {_pct(s.pct_up_m, d)} | {_pct(s.pct_down_m, d)} | {_pct(s.pct_up_f, d)} | "
            f"{_pct(s.pct_down_f, d)} | {_delta(s.pct_up_m, s.pct_up_f, d)} | {_delta(s.pct_down_m, s.pct_down_f, d)} |"
        )
    out += ["", "| Label | cf<orig (M) | cf≥orig (M) | cf<orig (F) | cf≥orig (F) | OR (M/F) | 95% CI | p |",
            "|---|---|---|---|---|---|---|---|"]
    for s in strata:
        or_txt = DASH if s.or_value is None else f"{s.or_value:.2f}"
        ci_txt = DASH if s.ci is None else f"[{s.ci[0]:.2f}–{s.ci[1]:.2f}]"
        out.append(f"| {s.label} | {s.a:,} | {s.b:,} | {s.c:,} | {s.d:,} | {or_txt} | {ci_txt} | {format_p(s.p_value)} |")
    return "\n".join(out) + "\n"


def plot_data(columns: Sequence[ReportColumn]) -> dict:
    """``metric -> column title -> {point, lower, upper}`` for external plotting."""
    return {
        "schema": "cfaudit.plot/v1",
        "metrics": {
            m: {c.title: c.report[m].to_dict() for c in columns} for m in METRICS
        },
    }


# Comparison -------------------------------------------------------------------

COMPARED = ("nats_minus", "nats_plus", "dts_m_given_f", "dts_f_given_m", "nmdf")


@dataclass(frozen=True)
class ComparisonRow:
    condition: Condition
    metric: str
    a: MetricEstimate
    b: MetricEstimate
    delta: float | None
    overlap: bool | None
    status: str

    def to_dict(self) -> dict:
        return {"condition": self.condition.value, "metric": self.metric, "a": self.a.to_dict(),
                "b": self.b.to_dict(), "delta": self.delta, "overlap": self.overlap, "status": self.status}


def _interval_status(a: MetricEstimate, b: MetricEstimate, tol: float) -> tuple[bool | None, str]:
    if None in (a.lower, a.upper, b.lower, b.upper):
        return None, "no_interval"
    overlap = a.lower < b.upper - tol and b.lower < a.upper - tol
    touching = abs(a.lower - b.upper) <= tol or abs(b.lower - a.upper) <= tol
    touches_zero = any(abs(x) <= tol for x in (a.lower, a.upper, b.lower, b.upper))
    if overlap:
        return True, "overlap"
    if touching or touches_zero:
        return False, "borderline"
    return False, "disjoint"


def compare_predictors(a: Mapping[Condition, MetricReport], b: Mapping[Condition, MetricReport],
                       metrics: Sequence[str] = COMPARED, tol: float = 5e-5) -> list[ComparisonRow]:
    """Side-by-side estimates of two audits on the same pairs.

    ``delta`` is ``b - a``. Intervals that overlap only within ``tol`` (half
    a unit of 0.01 percentage points by default), or that reach zero without
    overlapping, are flagged ``borderline``.
    """
    a = {Condition(k): v for k, v in a.items()}
    b = {Condition(k): v for k, v in b.items()}
    if set(a) != set(b):
        raise DataError("the two audits cover different conditions")
    rows = []
    for cond in (c for c in Condition if c in a):
        ra, rb = a[cond], b[cond]
        if ra.n_pairs != rb.n_pairs or (ra.index_digest and rb.index_digest and ra.index_digest != rb.index_digest):
            raise DataError(f"audits under {cond.value} were run on different index sets")
        for m in metrics:
            ea, eb = ra[m], rb[m]
            delta = None if not (ea.defined and eb.defined) else eb.point - ea.point
            overlap, status = _interval_status(ea, eb, tol)
            rows.append(ComparisonRow(cond, m, ea, eb, delta, overlap, status))
    return rows


def comparison_markdown(rows: Sequence[ComparisonRow], labels=("A", "B"), pct_decimals: int = 2) -> str:
    out = [f"| Condition | Metric | {labels[0]} | {labels[1]} | Δ ({labels[1]} − {labels[0]}) | Intervals |",
           "|---|---|---|---|---|---|"]
    for r in rows:
        if r.delta is None:
            delta = DASH
        elif r.metric in PROPORTION_METRICS:
            delta = f"{_clean(100 * r.delta, pct_decimals):+.{pct_decimals}f} pp"
        else:
            delta = f"{_clean(r.delta, pct_decimals + 2):+.{pct_decimals + 2}f}"
        out.append(f"| {CONDITION_TITLES[r.condition]} | {ROW_LABELS[r.metric]} | "
                   f"{format_estimate(r.metric, r.a, pct_decimals)} | {format_estimate(r.metric, r.b, pct_decimals)} | "
                   f"{delta} | {r.status} |")
    return "\n".join(out) + "\n"


# Manifest ---------------------------------------------------------------------

def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class AuditRunManifest:
    """Provenance for one run directory.

    ``run_id`` covers configuration, input digests, seed and tool version
    only, so it is reproducible; timestamps live in ``stages``.
    """

    config_hash: str
    seed: int
    inputs: dict[str, str] = field(default_factory=dict)
    tool_version: str = __version__
    stages: list[dict] = field(default_factory=list)

    @property
    def run_id(self) -> str:
        # Input contents, not their paths: the same data in another directory
        # yields the same id.
        return config_hash({"config": self.config_hash, "inputs": sorted(set(self.inputs.values())),
                            "seed": self.seed, "version": self.tool_version})

    def add_input(self, path) -> None:
        self.inputs[str(path)] = file_digest(path)

    def add_stage(self, stage: str, counts: Mapping[str, int] | None = None,
                  outputs: Iterable = (), started: str | None = None) -> dict:
        entry = {
            "stage": stage,
            "counts": dict(counts or {}),
            "outputs": [str(p) for p in outputs],
            "started": started or _now(),
            "finished": _now(),
        }
        self.stages.append(entry)
        return entry

    def to_dict(self) -> dict:
        return {"schema": "cfaudit.manifest/v1", "run_id": self.run_id, "config_hash": self.config_hash,
                "seed": self.seed, "tool_version": self.tool_version, "inputs": dict(sorted(self.inputs.items())),
                "stages": list(self.stages)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "AuditRunManifest":
        return cls(d["config_hash"], int(d["seed"]), dict(d.get("inputs", {})), d.get("tool_version", __version__),
                   list(d.get("stages", [])))

    def write(self, path) -> None:
        write_files({Path(path): json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"})

    @classmethod
    def load(cls, path) -> "AuditRunManifest":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# Emission ---------------------------------------------------------------------

def write_files(files: Mapping[Path, str]) -> list[Path]:
    """Write every file or none.

    Content goes to sibling temporary files first; if any write or rename
    fails, the temporaries and files already moved into place by this call
    are removed before the error propagates.
    """
    temps: list[tuple[Path, Path]] = []
    placed: list[Path] = []
    try:
        for path, text in files.items():
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
            temps.append((tmp, path))
            tmp.write_text(text, encoding="utf-8")
        for tmp, path in temps:
            os.replace(tmp, path)
            placed.append(path)
    except OSError:
        for tmp, _ in temps:
            tmp.unlink(missing_ok=True)
        for path in placed:
            path.unlink(missing_ok=True)
        raise
    return [p for _, p in temps]


def report_json(columns: Sequence[ReportColumn], strata: Sequence[StratumTable] | None = None,
                manifest: AuditRunManifest | None = None, notes: Sequence[str] = ()) -> str:
    doc = {
        "schema": REPORT_SCHEMA,
        "manifest": None if manifest is None else {"file": MANIFEST_NAME, "run_id": manifest.run_id},
        "columns": [c.to_dict() for c in columns],
        "strata": None if strata is None else [s.to_dict() for s in strata],
        "notes": list(notes),
    }
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def report_markdown(columns: Sequence[ReportColumn], strata: Sequence[StratumTable] | None = None,
                    manifest: AuditRunManifest | None = None, notes: Sequence[str] = ()) -> str:
    parts = ["# Counterfactual bias audit", ""]
    if manifest is not None:
        parts += [f"Run `{manifest.run_id[:16]}`, seed {manifest.seed}, cfaudit {manifest.tool_version}.", ""]
    boot = next((c.report.bootstrap for c in columns if c.report.bootstrap), None)
    if boot:
        parts += [f"Intervals: {boot['confidence']:.0%} {boot['method']} bootstrap, "
                  f"{boot['iterations']} iterations over pairs, seed {boot['seed']}.", ""]
    parts += ["## Metrics", "", metric_table_markdown(columns)]
    pairs = ", ".join(f"{c.title}: {c.report.n_pairs:,}" for c in columns)
    parts += [f"Pairs per column: {pairs}.", ""]
    if strata:
        parts += ["## By original label", "", strata_markdown(strata, columns[0].pct_decimals)]
    if notes:
        parts += ["## Notes", ""] + [f"- {n}" for n in notes] + [""]
    return "\n".join(parts)


def emit_report(out_dir, columns: Sequence[ReportColumn], strata: Sequence[StratumTable] | None = None,
                manifest: AuditRunManifest | None = None, formats: Sequence[str] = ("json", "markdown"),
                notes: Sequence[str] = (), stem: str = "report") -> list[Path]:
    """Write ``report.json``, ``report.md`` and ``plot_data.json`` as requested.

    All formats are rendered from the same report objects. ``formats`` may
    contain ``json``, ``markdown`` and ``plot``; ``json`` implies ``plot``.
    """
    out_dir = Path(out_dir)
    unknown = set(formats) - {"json", "markdown", "plot"}
    if unknown:
        raise ConfigError(f"unknown report formats {sorted(unknown)}")
    files: dict[Path, str] = {}
    if "json" in formats:
        files[out_dir / f"{stem}.json"] = report_json(columns, strata, manifest, notes)
    if "json" in formats or "plot" in formats:
        files[out_dir / "plot_data.json"] = json.dumps(plot_data(columns), indent=2, sort_keys=True,
                                                       ensure_ascii=False) + "\n"
    if "markdown" in formats:
        files[out_dir / f"{stem}.md"] = report_markdown(columns, strata, manifest, notes)
    return write_files(files)


def load_reports(path) -> dict[Condition, MetricReport]:
    """Reports from an audit JSON file written by the ``audit`` command."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if "reports" in doc:
        items = doc["reports"]
    elif "columns" in doc:
        items = [c["report"] for c in doc["columns"]]
    else:
        raise DataError(f"{path} holds no metric reports")
    reports = [MetricReport.from_dict(r) for r in items]
    return {r.condition: r for r in reports}


def audit_json(reports: Mapping[Condition, MetricReport], manifest: AuditRunManifest | None = None,
               meta: Mapping | None = None) -> str:
    doc = {
        **dict(meta or {}),
        "schema": REPORT_SCHEMA,
        "manifest": None if manifest is None else {"file": MANIFEST_NAME, "run_id": manifest.run_id},
        "reports": [r.to_dict() for r in reports.values()],
    }
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
