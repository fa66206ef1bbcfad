import json
import os

import pytest

from cfaudit.audit import audit
from cfaudit.bootstrap import BootstrapConfig
from cfaudit.core import Condition, ConfigError, DataError
from cfaudit.metrics import METRICS, DirectionalCounts, MetricEstimate, MetricReport
from cfaudit.report import (
    AuditRunManifest, ImpactInput, columns_for, compare_predictors, comparison_markdown, emit_report,
    format_estimate, format_p, load_reports, audit_json, metric_table_markdown, project_impact, round_sig,
    strata_markdown, write_files,
)
from cfaudit.stratified import stratum
from conftest import make_preds


def test_impact_projection_national_figures():
    fr = project_impact(ImpactInput(20.9e6, 0.5, 0.021))
    us = project_impact(ImpactInput(155.4e6, 0.5, 0.021))
    assert fr.raw == 219450.0 and fr.rounded == 220000.0
    assert us.raw == 1631700.0 and us.rounded == 1600000.0
    assert project_impact(ImpactInput(155.4e6, 0.5, 0.021), digits=3).rounded == 1630000.0


def test_impact_input_validation_and_rounding():
    with pytest.raises(ConfigError):
        ImpactInput(1e6, 1.5, 0.02)
    with pytest.raises(ConfigError):
        ImpactInput(-1, 0.5, 0.02)
    assert round_sig(0.0) == 0.0
    assert round_sig(0.012345, 3) == 0.0123


def test_estimate_formatting():
    assert format_estimate("pdr", MetricEstimate(0.084, 0.082, 0.086), 1) == "8.4% [8.2%–8.6%]"
    assert format_estimate("nmdf", MetricEstimate(0.011, 0.009, 0.013), 1) == "0.011 [0.009–0.013]"
    assert format_estimate("dts_m_given_f", MetricEstimate(-0.0246, -0.0332, -0.0161), 2) == \
        "-2.46% [-3.32%–-1.61%]"
    assert format_estimate("pdr", MetricEstimate(None), 1) == "—"
    assert format_estimate("pdr", MetricEstimate(0.5), 1) == "50.0%"
    # values that round to zero never print a negative sign
    assert format_estimate("nats_plus", MetricEstimate(-0.00001, -0.0002, 0.0001), 1) == "0.0% [0.0%–0.0%]"


def test_p_value_formatting():
    assert format_p(0.008343) == "0.0083"
    assert format_p(6.2e-5) == "6.2e-05"
    assert format_p(1e-17) == "<1e-15"
    assert format_p(None) == "—"


def report(nats_plus, n=1000, digest="d", condition=Condition.FULL):
    est = {m: MetricEstimate(0.01, 0.0, 0.02) for m in METRICS}
    est["nats_plus"] = MetricEstimate(*nats_plus)
    counts = DirectionalCounts(n // 2, 0, 0, n - n // 2, 0, 0)
    return {condition: MetricReport(condition, n, counts, est, index_digest=digest)}


def status(a, b):
    rows = compare_predictors(report(a), report(b))
    return {r.metric: r for r in rows}["nats_plus"]


def test_comparison_flags_borderline_when_interval_reaches_zero():
    # fine-tuned 1.01 [0.74, 1.32] vs from-scratch 0.37 [0.00, 0.74] percent
    row = status((0.0101, 0.0074, 0.0132), (0.0037, 0.0000, 0.0074))
    assert row.status == "borderline" and row.overlap is False
    assert row.delta == pytest.approx(-0.0064)


def test_comparison_overlap_and_disjoint():
    assert status((0.01, 0.005, 0.015), (0.012, 0.008, 0.02)).status == "overlap"
    assert status((0.01, 0.008, 0.012), (0.03, 0.025, 0.035)).status == "disjoint"
    assert status((0.01, 0.008, 0.012), (0.01, None, None)).status == "no_interval"


def test_comparison_rejects_different_index_sets():
    with pytest.raises(DataError):
        compare_predictors(report((0, 0, 0), digest="a"), report((0, 0, 0), digest="b"))
    with pytest.raises(DataError):
        compare_predictors(report((0, 0, 0), n=10), report((0, 0, 0), n=11))
    with pytest.raises(DataError):
        compare_predictors(report((0, 0, 0)), report((0, 0, 0), condition=Condition.TAB_ISO))


def test_comparison_markdown_lists_every_row():
    rows = compare_predictors(report((0.0101, 0.0074, 0.0132)), report((0.0037, 0.0, 0.0074)))
    md = comparison_markdown(rows, ("FT", "FS"))
    assert md.count("\n") == 2 + len(rows)
    assert "-0.64 pp" in md and "borderline" in md


def sample_reports():
    p = make_preds([2, 3, 4, 5, 3, 4] * 20, [3, 3, 2, 5, 4, 4] * 20, ["mf", "fm", "mf", "fm", "fm", "mf"] * 20,
                   reference=[2, 3, 4, 5, 3, 4] * 20)
    return p, audit(p, BootstrapConfig(100))


def test_metric_table_layout():
    _, reps = sample_reports()
    md = metric_table_markdown(columns_for(reps))
    lines = md.strip().splitlines()
    assert lines[0] == "| Metric | Full |"
    assert lines[2].startswith("| Pairwise Disagreement Rate (PDR) |")
    assert len(lines) == 2 + len(METRICS) + 2


def test_strata_markdown_shows_dashes_for_suppressed():
    md = strata_markdown([stratum(2, 0, 7438, 0, 5858), stratum(5, 194, 1335, 72, 726)])
    assert "| 2 | 0 | 7,438 | 0 | 5,858 | — | — | — |" in md
    assert "| 5 | 194 | 1,335 | 72 | 726 | 1.47 | [1.10–1.95] | 0.0083 |" in md


def test_emit_report_writes_consistent_files(tmp_path):
    _, reps = sample_reports()
    manifest = AuditRunManifest("cfg", 0)
    cols = columns_for(reps)
    paths = emit_report(tmp_path, cols, [stratum(3, 10, 20, 30, 40)], manifest,
                        formats=("json", "markdown"), notes=["synthetic data"])
    assert sorted(p.name for p in paths) == ["plot_data.json", "report.json", "report.md"]
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["manifest"]["run_id"] == manifest.run_id
    plot = json.loads((tmp_path / "plot_data.json").read_text())
    assert plot["metrics"]["pdr"]["Full"] == doc["columns"][0]["report"]["metrics"]["pdr"]
    assert "synthetic data" in (tmp_path / "report.md").read_text()
    with pytest.raises(ConfigError):
        emit_report(tmp_path, cols, formats=("pdf",))


def test_audit_json_round_trips_through_load_reports(tmp_path):
    _, reps = sample_reports()
    path = tmp_path / "audit.json"
    path.write_text(audit_json(reps, meta={"profile": "bordeaux"}))
    back = load_reports(path)
    assert back[Condition.FULL].to_dict() == reps[Condition.FULL].to_dict()


def test_failed_write_leaves_nothing_behind(tmp_path, monkeypatch):
    real = os.replace
    calls = []

    def flaky(src, dst):
        calls.append(dst)
        if len(calls) == 2:
            raise OSError("disk full")
        real(src, dst)

    monkeypatch.setattr(os, "replace", flaky)
    with pytest.raises(OSError):
        write_files({tmp_path / "a.json": "{}", tmp_path / "b.json": "{}"})
    assert list(tmp_path.iterdir()) == []


def test_run_id_ignores_paths_and_timestamps(tmp_path):
    for d in ("x", "y"):
        (tmp_path / d).mkdir()
        (tmp_path / d / "in.jsonl").write_text("same\n")
    m1, m2 = AuditRunManifest("h", 1), AuditRunManifest("h", 1)
    m1.add_input(tmp_path / "x" / "in.jsonl")
    m2.add_input(tmp_path / "y" / "in.jsonl")
    m2.add_stage("audit", {"pairs": 3})
    assert m1.run_id == m2.run_id
    assert AuditRunManifest("h", 2).run_id != AuditRunManifest("h", 1).run_id
    m2.write(tmp_path / "manifest.json")
    assert AuditRunManifest.load(tmp_path / "manifest.json").run_id == m2.run_id
