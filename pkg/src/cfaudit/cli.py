"""``cf-audit`` command line.

Exit codes: 0 success, 2 configuration or usage error, 3 data error,
4 generation/prediction service error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .audit import audit
from .bootstrap import BootstrapConfig
from .config import PROFILES, config_hash, get_profile, load_toml, section
from .core import (
    AuditError,
    Condition,
    ConfigError,
    DataError,
    PredictionSet,
    ServiceError,
    TriageScale,
    read_jsonl,
    read_pairs,
    read_records,
    write_jsonl,
)
from .filtering import FilterConfig, filter_dataset, stratified_split
from .generation import generate_pairs
from .predictors import PredictorBinding, predict_paired, train_bow_baseline
from .report import (
    MANIFEST_NAME,
    AuditRunManifest,
    ImpactInput,
    ReportColumn,
    audit_json,
    columns_for,
    compare_predictors,
    comparison_markdown,
    emit_report,
    load_reports,
    metric_table_markdown,
    project_impact,
    strata_markdown,
    write_files,
)
from .service import ChatClient, GenServiceConfig
from .stratified import MIN_CELL, StratumTable, stratify
from .synthetic import SynthConfig, generate
from .templates import get_template

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SERVICE = 0, 2, 3, 4

log = logging.getLogger("cfaudit")


# Helpers ----------------------------------------------------------------------

class Context:
    def __init__(self, args):
        self.args = args
        self.profile = get_profile(args.profile)
        self.out_dir = Path(args.out_dir)
        self.config = load_toml(args.config) if args.config else {}

    @property
    def seed(self) -> int:
        return 0 if self.args.seed is None else self.args.seed

    def out(self, path: str | None, default: str) -> Path:
        p = Path(path or default)
        return p if p.is_absolute() else self.out_dir / p

    @property
    def scale(self) -> TriageScale:
        raw = self.config.get("scale")
        return TriageScale.from_dict(raw) if raw else self.profile.audit_scale

    def manifest(self) -> AuditRunManifest:
        path = self.out_dir / MANIFEST_NAME
        effective = {"profile": self.profile.name, "config": self.config}
        if path.exists():
            m = AuditRunManifest.load(path)
            m.config_hash = config_hash(effective)
            m.seed = self.seed
            return m
        return AuditRunManifest(config_hash(effective), self.seed)

    def record(self, stage: str, inputs=(), outputs=(), counts=None) -> AuditRunManifest:
        m = self.manifest()
        for p in inputs:
            if p:
                m.add_input(p)
        m.add_stage(stage, counts, outputs)
        m.write(self.out_dir / MANIFEST_NAME)
        return m


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False))


def _load_preds(path, scale: TriageScale) -> PredictionSet:
    return PredictionSet.from_rows(read_jsonl(path), scale)


# Commands ---------------------------------------------------------------------

def cmd_filter(ctx: Context) -> int:
    a = ctx.args
    cfg_dict = ctx.profile.filter_defaults()
    cfg_dict.update(section(ctx.config, "filter"))
    cfg = FilterConfig.from_dict(cfg_dict)
    with open(a.input, encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    result = filter_dataset(lines, cfg)
    kept_path, rej_path = ctx.out(a.kept, "kept.jsonl"), ctx.out(a.rejected, "rejected.jsonl")
    kept_path.parent.mkdir(parents=True, exist_ok=True)
    rej_path.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(kept_path, result.kept)
    write_jsonl(rej_path, result.rejected)
    summary = result.summary()
    outputs = [kept_path, rej_path]
    if a.split is not None:
        train, test = stratified_split(result.kept, a.split, ctx.seed)
        tr, te = ctx.out(a.train, "train.jsonl"), ctx.out(a.test, "test.jsonl")
        write_jsonl(tr, train)
        write_jsonl(te, test)
        summary["split"] = {"train": len(train), "test": len(test), "fraction": a.split}
        outputs += [tr, te]
    ctx.record("filter", [a.input], outputs, {"kept": summary["kept"], "rejected": summary["rejected"]})
    _print_json(summary)
    return EXIT_OK


def _service_config(ctx: Context) -> GenServiceConfig:
    a = ctx.args
    d = section(ctx.config, "service")
    for key in ("endpoint", "model", "concurrency", "timeout", "retries", "temperature"):
        value = getattr(a, key, None)
        if value is not None:
            d[key] = value
    if not d.get("endpoint"):
        raise ConfigError("an endpoint is required (--endpoint or [service] endpoint)")
    return GenServiceConfig.from_dict(d)


def cmd_pairs(ctx: Context) -> int:
    a = ctx.args
    records = read_records(a.input)
    language = a.template or ctx.profile.language
    template = get_template(language, a.exemplars)
    service = _service_config(ctx)
    out = ctx.out(a.out, "pairs.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    checkpoint = ctx.out(a.checkpoint, out.name + ".checkpoint")
    with ChatClient(service, record_bodies=bool(a.transcript)) as client:
        try:
            result = generate_pairs(records, template, service, client=client, checkpoint=checkpoint)
        finally:
            if a.transcript:
                write_jsonl(ctx.out(a.transcript, "transcript.jsonl"), client.transcript)
    log_path = ctx.out(a.log, "generation_log.jsonl")
    write_jsonl(out, result.pairs)
    write_jsonl(log_path, result.log)
    hist = result.quality_histogram()
    ctx.record("pairs", [a.input], [out, log_path],
               {"records": len(records), "pairs": len(result.pairs), "index_set": len(result.index_set), **hist})
    _print_json({"pairs": len(result.pairs), "index_set": len(result.index_set), "quality": hist})
    return EXIT_OK


def cmd_train_baseline(ctx: Context) -> int:
    a = ctx.args
    records = read_records(a.train)
    params = section(ctx.config, "baseline")
    model = train_bow_baseline(records, seed=ctx.seed, **params)
    out = ctx.out(a.model_out, "baseline.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    ctx.record("train-baseline", [a.train], [out], {"train": len(records)})
    _print_json({"model": str(out), "classes": [int(c) for c in model.classes_], "iterations": int(model.n_iter_)})
    return EXIT_OK


def cmd_predict(ctx: Context) -> int:
    a = ctx.args
    pairs = read_pairs(a.pairs)
    conditions = Condition.parse_list(a.conditions)
    binding_cfg = load_toml(a.binding) if a.binding else {}
    binding_cfg = dict(binding_cfg.get("binding", binding_cfg))
    binding_cfg.setdefault("language", ctx.profile.language)
    base_dir = Path(a.binding).parent if a.binding else Path(".")
    binding = PredictorBinding.from_dict(binding_cfg, base_dir, scale=ctx.scale)
    predictor = binding.build()
    preds, dropped = predict_paired(pairs, conditions, predictor)
    out = ctx.out(a.out, "preds.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(out, preds.to_rows())
    log_path = ctx.out(a.log, "predict_log.jsonl")
    write_jsonl(log_path, dropped)
    counts = {"pairs_in": len(pairs), "index_set": len(preds), "dropped": len(dropped),
              "predictions": 2 * len(preds) * len(conditions)}
    ctx.record("predict", [a.pairs, a.binding], [out, log_path], counts)
    _print_json(counts)
    return EXIT_OK


def _bootstrap_config(ctx: Context) -> BootstrapConfig:
    a = ctx.args
    d = section(ctx.config, "bootstrap")
    d["seed"] = ctx.seed if a.seed is not None else d.get("seed", 0)
    for key in ("iterations", "confidence", "n_jobs"):
        if getattr(a, key, None) is not None:
            d[key] = getattr(a, key)
    return BootstrapConfig.from_dict(d)


def cmd_audit(ctx: Context) -> int:
    a = ctx.args
    preds = _load_preds(a.preds, ctx.scale)
    conditions = Condition.parse_list(a.conditions) if a.conditions else None
    cfg = None if a.iterations == 0 else _bootstrap_config(ctx)
    reports = audit(preds, cfg, conditions)
    out = ctx.out(a.out, "audit.json")
    outputs = [out]
    manifest = ctx.record("audit", [a.preds], [], {"pairs": len(preds)})
    meta = {"profile": ctx.profile.name, "pct_decimals": ctx.profile.pct_decimals}
    files = {out: audit_json(reports, manifest, meta)}
    if a.markdown:
        md = ctx.out(a.markdown, "audit.md")
        files[md] = metric_table_markdown(columns_for(reports, ctx.profile.pct_decimals))
        outputs.append(md)
    write_files(files)
    manifest.stages[-1]["outputs"] = [str(p) for p in outputs]
    manifest.write(ctx.out_dir / MANIFEST_NAME)
    print(metric_table_markdown(columns_for(reports, ctx.profile.pct_decimals)), end="")
    return EXIT_OK


def cmd_stratify(ctx: Context) -> int:
    a = ctx.args
    preds = _load_preds(a.preds, ctx.scale)
    reference = None
    if a.labels:
        reference = {r.id: r.label for r in read_records(a.labels)}
    strata = stratify(preds, reference, a.condition, a.min_cell)
    out = ctx.out(a.out, "strata.json")
    files = {out: json.dumps({"condition": Condition(a.condition).value, "min_cell": a.min_cell,
                              "strata": [s.to_dict() for s in strata]}, indent=2, sort_keys=True) + "\n"}
    md = strata_markdown(strata, ctx.profile.pct_decimals)
    if a.markdown:
        files[ctx.out(a.markdown, "strata.md")] = md
    write_files(files)
    ctx.record("stratify", [a.preds, a.labels], list(files), {"pairs": len(preds)})
    print(md, end="")
    return EXIT_OK


def cmd_synth(ctx: Context) -> int:
    a = ctx.args
    d = load_toml(a.synth_config) if a.synth_config else dict(ctx.config)
    d = dict(d.get("synth", d))
    if a.seed is not None:
        d["seed"] = a.seed
    d.setdefault("scale", ctx.profile.audit_scale.to_dict())
    for key in ("n_pairs", "delta", "epsilon"):
        if getattr(a, key) is not None:
            d[key] = getattr(a, key)
    cfg = SynthConfig.from_dict(d)
    result = generate(cfg)
    pairs_path = ctx.out(a.out_pairs, "pairs.jsonl")
    preds_path = ctx.out(a.out_preds, "preds.jsonl")
    truth_path = ctx.out(a.truth, "truth.json")
    for p in (pairs_path, preds_path, truth_path):
        p.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(pairs_path, result.pairs)
    write_jsonl(preds_path, result.predictions.to_rows())
    write_files({truth_path: json.dumps({"config": cfg.to_dict(), "truth": result.truth}, indent=2, sort_keys=True) + "\n"})
    ctx.record("synth", [a.synth_config], [pairs_path, preds_path, truth_path], {"pairs": cfg.n_pairs})
    _print_json(result.truth)
    return EXIT_OK


def cmd_project(ctx: Context) -> int:
    a = ctx.args
    res = project_impact(ImpactInput(a.visits, a.share, a.differential), a.digits)
    _print_json({"annual_visits": a.visits, "share": a.share, "differential": a.differential, **res.to_dict()})
    return EXIT_OK


def cmd_compare(ctx: Context) -> int:
    a = ctx.args
    ra, rb = load_reports(a.a), load_reports(a.b)
    rows = compare_predictors(ra, rb)
    labels = tuple(a.labels.split(",")) if a.labels else ("A", "B")
    if len(labels) != 2:
        raise ConfigError("--labels needs exactly two comma-separated names")
    out = ctx.out(a.out, "comparison.json")
    md = comparison_markdown(rows, labels, ctx.profile.pct_decimals)
    files = {out: json.dumps({"labels": list(labels), "rows": [r.to_dict() for r in rows]},
                             indent=2, sort_keys=True) + "\n"}
    if a.markdown:
        files[ctx.out(a.markdown, "comparison.md")] = md
    write_files(files)
    ctx.record("compare", [a.a, a.b], list(files), {"rows": len(rows)})
    print(md, end="")
    return EXIT_OK


def cmd_report(ctx: Context) -> int:
    a = ctx.args
    columns: list[ReportColumn] = []
    for path in a.audit:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        decimals = int(doc.get("pct_decimals", ctx.profile.pct_decimals))
        prefix = f"{doc['profile']} " if len(a.audit) > 1 and doc.get("profile") else ""
        columns += columns_for(load_reports(path), decimals, prefix)
    strata = None
    if a.strata:
        doc = json.loads(Path(a.strata).read_text(encoding="utf-8"))
        strata = [StratumTable.from_dict(s) for s in doc["strata"]]
    manifest = ctx.record("report", list(a.audit) + ([a.strata] if a.strata else []), [], {"columns": len(columns)})
    notes = []
    pair_stage = next((s for s in reversed(manifest.stages) if s["stage"] == "pairs"), None)
    if pair_stage:
        c = pair_stage["counts"]
        notes.append("Counterfactual quality was graded automatically from gendered-term lexicons and token overlap: "
                     f"{c.get('correct', 0)} correct, {c.get('incomplete', 0)} incomplete, {c.get('failed', 0)} failed.")
    formats = [f.strip() for f in a.format.split(",") if f.strip()]
    written = emit_report(ctx.out_dir, columns, strata, manifest, formats, notes)
    manifest.stages[-1]["outputs"] = [str(p) for p in written]
    manifest.write(ctx.out_dir / MANIFEST_NAME)
    for p in written:
        print(p)
    return EXIT_OK


# Parser -----------------------------------------------------------------------

def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=default(None), help="master seed (default 0)")
    parser.add_argument("--profile", choices=sorted(PROFILES), default=default("bordeaux"),
                        help="dataset preset: label scale, language, exclusions, precision")
    parser.add_argument("--out-dir", default=default("."), help="directory for outputs and the run manifest")
    parser.add_argument("--config", default=default(None), help="TOML configuration file")
    parser.add_argument("-v", "--verbose", action="count", default=default(0))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cf-audit", description="Counterfactual bias audits for ordinal decisions.")
    parser.add_argument("--version", action="version", version=f"cf-audit {__version__}")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, parents=[common], help=help)
        p.set_defaults(func=func)
        return p

    p = add("filter", cmd_filter, "apply the exclusion cascade to raw records")
    p.add_argument("--input", required=True)
    p.add_argument("--kept")
    p.add_argument("--rejected")
    p.add_argument("--split", type=float, help="also write a label-stratified train/test split with this train fraction")
    p.add_argument("--train")
    p.add_argument("--test")

    p = add("pairs", cmd_pairs, "generate counterfactual pairs through a chat-completion service")
    p.add_argument("--input", required=True)
    p.add_argument("--template", choices=("fr", "en"))
    p.add_argument("--exemplars", type=int, help="number of few-shot exemplars (default 10)")
    p.add_argument("--endpoint")
    p.add_argument("--model")
    p.add_argument("--concurrency", type=int)
    p.add_argument("--timeout", type=float)
    p.add_argument("--retries", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--checkpoint")
    p.add_argument("--transcript", help="write request/response bodies to this JSONL file")
    p.add_argument("--log")
    p.add_argument("--out")

    p = add("train-baseline", cmd_train_baseline, "fit the offline bag-of-words baseline predictor")
    p.add_argument("--train", required=True)
    p.add_argument("--model-out")

    p = add("predict", cmd_predict, "score both variants of every pair")
    p.add_argument("--pairs", required=True)
    p.add_argument("--conditions", default="full")
    p.add_argument("--binding", help="predictor binding TOML")
    p.add_argument("--log")
    p.add_argument("--out")

    p = add("audit", cmd_audit, "compute metrics with bootstrap intervals")
    p.add_argument("--preds", required=True)
    p.add_argument("--conditions")
    p.add_argument("--iterations", type=int, help="bootstrap iterations (0 = point estimates only)")
    p.add_argument("--confidence", type=float)
    p.add_argument("--n-jobs", type=int)
    p.add_argument("--markdown", nargs="?", const="audit.md")
    p.add_argument("--out")

    p = add("stratify", cmd_stratify, "per-label 2x2 tables with odds ratios")
    p.add_argument("--preds", required=True)
    p.add_argument("--labels", help="records JSONL supplying each original's reference label")
    p.add_argument("--condition", default="full")
    p.add_argument("--min-cell", type=int, default=MIN_CELL)
    p.add_argument("--markdown", nargs="?", const="strata.md")
    p.add_argument("--out")

    p = add("synth", cmd_synth, "generate a synthetic population with a known injected effect")
    p.add_argument("--synth-config", help="TOML with a [synth] table (defaults to --config)")
    p.add_argument("--n-pairs", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--out-pairs")
    p.add_argument("--out-preds")
    p.add_argument("--truth")

    p = add("project", cmd_project, "project a differential onto annual visit counts")
    p.add_argument("--visits", type=float, required=True)
    p.add_argument("--share", type=float, required=True)
    p.add_argument("--differential", type=float, required=True)
    p.add_argument("--digits", type=int, default=2)

    p = add("compare", cmd_compare, "compare two audits run on the same pairs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--labels", help="two comma-separated column names")
    p.add_argument("--markdown", nargs="?", const="comparison.md")
    p.add_argument("--out")

    p = add("report", cmd_report, "render JSON, markdown and plot-data reports")
    p.add_argument("--audit", action="append", required=True, help="audit JSON (repeatable, one column group each)")
    p.add_argument("--strata")
    p.add_argument("--format", default="json,markdown")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        ctx = Context(args)
        ctx.out_dir.mkdir(parents=True, exist_ok=True)
        return args.func(ctx)
    except ConfigError as exc:
        print(f"cf-audit: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ServiceError as exc:
        print(f"cf-audit: service error: {exc}", file=sys.stderr)
        return EXIT_SERVICE
    except (AuditError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"cf-audit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
