"""Command-line entry point: ``bitriple {stats,train,evaluate,predict,ablate}``.

Configuration comes from a flat ``key = value`` file (``--config``); every
config key is also a flag (``--base-lr 1e-3``) and flags win. Each command
writes an aligned text report, a JSON report and a figure into ``out_dir``.
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
from dataclasses import fields
from pathlib import Path

from . import plotting
from .config import RunConfig, coerce, parse_config_text
from .corpus import (
    CorpusValidationError,
    RelationSchema,
    corpus_statistics,
    format_statistics,
    load_corpus,
)
from .evaluation import MatchMode, evaluate_model, format_report
from .pipeline import run_extraction
from .training import CheckpointError, TrainingAborted, learning_rates_for, load_checkpoint, save_checkpoint, train

logger = logging.getLogger("bitriple")

VARIANTS = {
    "full": {},
    "s2o_only": {"mode": "s2o_only"},
    "o2s_only": {"mode": "o2s_only"},
    "one_lr": {"one_lr": True},
    "uif": {"mapping": "uniform"},
    "tru": {"mapping": "truncated"},
    "bio": {"scheme": "bio"},
    "two_step": {"mode": "two_step"},
    "linear_head": {"relation_head": "linear"},
}
# keys that may differ between a checkpoint and the command evaluating it
INFERENCE_KEYS = ("train_path", "dev_path", "test_path", "schema_path", "annotation", "max_len",
                  "mode", "threshold", "match", "max_entities", "out_dir")


class SchemaMismatch(RuntimeError):
    pass


def _write_reports(out_dir: Path, name: str, text: str, data) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{name}.txt").write_text(text + "\n", encoding="utf-8")
    (out_dir / f"{name}.json").write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


def _schema(config: RunConfig) -> RelationSchema | None:
    return RelationSchema.load(config.schema_path) if config.schema_path else None


def _load(path, config, schema=None):
    return load_corpus(path, schema, config.annotation, config.max_len)


# commands


def cmd_stats(config: RunConfig, paths=()) -> dict:
    splits = {}
    named = [("train", config.train_path), ("dev", config.dev_path), ("test", config.test_path)]
    named += [(Path(p).stem, p) for p in paths]
    schema = _schema(config)
    for name, path in named:
        if path:
            splits[name], _ = _load(path, config, schema)
    if not splits:
        raise ValueError("no corpus given: set train_path/dev_path/test_path or pass files")
    table = corpus_statistics(splits)
    text = format_statistics(table)
    out = Path(config.out_dir)
    _write_reports(out, "stats", text, {"config": config.to_dict(), "statistics": table})
    plotting.plot_statistics(table, out / "stats.png")
    print(text)
    return table


def _mean_std(values):
    return (statistics.fmean(values), statistics.stdev(values) if len(values) > 1 else 0.0)


def _train_runs(config: RunConfig, out: Path) -> dict:
    train_set, schema = _load(config.train_path, config, _schema(config))
    dev_set = _load(config.dev_path, config, schema)[0] if config.dev_path else train_set
    rows, logs = [], {}
    for run in range(config.runs):
        cfg = config.replace(seed=config.seed + run)
        run_dir = out / f"run{run}"
        try:
            result = train(train_set, cfg, schema, dev_set, out_dir=run_dir)
        except TrainingAborted as exc:
            raise TrainingAborted(f"run {run}: {exc}") from exc
        report = evaluate_model(result.model, dev_set, cfg.mode, cfg.threshold, cfg.match, cfg.max_entities)
        run_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(run_dir / "model.pt", result.model, schema, cfg,
                        {"run": run, "best_epoch": result.best_epoch, "dev": report.to_dict()})
        (run_dir / "train_log.json").write_text(json.dumps(result.log, indent=2) + "\n")
        logs[f"run{run}"] = result.log
        rows.append({"run": run, "seed": cfg.seed, "best_epoch": result.best_epoch,
                     "precision": report.precision, "recall": report.recall, "f1": report.f1})
    summary = {}
    for key in ("precision", "recall", "f1"):
        summary[key], summary[f"{key}_std"] = _mean_std([r[key] for r in rows])
    best = max(rows, key=lambda r: r["f1"])["run"]
    return {"rows": rows, "summary": summary, "best_run": best, "logs": logs, "schema": schema}


def cmd_train(config: RunConfig) -> dict:
    out = Path(config.out_dir)
    res = _train_runs(config, out)
    best_ckpt = out / f"run{res['best_run']}" / "model.pt"
    (out / "model.pt").write_bytes(best_ckpt.read_bytes())
    lines = [f"{'run':<6}{'seed':>6}{'epoch':>7}{'Prec.':>8}{'Rec.':>8}{'F1':>8}"]
    for r in res["rows"]:
        lines.append(f"{r['run']:<6}{r['seed']:>6}{r['best_epoch']:>7}"
                     f"{100 * r['precision']:>8.1f}{100 * r['recall']:>8.1f}{100 * r['f1']:>8.1f}")
    s = res["summary"]
    lines.append(f"{'mean':<19}{100 * s['precision']:>8.1f}{100 * s['recall']:>8.1f}{100 * s['f1']:>8.1f}")
    lines.append(f"{'std':<19}{100 * s['precision_std']:>8.1f}{100 * s['recall_std']:>8.1f}{100 * s['f1_std']:>8.1f}")
    text = "\n".join(lines)
    data = {"config": config.to_dict(), "runs": res["rows"], "average": s, "best_run": res["best_run"]}
    _write_reports(out, "train_report", text, data)
    (out / "train_log.json").write_text(json.dumps(res["logs"], indent=2) + "\n")
    plotting.plot_training(res["logs"], out / "training.png")
    print(text)
    return data


def _checkpoint_config(checkpoint, overrides: dict):
    model, schema, ckpt_config, extra = load_checkpoint(checkpoint)
    allowed = {k: v for k, v in overrides.items() if k in INFERENCE_KEYS}
    ignored = sorted(set(overrides) - set(allowed))
    if ignored:
        logger.info("ignoring model settings %s; the checkpoint defines them", ignored)
    config = RunConfig.from_dict({**ckpt_config.to_dict(), **allowed})
    return model, schema, config


def _guarded_load(path, config, ckpt_schema):
    if config.schema_path:
        given = RelationSchema.load(config.schema_path)
        if given != ckpt_schema:
            raise SchemaMismatch(
                f"relation schema mismatch: checkpoint {ckpt_schema.fingerprint()} vs config {given.fingerprint()}")
    try:
        return _load(path, config, ckpt_schema)[0]
    except CorpusValidationError as exc:
        if "schema" not in str(exc):
            raise
        _, found = _load(path, config)
        raise SchemaMismatch(
            f"relation schema mismatch: checkpoint {ckpt_schema.fingerprint()} vs data {found.fingerprint()} ({exc})"
        ) from None


def cmd_evaluate(config_overrides: dict, checkpoint) -> dict:
    model, schema, config = _checkpoint_config(checkpoint, config_overrides)
    path = config.test_path or config.dev_path or config.train_path
    corpus = _guarded_load(path, config, schema)
    reports = {m.value: evaluate_model(model, corpus, config.mode, config.threshold, m, config.max_entities)
               for m in MatchMode}
    primary = config.match
    text = "\n\n".join(format_report(reports[m], f"[{m} match] {path}")
                       for m in (primary,) + tuple(x for x in reports if x != primary))
    data = {"config": config.to_dict(), "checkpoint": str(checkpoint), "data": str(path),
            "reports": {m: r.to_dict() for m, r in reports.items()}}
    out = Path(config.out_dir)
    _write_reports(out, "evaluation", text, data)
    subsets = {m: {"ALL": r.to_dict(), **{k: v.to_dict() for k, v in r.subsets.items()}} for m, r in reports.items()}
    plotting.plot_subsets(subsets, out / "evaluation.png")
    print(text)
    return data


def cmd_predict(config_overrides: dict, checkpoint, input_path, output_path) -> int:
    model, schema, config = _checkpoint_config(checkpoint, config_overrides)
    corpus = _guarded_load(input_path, config, schema)
    with open(output_path, "w", encoding="utf-8") as f:
        for s in corpus:
            ex = run_extraction(s, model, config.mode, config.threshold, config.max_entities)
            rec = {
                "text": s.text,
                "pred_triple_list": [[t.subject.surface, schema.names[t.relation], t.object.surface]
                                     for t in ex.triples],
                "provenance": [sorted(ex.provenance[t]) for t in ex.triples],
            }
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")
    return len(corpus)


def cmd_ablate(config: RunConfig, variants=None) -> list[dict]:
    variants = list(variants or VARIANTS)
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ValueError(f"unknown variants {unknown}; choose from {list(VARIANTS)}")
    out = Path(config.out_dir)
    eval_path = config.test_path or config.dev_path or config.train_path
    rows = []
    for name in variants:
        try:
            cfg = config.replace(out_dir=str(out / name), **VARIANTS[name])
            res = _train_runs(cfg, out / name)
            test_set = _load(eval_path, cfg, res["schema"])[0]
            scores = []
            for run in range(cfg.runs):
                model = load_checkpoint(out / name / f"run{run}" / "model.pt")[0]
                scores.append(evaluate_model(model, test_set, cfg.mode, cfg.threshold, cfg.match,
                                             cfg.max_entities, diagnostics=False))
            row = {"variant": name, "overrides": VARIANTS[name], "lr_epoch1": learning_rates_for(cfg, 1)}
            for key in ("precision", "recall", "f1"):
                row[key], row[f"{key}_std"] = _mean_std([getattr(r, key) for r in scores])
        except Exception as exc:  # a failed variant must not stop the sweep
            logger.exception("variant %s failed", name)
            row = {"variant": name, "overrides": VARIANTS[name], "error": f"{type(exc).__name__}: {exc}"}
        rows.append(row)
    lines = [f"{'variant':<13}{'Prec.':>8}{'Rec.':>8}{'F1':>8}{'F1 std':>8}  encoder lr"]
    for r in rows:
        if "error" in r:
            lines.append(f"{r['variant']:<13}  FAILED  {r['error']}")
        else:
            lines.append(f"{r['variant']:<13}{100 * r['precision']:>8.1f}{100 * r['recall']:>8.1f}"
                         f"{100 * r['f1']:>8.1f}{100 * r['f1_std']:>8.1f}  {r['lr_epoch1']['encoder']:.3g}")
    text = "\n".join(lines)
    _write_reports(out, "ablation", text, {"config": config.to_dict(), "data": eval_path, "variants": rows})
    plotting.plot_ablation(rows, out / "ablation.png")
    print(text)
    return rows


# argument handling


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    group = p.add_argument_group("config overrides")
    for f in fields(RunConfig):
        group.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar=f.name.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bitriple", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("stats", help="overlap-class and triple-count statistics")
    p.add_argument("paths", nargs="*", help="extra corpus files")
    _add_config_flags(p)
    p = sub.add_parser("train", help="train `runs` seeded models and report dev metrics")
    _add_config_flags(p)
    for name in ("evaluate", "predict"):
        p = sub.add_parser(name, help=f"{name} with a trained checkpoint")
        p.add_argument("--checkpoint", required=True)
        if name == "predict":
            p.add_argument("--input", required=True)
            p.add_argument("--output", required=True)
        _add_config_flags(p)
    p = sub.add_parser("ablate", help="train and compare model variants")
    p.add_argument("--variants", default=",".join(VARIANTS), help="comma-separated subset of " + ",".join(VARIANTS))
    _add_config_flags(p)
    return parser


def gather_overrides(args) -> dict:
    data = parse_config_text(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            data[f.name] = value
    return {k: coerce(k, v) for k, v in data.items()}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = gather_overrides(args)
        if args.command in ("evaluate", "predict"):
            if args.command == "evaluate":
                cmd_evaluate(overrides, args.checkpoint)
            else:
                cmd_predict(overrides, args.checkpoint, args.input, args.output)
            return 0
        config = RunConfig.from_dict(overrides)
        if args.command == "stats":
            cmd_stats(config, args.paths)
        elif args.command == "train":
            cmd_train(config)
        elif args.command == "ablate":
            rows = cmd_ablate(config, [v for v in args.variants.split(",") if v])
            return 1 if any("error" in r for r in rows) else 0
    except (SchemaMismatch, CheckpointError) as exc:
        print(f"refusing: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, TrainingAborted, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
