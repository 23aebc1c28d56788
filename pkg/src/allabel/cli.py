"""Command line entry points.

Each subcommand prints exactly one JSON summary line on stdout; progress and
warnings go to stderr. Exit codes: 0 on success, 1 on any data or pipeline
error, 2 on bad usage.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .annotator import (
    Annotator,
    AnnotatorConfig,
    HttpAnnotator,
    ReplayAnnotator,
    ResultsLog,
    SimulatedAnnotator,
    SimulatedModel,
    parse_output,
)
from .corpus import (
    AnnotatedSample,
    load_annotations,
    load_dataset,
    save_annotations,
)
from .errors import AllabelError, AnnotatorError, OutputParseError
from .evaluation import render_per_type_figure, save_report, score
from .harness import (
    ExperimentConfig,
    LoggedAnnotator,
    config_from_file,
    parse_proportion,
    run_benchmark,
)
from .prompting import assemble_prompt, default_template, load_template, retrieve_kshots
from .selection import (
    SelectionConfig,
    allabel_select,
    coldstart_coreset,
    load_selection,
    perplexity_select,
    random_select,
    save_selection,
)
from .similarity import (
    Bm25Backend,
    DenseBackend,
    build_matrix,
    load_matrix,
    load_vectors,
    normalize,
    save_matrix,
    save_matrix_debug,
)
from .synthetic import make_clustered_corpus, write_corpus

__all__ = ["main"]

logger = logging.getLogger("allabel.cli")


class UsageError(Exception):
    """Bad flag combinations detected after argparse has done its part."""


def _add_corpus_args(p: argparse.ArgumentParser, gold_required: bool = False) -> None:
    p.add_argument("--samples", required=True, help="sample texts, JSON lines")
    p.add_argument("--schema", required=True, help="entity schema, JSON")
    p.add_argument(
        "--gold", required=gold_required, default=None, help="gold annotations, JSON lines"
    )


def _add_annotator_args(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--annotator", choices=("sim", "live", "replay"), default="sim",
        help="annotation backend (default: sim)",
    )
    p.add_argument("--alpha0", type=float, default=0.3, help="simulator base accuracy")
    p.add_argument("--beta", type=float, default=0.6, help="simulator similarity gain")
    p.add_argument("--sim-seed", type=int, default=0, help="simulator seed")
    p.add_argument("--endpoint", default="", help="chat-completion URL (live)")
    p.add_argument("--model", default="", help="model name (live)")
    p.add_argument("--replay-log", default="", help="results log to replay")


def _make_annotator(args: argparse.Namespace, dataset) -> Annotator:
    if args.annotator == "sim":
        if not dataset.gold:
            raise UsageError("the simulated annotator needs --gold annotations")
        return SimulatedAnnotator(
            SimulatedModel(alpha0=args.alpha0, beta=args.beta, seed=args.sim_seed),
            dataset.schema,
            dataset.gold,
        )
    if args.annotator == "live":
        if not args.endpoint or not args.model:
            raise UsageError("the live annotator needs --endpoint and --model")
        return HttpAnnotator(AnnotatorConfig(endpoint=args.endpoint, model=args.model))
    if not args.replay_log:
        raise UsageError("the replay annotator needs --replay-log")
    return ReplayAnnotator(args.replay_log)


def _load_square_matrix(path: str, dataset):
    matrix = load_matrix(path)
    if tuple(matrix.row_ids) != dataset.ids:
        raise UsageError(f"matrix {path} does not cover the dataset sample order")
    if not matrix.normalized:
        matrix = normalize(matrix)
    return matrix


def _template(args: argparse.Namespace, schema):
    return load_template(args.template) if args.template else default_template(schema)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(args: argparse.Namespace) -> dict:
    dataset = make_clustered_corpus(n=args.n, clusters=args.clusters, seed=args.seed)
    paths = write_corpus(dataset, args.out_dir)
    return {
        "command": "synth",
        "n": len(dataset),
        "clusters": args.clusters,
        "seed": args.seed,
        **{k: str(v) for k, v in paths.items()},
    }


def cmd_similarity(args: argparse.Namespace) -> dict:
    dataset = load_dataset(args.samples, args.schema)
    if args.backend == "bm25":
        backend = Bm25Backend(dataset, k1=args.k1, b=args.b)
    else:
        if not args.vectors:
            raise UsageError("the dense backend needs --vectors")
        backend = DenseBackend(dataset, load_vectors(args.vectors))
    matrix = build_matrix(dataset, backend, max_workers=args.workers)
    if args.normalize:
        matrix = normalize(matrix)
    save_matrix(matrix, args.out)
    if args.debug_json:
        save_matrix_debug(matrix, args.debug_json)
    return {
        "command": "similarity",
        "backend": args.backend,
        "rows": matrix.n_rows,
        "cols": matrix.n_cols,
        "normalized": matrix.normalized,
        "out": str(args.out),
    }


def cmd_select(args: argparse.Namespace) -> dict:
    strategy = args.strategy
    if strategy in ("allabel", "perplexity") and args.seed is not None:
        raise UsageError(f"{strategy} selection is deterministic and takes no --seed")
    if strategy in ("random", "coreset") and args.seed is None:
        raise UsageError(f"{strategy} selection needs --seed")
    if strategy in ("allabel", "coreset") and not args.matrix:
        raise UsageError(f"{strategy} selection needs --matrix")

    dataset = load_dataset(args.samples, args.schema, args.gold)
    if strategy == "allabel":
        matrix = _load_square_matrix(args.matrix, dataset)
        config = SelectionConfig(
            order=args.order, proportion=parse_proportion(args.proportion),
            k=args.k, x=args.x,
        )
        result = allabel_select(dataset, matrix, args.budget, config)
    elif strategy == "random":
        result = random_select(dataset, args.budget, args.seed)
    elif strategy == "coreset":
        matrix = _load_square_matrix(args.matrix, dataset)
        result = coldstart_coreset(matrix, args.budget, args.seed)
    else:
        annotator = _make_annotator(args, dataset)
        result = perplexity_select(
            dataset, args.budget, annotator, _template(args, dataset.schema)
        )
    save_selection(result, args.out)
    return {
        "command": "select",
        "strategy": strategy,
        "m": result.budget.m,
        "stages": {s.name: len(s.ids) for s in result.stages},
        "selected": list(result.selected_ids),
        "out": str(args.out),
    }


def cmd_annotate(args: argparse.Namespace) -> dict:
    dataset = load_dataset(args.samples, args.schema, args.gold)
    matrix = _load_square_matrix(args.matrix, dataset)
    selection = load_selection(args.selection)
    pool = selection.selected_ids
    template = _template(args, dataset.schema)
    annotator = _make_annotator(args, dataset)
    if args.log:
        annotator = LoggedAnnotator(annotator, ResultsLog(args.log), dataset.schema)

    predictions: dict[str, AnnotatedSample] = {}
    failed: list[dict] = []
    truncated = 0
    for sample in dataset.samples:
        retrieval = retrieve_kshots(
            matrix, sample.id, pool, args.shots, dataset.gold, dataset.schema
        )
        if retrieval.truncated:
            truncated += 1
        prompt = assemble_prompt(template, retrieval.demonstrations, sample.text)
        try:
            completion = annotator.annotate_sample(sample, retrieval.demonstrations, prompt)
            parsed = parse_output(completion.text, dataset.schema)
        except (AnnotatorError, OutputParseError) as exc:
            logger.warning("sample %s failed: %s", sample.id, exc)
            failed.append({"id": sample.id, "error": str(exc)})
            continue
        predictions[sample.id] = AnnotatedSample(sample, dict(parsed.annotations))
    if truncated:
        logger.warning(
            "%d prompts carry fewer than %d demonstrations (pool too small)",
            truncated, args.shots,
        )
    save_annotations(predictions, dataset.schema, args.out)
    summary = {
        "command": "annotate",
        "n": len(dataset),
        "annotated": len(predictions),
        "failed": len(failed),
        "shots": args.shots,
        "out": str(args.out),
    }
    if failed:
        errors_path = Path(str(args.out) + ".errors.jsonl")
        with open(errors_path, "w", encoding="utf-8") as fh:
            for rec in failed:
                fh.write(json.dumps(rec, ensure_ascii=False))
                fh.write("\n")
        summary["errors"] = str(errors_path)
        logger.warning("%d of %d samples failed; see %s", len(failed), len(dataset), errors_path)
    return summary


def cmd_evaluate(args: argparse.Namespace) -> dict:
    dataset = load_dataset(args.samples, args.schema, args.gold)
    predictions = load_annotations(
        args.predictions, dataset.schema, {s.id: s for s in dataset.samples}
    )
    pool = load_selection(args.selection).selected_ids if args.selection else ()
    report = score(dataset, predictions, pool, args.aggregation)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_report(report, out / "report.json")
    with open(out / "per_type.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["entity_type", "tp", "fp", "tn", "fn", "mean_f1", "pooled_f1"])
        for name in dataset.schema.type_names:
            c = report.per_type_counts[name]
            writer.writerow(
                [name, c.tp, c.fp, c.tn, c.fn,
                 repr(report.per_type_mean[name]), repr(report.per_type_pooled_f1[name])]
            )
    render_per_type_figure(report, out / "per_type_f1.png")
    return {
        "command": "evaluate",
        "dataset_f1": report.dataset_f1,
        "pooled_dataset_f1": report.pooled_dataset_f1,
        "aggregation": report.aggregation,
        "n_evaluated": report.n_evaluated,
        "out_dir": str(out),
    }


def cmd_benchmark(args: argparse.Namespace) -> dict:
    config = config_from_file(args.config) if args.config else ExperimentConfig()
    table, paths = run_benchmark(config, args.run_dir)
    completed = sum(1 for r in table.rows if r.completed)
    return {
        "command": "benchmark",
        "run_dir": str(args.run_dir),
        "cells": len(table.rows),
        "completed": completed,
        "reports": {k: str(v) for k, v in paths.items()},
    }


# ---------------------------------------------------------------------------
# Parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="allabel",
        description="Select, annotate, and evaluate in-context-learning pools.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a clustered synthetic corpus")
    p.add_argument("--out-dir", default="corpus", help="output directory")
    p.add_argument("--n", type=int, default=200, help="number of samples")
    p.add_argument("--clusters", type=int, default=5, help="number of lexical clusters")
    p.add_argument("--seed", type=int, default=7, help="corpus generator seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("similarity", help="build and store the similarity matrix")
    _add_corpus_args(p)
    p.add_argument("--backend", choices=("bm25", "dense"), default="bm25")
    p.add_argument("--k1", type=float, default=1.5, help="BM25 k1")
    p.add_argument("--b", type=float, default=0.75, help="BM25 b")
    p.add_argument("--vectors", default="", help="embedding vectors, JSON lines (dense)")
    p.add_argument("--workers", type=int, default=1, help="parallel row builders")
    p.add_argument("--normalize", action="store_true", help="store min-max scaled scores")
    p.add_argument("--out", default="matrix.alsm", help="output matrix file")
    p.add_argument("--debug-json", default="", help="also write a JSON dump here")
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser("select", help="pick an annotation pool")
    _add_corpus_args(p)
    p.add_argument("--matrix", default="", help="similarity matrix file")
    p.add_argument("-m", "--budget", type=int, required=True, help="pool size M")
    p.add_argument(
        "--strategy", choices=("allabel", "random", "coreset", "perplexity"),
        default="allabel",
    )
    p.add_argument("--order", default="D-S-U", help="stage order, e.g. D-S-U")
    p.add_argument("--proportion", default="1:3:1", help="stage budget ratio")
    p.add_argument("--k", type=int, default=3, help="full-credit rank cutoff")
    p.add_argument("--x", type=int, default=None, help="decayed-credit rank cutoff")
    p.add_argument("--seed", type=int, default=None, help="seed for stochastic strategies")
    p.add_argument("--template", default="", help="prompt template file (perplexity)")
    _add_annotator_args(p)
    p.add_argument("--out", default="selection.json", help="output selection file")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("annotate", help="annotate every sample with k-shot prompts")
    _add_corpus_args(p, gold_required=True)
    p.add_argument("--matrix", required=True, help="similarity matrix file")
    p.add_argument("--selection", required=True, help="selection file naming the pool")
    p.add_argument("--shots", type=int, default=3, help="demonstrations per prompt")
    p.add_argument("--template", default="", help="prompt template file")
    _add_annotator_args(p)
    p.add_argument("--out", default="predictions.jsonl", help="output annotations")
    p.add_argument("--log", default="", help="append-only results log for resume")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("evaluate", help="score predictions against gold")
    _add_corpus_args(p, gold_required=True)
    p.add_argument("--predictions", required=True, help="predicted annotations, JSON lines")
    p.add_argument("--selection", default="", help="selection file, recorded in the report")
    p.add_argument("--aggregation", choices=("mean", "pooled"), default="mean")
    p.add_argument("--out-dir", default="eval", help="report directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="run the full strategy sweep")
    p.add_argument("--config", default="", help="experiment config, YAML")
    p.add_argument("--run-dir", default="runs/bench", help="cache and report directory")
    p.set_defaults(func=cmd_benchmark)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        summary = args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (AllabelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary, ensure_ascii=False))
    return 0


if __name__ == "__main__":
    sys.exit(main())
