"""Benchmark orchestration: sweeps, ablations, and report emission.

A sweep walks (strategy, shots, pool size, run) cells. Every cell selects a
pool, annotates the whole corpus with k-shot retrieval from that pool, and
scores the result. All annotation calls flow through an append-only results
log keyed by (annotator, sample, prompt hash), so a killed run resumes
without repeating model calls and prompts shared between neighboring pool
sizes are annotated once. Reports are pure functions of the result table:
emitting twice yields byte-identical files.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import statistics
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import yaml

from .annotator import (
    Annotator,
    AnnotatorConfig,
    Completion,
    HttpAnnotator,
    ReplayAnnotator,
    ResultsLog,
    SimulatedAnnotator,
    SimulatedModel,
    _completion_from_obj,
    parse_output,
    prompt_hash,
)
from .corpus import AnnotatedSample, Dataset, DatasetSchema, EntityRecord, load_dataset
from .errors import AnnotatorError, DataError, OutputParseError
from .evaluation import score, write_curve_csv
from .prompting import PromptTemplate, assemble_prompt, default_template, load_template, retrieve_kshots
from .selection import (
    SelectionConfig,
    SelectionResult,
    allabel_select,
    coldstart_coreset,
    perplexity_select,
    random_select,
    split_budget,
)
from .similarity import Bm25Backend, DenseBackend, SimilarityMatrix, build_matrix, load_vectors, normalize
from .synthetic import make_clustered_corpus

__all__ = [
    "ExperimentConfig",
    "config_from_file",
    "parse_proportion",
    "config_to_obj",
    "ResultRow",
    "AggregateRow",
    "ResultTable",
    "LoggedAnnotator",
    "run_sweep",
    "run_ablation",
    "emit_report",
    "run_benchmark",
]

logger = logging.getLogger("allabel.harness")

DETERMINISTIC_STRATEGIES = frozenset({"allabel", "perplexity"})
STOCHASTIC_STRATEGIES = frozenset({"random", "coreset_cold"})
ALL_STRATEGIES = DETERMINISTIC_STRATEGIES | STOCHASTIC_STRATEGIES


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a benchmark run needs, with desk-scale defaults.

    With no corpus files configured, the bundled clustered synthetic corpus
    is generated on the fly and the simulated annotator drives it.
    """

    samples_path: str = ""
    schema_path: str = ""
    gold_path: str = ""
    synthetic_n: int = 200
    synthetic_clusters: int = 5
    synthetic_seed: int = 7

    backend: str = "bm25"
    k1: float = 1.5
    b: float = 0.75
    vectors_path: str = ""

    strategies: tuple[str, ...] = ("allabel", "random")
    pool_start: int = 10
    pool_stop: int = 60
    pool_step: int = 5
    pool_sizes: tuple[int, ...] = ()
    shots: tuple[int, ...] = (3,)
    runs: int = 5
    seeds: tuple[int, ...] = ()

    order: str = "D-S-U"
    proportion: tuple[int, int, int] = (1, 3, 1)

    annotator_kind: str = "sim"
    sim_alpha0: float = 0.3
    sim_beta: float = 0.6
    sim_seed: int = 0
    endpoint: str = ""
    model: str = ""
    replay_log: str = ""

    template_path: str = ""
    aggregation: str = "mean"

    ablation_orders: tuple[str, ...] = ()
    ablation_proportions: tuple[tuple[int, int, int], ...] = ()

    def effective_pool_sizes(self) -> tuple[int, ...]:
        if self.pool_sizes:
            return self.pool_sizes
        return tuple(range(self.pool_start, self.pool_stop + 1, self.pool_step))

    def effective_seeds(self) -> tuple[int, ...]:
        if self.seeds:
            if len(self.seeds) < self.runs:
                raise DataError(f"{self.runs} runs need {self.runs} seeds, got {len(self.seeds)}")
            return self.seeds
        return tuple(range(1, self.runs + 1))


def parse_proportion(value: object) -> tuple[int, int, int]:
    if isinstance(value, str):
        parts = [p for p in value.replace(",", ":").split(":") if p]
    elif isinstance(value, (list, tuple)):
        parts = list(value)
    else:
        # unquoted 1:3:1 reaches us as a base-60 YAML integer
        hint = " (quote it, e.g. '1:3:1')" if isinstance(value, int) else ""
        raise DataError(f"cannot read proportion from {value!r}{hint}")
    if len(parts) != 3:
        raise DataError(f"proportion needs three parts, got {value!r}")
    return (int(parts[0]), int(parts[1]), int(parts[2]))


def config_from_obj(obj: Mapping) -> ExperimentConfig:
    """Build a config from nested mapping data (parsed YAML or JSON)."""
    cfg = ExperimentConfig()
    kw: dict = {}
    corpus = obj.get("corpus", {})
    if corpus:
        kw["samples_path"] = str(corpus.get("samples", ""))
        kw["schema_path"] = str(corpus.get("schema", ""))
        kw["gold_path"] = str(corpus.get("gold", ""))
        synth = corpus.get("synthetic", {})
        if synth:
            kw["synthetic_n"] = int(synth.get("n", cfg.synthetic_n))
            kw["synthetic_clusters"] = int(synth.get("clusters", cfg.synthetic_clusters))
            kw["synthetic_seed"] = int(synth.get("seed", cfg.synthetic_seed))
    sim_cfg = obj.get("similarity", {})
    if sim_cfg:
        kw["backend"] = str(sim_cfg.get("backend", cfg.backend))
        kw["k1"] = float(sim_cfg.get("k1", cfg.k1))
        kw["b"] = float(sim_cfg.get("b", cfg.b))
        kw["vectors_path"] = str(sim_cfg.get("vectors", ""))
    if "strategies" in obj:
        kw["strategies"] = tuple(str(s) for s in obj["strategies"])
    pools = obj.get("pools")
    if isinstance(pools, Mapping):
        kw["pool_start"] = int(pools.get("start", cfg.pool_start))
        kw["pool_stop"] = int(pools.get("stop", cfg.pool_stop))
        kw["pool_step"] = int(pools.get("step", cfg.pool_step))
    elif isinstance(pools, (list, tuple)):
        kw["pool_sizes"] = tuple(int(p) for p in pools)
    if "shots" in obj:
        raw = obj["shots"]
        kw["shots"] = tuple(int(s) for s in (raw if isinstance(raw, (list, tuple)) else [raw]))
    if "runs" in obj:
        kw["runs"] = int(obj["runs"])
    if "seeds" in obj:
        kw["seeds"] = tuple(int(s) for s in obj["seeds"])
    selection = obj.get("selection", {})
    if selection:
        kw["order"] = str(selection.get("order", cfg.order))
        if "proportion" in selection:
            kw["proportion"] = parse_proportion(selection["proportion"])
    ann = obj.get("annotator", {})
    if ann:
        kw["annotator_kind"] = str(ann.get("kind", cfg.annotator_kind))
        kw["sim_alpha0"] = float(ann.get("alpha0", cfg.sim_alpha0))
        kw["sim_beta"] = float(ann.get("beta", cfg.sim_beta))
        kw["sim_seed"] = int(ann.get("seed", cfg.sim_seed))
        kw["endpoint"] = str(ann.get("endpoint", ""))
        kw["model"] = str(ann.get("model", ""))
        kw["replay_log"] = str(ann.get("replay_log", ""))
    if "template" in obj:
        kw["template_path"] = str(obj["template"])
    if "aggregation" in obj:
        kw["aggregation"] = str(obj["aggregation"])
    ablation = obj.get("ablation", {})
    if ablation:
        kw["ablation_orders"] = tuple(str(o) for o in ablation.get("orders", ()))
        kw["ablation_proportions"] = tuple(
            parse_proportion(p) for p in ablation.get("proportions", ())
        )
    return replace(cfg, **kw)


def config_from_file(path: str | Path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        obj = yaml.safe_load(fh)
    if obj is None:
        obj = {}
    if not isinstance(obj, Mapping):
        raise DataError(f"{path}: config must be a mapping")
    return config_from_obj(obj)


def config_to_obj(config: ExperimentConfig) -> dict:
    obj = dataclasses.asdict(config)
    # tuples become lists through asdict via json round trip later; keep as is
    return obj


@dataclass(frozen=True)
class ResultRow:
    strategy: str
    order: str | None
    proportion: str | None
    pool_size: int
    shots: int
    run: int
    seed: int | None
    f1: float | None
    m_div: int | None
    m_sim: int | None
    m_unc: int | None
    completed: bool


@dataclass(frozen=True)
class AggregateRow:
    strategy: str
    order: str | None
    proportion: str | None
    pool_size: int
    shots: int
    runs: int
    mean_f1: float | None
    stddev: float | None
    m_div: int | None
    m_sim: int | None
    m_unc: int | None


@dataclass(frozen=True)
class ResultTable:
    rows: tuple[ResultRow, ...]
    n_total: int

    def aggregates(self) -> list[AggregateRow]:
        groups: dict[tuple, list[ResultRow]] = {}
        for row in self.rows:
            key = (row.strategy, row.order, row.proportion, row.pool_size, row.shots)
            groups.setdefault(key, []).append(row)
        out: list[AggregateRow] = []
        for key in sorted(groups, key=lambda k: (k[0], k[1] or "", k[2] or "", k[3], k[4])):
            rows = groups[key]
            values = [r.f1 for r in rows if r.completed and r.f1 is not None]
            mean = sum(values) / len(values) if values else None
            stddev = None
            if key[0] in STOCHASTIC_STRATEGIES and len(values) >= 2:
                stddev = statistics.stdev(values)
            out.append(
                AggregateRow(
                    strategy=key[0], order=key[1], proportion=key[2],
                    pool_size=key[3], shots=key[4], runs=len(values),
                    mean_f1=mean, stddev=stddev,
                    m_div=rows[0].m_div, m_sim=rows[0].m_sim, m_unc=rows[0].m_unc,
                )
            )
        return out

    def curve(self, strategy: str, shots: int) -> list[tuple[int, float]]:
        """Mean F1 per pool size for one strategy at one shot count."""
        return [
            (agg.pool_size, agg.mean_f1)
            for agg in self.aggregates()
            if agg.strategy == strategy and agg.shots == shots and agg.mean_f1 is not None
        ]


class LoggedAnnotator:
    """Annotator wrapper that caches through a results log.

    A hit on (annotator, sample, prompt hash) returns the recorded
    completion without touching the backend; misses call through, record the
    completion and its parsed annotations, then return it. Failed calls are
    recorded with an error field but never served from cache, so a resumed
    run retries them.
    """

    def __init__(self, inner: Annotator, log: ResultsLog, schema: DatasetSchema) -> None:
        self.inner = inner
        self.log = log
        self.schema = schema
        self.annotator_id = inner.annotator_id
        self.supports_logprobs = inner.supports_logprobs
        self.calls = 0
        self.cache_hits = 0

    def annotate_sample(self, query, demonstrations, prompt: str) -> Completion:
        self.calls += 1
        ph = prompt_hash(prompt)
        rec = self.log.get(self.annotator_id, query.id, ph)
        if rec is not None and rec.get("completion") is not None and not rec.get("error"):
            self.cache_hits += 1
            return _completion_from_obj(rec["completion"])
        try:
            completion = self.inner.annotate_sample(query, demonstrations, prompt)
        except AnnotatorError as exc:
            self.log.append(query.id, self.annotator_id, ph, None, None, error=str(exc))
            raise
        parsed: dict | None
        try:
            parsed = _annotations_to_obj(
                parse_output(completion.text, self.schema).annotations, self.schema
            )
            error = None
        except OutputParseError as exc:
            parsed = None
            error = str(exc)
        self.log.append(query.id, self.annotator_id, ph, completion, parsed, error=error)
        return completion


def _annotations_to_obj(
    annotations: Mapping[str, tuple[EntityRecord, ...]], schema: DatasetSchema
) -> dict:
    return {
        t: [r.as_dict() for r in annotations.get(t, ())] for t in schema.type_names
    }


def annotate_with_pool(
    dataset: Dataset,
    matrix: SimilarityMatrix,
    pool_ids: Sequence[str],
    shots: int,
    template: PromptTemplate,
    annotator: Annotator,
) -> tuple[dict[str, AnnotatedSample], int]:
    """Annotate every sample with k-shot retrieval from one pool.

    Returns the predictions and the number of samples that failed (backend
    error or unparseable output). Failed samples are absent from the
    predictions map.
    """
    predictions: dict[str, AnnotatedSample] = {}
    failures = 0
    for sample in dataset.samples:
        retrieval = retrieve_kshots(
            matrix, sample.id, pool_ids, shots, dataset.gold, dataset.schema
        )
        prompt = assemble_prompt(template, retrieval.demonstrations, sample.text)
        try:
            completion = annotator.annotate_sample(sample, retrieval.demonstrations, prompt)
            parsed = parse_output(completion.text, dataset.schema)
        except (AnnotatorError, OutputParseError) as exc:
            logger.warning("sample %s failed: %s", sample.id, exc)
            failures += 1
            continue
        predictions[sample.id] = AnnotatedSample(sample, dict(parsed.annotations))
    return predictions, failures


def _select_pool(
    strategy: str,
    dataset: Dataset,
    matrix: SimilarityMatrix,
    m: int,
    shots: int,
    seed: int | None,
    config: ExperimentConfig,
    annotator: Annotator,
    template: PromptTemplate,
    memo: dict,
) -> SelectionResult:
    if strategy == "allabel":
        key = ("allabel", m, shots, config.order, config.proportion)
        if key not in memo:
            memo[key] = allabel_select(
                dataset, matrix, m,
                SelectionConfig(order=config.order, proportion=config.proportion, k=shots),
            )
        return memo[key]
    if strategy == "random":
        assert seed is not None
        return random_select(dataset, m, seed)
    if strategy == "coreset_cold":
        assert seed is not None
        return coldstart_coreset(matrix, m, seed)
    if strategy == "perplexity":
        key = ("perplexity", m)
        if key not in memo:
            memo[key] = perplexity_select(dataset, m, annotator, template)
        return memo[key]
    raise DataError(f"unknown strategy {strategy!r}")


def run_sweep(
    dataset: Dataset,
    matrix: SimilarityMatrix,
    config: ExperimentConfig,
    annotator: Annotator,
    template: PromptTemplate,
    run_dir: str | Path,
) -> ResultTable:
    """Walk every (strategy, shots, pool size, run) cell and score it."""
    for strategy in config.strategies:
        if strategy not in ALL_STRATEGIES:
            raise DataError(f"unknown strategy {strategy!r}")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    log = ResultsLog(run_dir / "log.jsonl")
    logged = LoggedAnnotator(annotator, log, dataset.schema)
    seeds = config.effective_seeds()
    pool_sizes = config.effective_pool_sizes()
    proportion_str = ":".join(str(p) for p in config.proportion)
    rows: list[ResultRow] = []
    memo: dict = {}
    for strategy in config.strategies:
        stochastic = strategy in STOCHASTIC_STRATEGIES
        for shots in config.shots:
            for m in pool_sizes:
                for run_idx in range(1, config.runs + 1):
                    seed = seeds[run_idx - 1] if stochastic else None
                    selection = _select_pool(
                        strategy, dataset, matrix, m, shots, seed, config,
                        logged, template, memo,
                    )
                    pool = selection.selected_ids
                    predictions, failures = annotate_with_pool(
                        dataset, matrix, pool, shots, template, logged
                    )
                    sizes = selection.budget.stage_sizes
                    if failures == 0:
                        report = score(dataset, predictions, pool, config.aggregation)
                        value: float | None = report.dataset_f1
                        completed = True
                    else:
                        logger.warning(
                            "cell (%s, pool=%d, shots=%d, run=%d) incomplete: %d failures",
                            strategy, m, shots, run_idx, failures,
                        )
                        value = None
                        completed = False
                    rows.append(
                        ResultRow(
                            strategy=strategy,
                            order=config.order if strategy == "allabel" else None,
                            proportion=proportion_str if strategy == "allabel" else None,
                            pool_size=m,
                            shots=shots,
                            run=run_idx,
                            seed=seed,
                            f1=value,
                            m_div=None if sizes is None else sizes["diversity"],
                            m_sim=None if sizes is None else sizes["similarity"],
                            m_unc=None if sizes is None else sizes["uncertainty"],
                            completed=completed,
                        )
                    )
    logger.info(
        "sweep finished: %d cells, %d annotator calls, %d cache hits",
        len(rows), logged.calls, logged.cache_hits,
    )
    return ResultTable(rows=tuple(rows), n_total=len(dataset))


def run_ablation(
    dataset: Dataset,
    matrix: SimilarityMatrix,
    config: ExperimentConfig,
    annotator: Annotator,
    template: PromptTemplate,
    run_dir: str | Path,
) -> ResultTable:
    """Cross stage orders with budget proportions for the staged pipeline."""
    orders = config.ablation_orders or (config.order,)
    proportions = config.ablation_proportions or (config.proportion,)
    rows: list[ResultRow] = []
    for order in orders:
        for proportion in proportions:
            sub = replace(
                config, order=order, proportion=proportion, strategies=("allabel",),
                ablation_orders=(), ablation_proportions=(),
            )
            table = run_sweep(dataset, matrix, sub, annotator, template, run_dir)
            rows.extend(table.rows)
    return ResultTable(rows=tuple(rows), n_total=len(dataset))


def _fmt(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_report(table: ResultTable, out_dir: str | Path) -> dict[str, Path]:
    """Write the aggregate table, per-run rows, curve CSV, JSON, and figures.

    Everything is a pure function of the table, so re-emitting produces
    byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    aggregates = table.aggregates()
    paths["table_csv"] = out / "table.csv"
    with open(paths["table_csv"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["strategy", "order", "proportion", "pool_size", "shots", "runs",
             "mean_f1", "stddev", "m_div", "m_sim", "m_unc"]
        )
        for a in aggregates:
            writer.writerow(
                [a.strategy, _fmt(a.order), _fmt(a.proportion), a.pool_size, a.shots,
                 a.runs, _fmt(a.mean_f1), _fmt(a.stddev), _fmt(a.m_div), _fmt(a.m_sim),
                 _fmt(a.m_unc)]
            )

    paths["long_csv"] = out / "long.csv"
    with open(paths["long_csv"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["strategy", "order", "proportion", "pool_size", "shots", "run", "seed",
             "f1", "m_div", "m_sim", "m_unc", "completed"]
        )
        for r in table.rows:
            writer.writerow(
                [r.strategy, _fmt(r.order), _fmt(r.proportion), r.pool_size, r.shots,
                 r.run, _fmt(r.seed), _fmt(r.f1), _fmt(r.m_div), _fmt(r.m_sim),
                 _fmt(r.m_unc), str(r.completed).lower()]
            )

    paths["curve_csv"] = out / "curve.csv"
    write_curve_csv(
        [(r.pool_size, r.strategy, r.run, r.f1) for r in table.rows if r.f1 is not None],
        paths["curve_csv"],
    )

    paths["table_json"] = out / "table.json"
    obj = {
        "n_total": table.n_total,
        "rows": [dataclasses.asdict(r) for r in table.rows],
        "aggregates": [dataclasses.asdict(a) for a in aggregates],
    }
    with open(paths["table_json"], "w", encoding="utf-8") as fh:
        json.dump(obj, fh, ensure_ascii=False, indent=2)
        fh.write("\n")

    for shots in sorted({r.shots for r in table.rows}):
        fig_path = out / f"f1_vs_pool_k{shots}.png"
        _render_curve_figure(table, shots, fig_path)
        paths[f"figure_k{shots}"] = fig_path
    return paths


_PALETTE = ("#4878a8", "#b04030", "#548c54", "#8060a0", "#b08030", "#508090")


def _render_curve_figure(table: ResultTable, shots: int, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    aggregates = [a for a in table.aggregates() if a.shots == shots and a.mean_f1 is not None]
    series: dict[str, list[AggregateRow]] = {}
    for a in aggregates:
        label = a.strategy if a.order is None else f"{a.strategy} {a.order} {a.proportion}"
        series.setdefault(label, []).append(a)

    fig, ax = plt.subplots(figsize=(5.4, 3.6), dpi=120)
    for i, label in enumerate(sorted(series)):
        rows = sorted(series[label], key=lambda a: a.pool_size)
        x = [a.pool_size for a in rows]
        y = [a.mean_f1 for a in rows]
        color = _PALETTE[i % len(_PALETTE)]
        ax.plot(x, y, marker="o", markersize=3.5, linewidth=1.4, color=color, label=label)
        if any(a.stddev is not None for a in rows):
            lo = [a.mean_f1 - (a.stddev or 0.0) for a in rows]
            hi = [a.mean_f1 + (a.stddev or 0.0) for a in rows]
            ax.fill_between(x, lo, hi, color=color, alpha=0.15, linewidth=0)
    ax.set_xlabel("pool size")
    ax.set_ylabel("F1")
    ax.set_title(f"k = {shots}")
    ax.grid(True, linewidth=0.4, alpha=0.5)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": "allabel"})
    plt.close(fig)


def build_environment(
    config: ExperimentConfig,
) -> tuple[Dataset, SimilarityMatrix, Annotator, PromptTemplate]:
    """Materialize the corpus, normalized matrix, annotator, and template."""
    if config.samples_path:
        if not config.schema_path:
            raise DataError("a corpus from files needs a schema path")
        dataset = load_dataset(
            config.samples_path, config.schema_path, config.gold_path or None
        )
    else:
        dataset = make_clustered_corpus(
            n=config.synthetic_n,
            clusters=config.synthetic_clusters,
            seed=config.synthetic_seed,
        )
    if config.backend == "bm25":
        backend = Bm25Backend(dataset, k1=config.k1, b=config.b)
    elif config.backend == "dense":
        if not config.vectors_path:
            raise DataError("the dense backend needs a vectors file")
        backend = DenseBackend(dataset, load_vectors(config.vectors_path))
    else:
        raise DataError(f"unknown similarity backend {config.backend!r}")
    matrix = normalize(build_matrix(dataset, backend))

    if config.annotator_kind == "sim":
        annotator: Annotator = SimulatedAnnotator(
            SimulatedModel(alpha0=config.sim_alpha0, beta=config.sim_beta, seed=config.sim_seed),
            dataset.schema,
            dataset.gold,
        )
    elif config.annotator_kind == "live":
        if not config.endpoint or not config.model:
            raise DataError("the live annotator needs an endpoint and a model")
        annotator = HttpAnnotator(AnnotatorConfig(endpoint=config.endpoint, model=config.model))
    elif config.annotator_kind == "replay":
        if not config.replay_log:
            raise DataError("the replay annotator needs a results log path")
        annotator = ReplayAnnotator(config.replay_log)
    else:
        raise DataError(f"unknown annotator kind {config.annotator_kind!r}")

    template = (
        load_template(config.template_path)
        if config.template_path
        else default_template(dataset.schema)
    )
    return dataset, matrix, annotator, template


def run_benchmark(config: ExperimentConfig, run_dir: str | Path) -> tuple[ResultTable, dict[str, Path]]:
    """Full benchmark: build the environment, sweep, and emit reports.

    The config snapshot is stored in the run directory; resuming with a
    different config is refused rather than silently mixing results.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    snapshot = json.dumps(config_to_obj(config), ensure_ascii=False, indent=2, sort_keys=True) + "\n"
    snap_path = run_dir / "config.json"
    if snap_path.exists():
        if snap_path.read_text(encoding="utf-8") != snapshot:
            raise DataError(f"{snap_path} was written by a different config; refusing to resume")
    else:
        snap_path.write_text(snapshot, encoding="utf-8")

    dataset, matrix, annotator, template = build_environment(config)
    if config.ablation_orders or config.ablation_proportions:
        table = run_ablation(dataset, matrix, config, annotator, template, run_dir)
    else:
        table = run_sweep(dataset, matrix, config, annotator, template, run_dir)
    paths = emit_report(table, run_dir)
    return table, paths
