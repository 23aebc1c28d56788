"""Active selection of annotation pools for in-context-learning extraction.

The package picks which samples of an unlabeled corpus deserve human
annotation, assembles few-shot prompts from the annotated pool, and scores
the resulting extractions. The staged selection pipeline is deterministic;
baselines (random, cold-start core set, zero-shot perplexity) and a
simulated annotator make the whole loop runnable offline.
"""
from __future__ import annotations

from .annotator import (
    AnnotatorConfig,
    Completion,
    HttpAnnotator,
    ParsedOutput,
    ReplayAnnotator,
    ResultsLog,
    SimulatedAnnotator,
    SimulatedModel,
    annotate,
    parse_output,
    perplexity,
    prompt_hash,
    simulated_annotate,
)
from .corpus import (
    AnnotatedSample,
    Dataset,
    DatasetSchema,
    EntityRecord,
    EntityType,
    Sample,
    deduplicate,
    load_annotations,
    load_dataset,
    load_schema,
    save_annotations,
    save_samples,
    save_schema,
    validate,
)
from .errors import (
    AllabelError,
    AnnotatorError,
    CapabilityError,
    DataError,
    OutputParseError,
    SchemaError,
    SelectionError,
)
from .evaluation import (
    MatchCounts,
    ScoreReport,
    classify,
    convergence_fraction,
    f1,
    normalize_value,
    score,
    write_curve_csv,
)
from .harness import (
    AggregateRow,
    ExperimentConfig,
    LoggedAnnotator,
    ResultRow,
    ResultTable,
    annotate_with_pool,
    build_environment,
    config_from_file,
    config_from_obj,
    config_to_obj,
    emit_report,
    parse_proportion,
    run_ablation,
    run_benchmark,
    run_sweep,
)
from .prompting import (
    Demonstration,
    PromptTemplate,
    Retrieval,
    assemble_prompt,
    default_template,
    load_template,
    parse_template,
    render_annotations,
    retrieve_kshots,
)
from .selection import (
    Budget,
    SelectionConfig,
    SelectionResult,
    allabel_select,
    coldstart_coreset,
    diversity_stage,
    load_selection,
    perplexity_select,
    random_select,
    save_selection,
    seed_sample,
    similarity_stage,
    split_budget,
    sum_rank_scores,
    uncertainty_stage,
    weak_test_points,
)
from .similarity import (
    Bm25Backend,
    Bm25Index,
    DenseBackend,
    SimilarityMatrix,
    bm25_score,
    build_index,
    build_matrix,
    drop_columns,
    load_matrix,
    load_vectors,
    matrix_equal,
    normalize,
    ranked,
    save_matrix,
    symmetrized,
    tokenize,
)
from .synthetic import default_schema, make_clustered_corpus, write_corpus

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "AllabelError", "DataError", "SchemaError", "SelectionError",
    "AnnotatorError", "CapabilityError", "OutputParseError",
    # corpus
    "Sample", "EntityRecord", "EntityType", "DatasetSchema", "AnnotatedSample",
    "Dataset", "load_dataset", "load_schema", "save_schema", "load_annotations",
    "save_annotations", "save_samples", "validate", "deduplicate",
    # similarity
    "tokenize", "Bm25Index", "build_index", "bm25_score", "Bm25Backend",
    "DenseBackend", "load_vectors", "SimilarityMatrix", "build_matrix",
    "normalize", "drop_columns", "symmetrized", "ranked", "save_matrix",
    "load_matrix", "matrix_equal",
    # selection
    "Budget", "split_budget", "SelectionConfig", "SelectionResult",
    "seed_sample", "diversity_stage", "sum_rank_scores", "similarity_stage",
    "weak_test_points", "uncertainty_stage", "allabel_select", "random_select",
    "coldstart_coreset", "perplexity_select", "save_selection", "load_selection",
    # prompting
    "PromptTemplate", "Demonstration", "Retrieval", "load_template", "parse_template",
    "default_template", "render_annotations", "retrieve_kshots", "assemble_prompt",
    # annotator
    "Completion", "perplexity", "prompt_hash", "AnnotatorConfig", "HttpAnnotator",
    "annotate", "ParsedOutput", "parse_output", "SimulatedModel",
    "simulated_annotate", "SimulatedAnnotator", "ReplayAnnotator", "ResultsLog",
    # evaluation
    "normalize_value", "MatchCounts", "classify", "f1", "ScoreReport", "score",
    "write_curve_csv", "convergence_fraction",
    # harness
    "ExperimentConfig", "config_from_file", "config_from_obj", "config_to_obj",
    "parse_proportion", "ResultRow", "AggregateRow", "ResultTable",
    "LoggedAnnotator", "annotate_with_pool", "build_environment",
    "run_sweep", "run_ablation", "emit_report", "run_benchmark",
    # synthetic
    "default_schema", "make_clustered_corpus", "write_corpus",
]
