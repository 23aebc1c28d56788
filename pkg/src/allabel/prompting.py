"""K-shot retrieval and prompt assembly for in-context annotation.

A prompt is four instruction sections followed by numbered example pairs and
the unannotated query as the final input. Assembly is pure string work with
no randomness, so the same template, demonstrations, and query always yield
the same bytes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import AnnotatedSample, DatasetSchema, EntityRecord
from .errors import DataError
from .similarity import Bm25Index, SimilarityMatrix, bm25_score

__all__ = [
    "PromptTemplate",
    "Demonstration",
    "Retrieval",
    "load_template",
    "parse_template",
    "default_template",
    "render_annotations",
    "retrieve_kshots",
    "assemble_prompt",
]

_SECTION_MARKERS = ("[ROLE]", "[TASK]", "[BACKGROUND]", "[FORMAT]")


@dataclass(frozen=True)
class PromptTemplate:
    """The four instruction sections of an annotation prompt."""

    role: str
    task: str
    background: str
    format_spec: str

    def __post_init__(self) -> None:
        for name in ("role", "task", "background", "format_spec"):
            if not getattr(self, name).strip():
                raise DataError(f"template section {name!r} must be non-empty")


@dataclass(frozen=True)
class Demonstration:
    """One worked example: a text and its serialized annotations."""

    id: str
    text: str
    annotation: str
    score: float


@dataclass(frozen=True)
class Retrieval:
    """Demonstrations for one query, flagged when fewer than asked."""

    demonstrations: tuple[Demonstration, ...]
    truncated: bool


def parse_template(text: str) -> PromptTemplate:
    """Split marker-delimited text into the four template sections."""
    sections: dict[str, list[str]] = {}
    current: str | None = None
    for line in text.splitlines():
        stripped = line.strip()
        if stripped in _SECTION_MARKERS:
            if stripped in sections:
                raise DataError(f"duplicate template marker {stripped}")
            sections[stripped] = []
            current = stripped
            continue
        if current is not None:
            sections[current].append(line)
    missing = [m for m in _SECTION_MARKERS if m not in sections]
    if missing:
        raise DataError(f"template is missing markers: {', '.join(missing)}")
    role, task, background, format_spec = (
        "\n".join(sections[m]).strip() for m in _SECTION_MARKERS
    )
    return PromptTemplate(role=role, task=task, background=background, format_spec=format_spec)


def load_template(path: str | Path) -> PromptTemplate:
    with open(path, encoding="utf-8") as fh:
        return parse_template(fh.read())


def default_template(schema: DatasetSchema) -> PromptTemplate:
    """Instantiate the bundled template with the schema's entity catalog."""
    raw = resources.files("allabel").joinpath("data/default_template.txt").read_text("utf-8")
    catalog = "\n".join(
        f"- {t.name}: attributes {', '.join(t.attributes)}" for t in schema.entity_types
    )
    example: dict[str, tuple[EntityRecord, ...]] = {}
    for i, t in enumerate(schema.entity_types):
        if i == 0:
            example[t.name] = (
                EntityRecord(tuple((a, f"<{a}>") for a in t.attributes)),
            )
        else:
            example[t.name] = ()
    rendered = render_annotations(example, schema)
    return parse_template(
        raw.replace("{entity_catalog}", catalog).replace("{format_example}", rendered)
    )


def render_annotations(
    annotations: Mapping[str, tuple[EntityRecord, ...]], schema: DatasetSchema
) -> str:
    """Serialize annotations as a single-line JSON array of one object.

    Entity types appear in schema order with empty lists kept explicit, so
    rendering is canonical and parse_output inverts it exactly.
    """
    body = {
        name: [r.as_dict() for r in annotations.get(name, ())]
        for name in schema.type_names
    }
    return json.dumps([body], ensure_ascii=False, separators=(", ", ": "))


def retrieve_kshots(
    source: SimilarityMatrix | Bm25Index,
    query_id: str,
    pool_ids: Sequence[str],
    k: int,
    annotated: Mapping[str, AnnotatedSample],
    schema: DatasetSchema,
) -> Retrieval:
    """The k most similar annotated pool samples for one query, best first.

    The query never retrieves itself. When the pool offers fewer than k
    candidates, all of them come back and the result is flagged truncated.
    Ties break toward the earlier dataset position.
    """
    if k < 0:
        raise DataError("k must be non-negative")
    missing = [p for p in pool_ids if p not in annotated]
    if missing:
        raise DataError(f"pool samples lack annotations: {missing[:5]}")

    if isinstance(source, SimilarityMatrix):
        col_index = source.col_index
        row = source.row(query_id)
        scored: list[tuple[float, int, str]] = []
        for pid in pool_ids:
            if pid == query_id:
                continue
            j = col_index.get(pid)
            if j is None:
                raise DataError(f"pool sample {pid!r} is not a matrix column")
            v = row[j]
            if v != v:  # masked
                continue
            scored.append((float(v), j, pid))
    elif isinstance(source, Bm25Index):
        doc_index = source._doc_index
        if query_id not in doc_index:
            raise DataError(f"query {query_id!r} is not in the index")
        tf = source.doc_tf[doc_index[query_id]]
        query_tokens = [t for term, count in tf.items() for t in [term] * count]
        scored = []
        for pid in pool_ids:
            if pid == query_id:
                continue
            if pid not in doc_index:
                raise DataError(f"pool sample {pid!r} is not in the index")
            scored.append((bm25_score(source, query_tokens, pid), doc_index[pid], pid))
    else:
        raise DataError(f"unsupported retrieval source {type(source).__name__}")

    scored.sort(key=lambda t: (-t[0], t[1]))
    chosen = scored[:k]
    demos = tuple(
        Demonstration(
            id=pid,
            text=annotated[pid].sample.text,
            annotation=render_annotations(annotated[pid].annotations, schema),
            score=score,
        )
        for score, _, pid in chosen
    )
    return Retrieval(demonstrations=demos, truncated=len(demos) < k)


def assemble_prompt(
    template: PromptTemplate, demonstrations: Sequence[Demonstration], query_text: str
) -> str:
    """Compose the full prompt, ending with the unannotated query input."""
    if not query_text:
        raise DataError("query text must be non-empty")
    lines: list[str] = []
    for i, demo in enumerate(demonstrations, start=1):
        lines.append(f"Input {i}: {demo.text}")
        lines.append(f"Output {i}: {demo.annotation}")
    lines.append(f"Input {len(demonstrations) + 1}: {query_text}")
    sections = [
        template.role,
        template.task,
        template.background,
        template.format_spec,
        "\n".join(lines),
    ]
    return "\n\n".join(sections)
