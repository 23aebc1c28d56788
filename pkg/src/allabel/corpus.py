"""Dataset loading, validation, and serialization.

Corpora are line-delimited JSON. Each sample line carries an id, the raw
paragraph text, and an optional source-document id. Gold and predicted
annotations live in separate files with one record per sample, mapping every
entity type of the schema to a list of attribute records. Empty lists are
written explicitly so that true-negative accounting stays well defined.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DataError, SchemaError

__all__ = [
    "Sample",
    "EntityRecord",
    "AnnotatedSample",
    "EntityType",
    "DatasetSchema",
    "Dataset",
    "read_jsonl",
    "write_jsonl",
    "load_schema",
    "save_schema",
    "load_dataset",
    "load_annotations",
    "save_samples",
    "save_annotations",
    "validate",
    "deduplicate",
]


@dataclass(frozen=True)
class Sample:
    """One unannotated text sample."""

    id: str
    text: str
    doc_id: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise DataError("sample id must be non-empty")
        if not self.text:
            raise DataError(f"sample {self.id!r}: text must be non-empty")


@dataclass(frozen=True)
class EntityRecord:
    """One extracted entity as an ordered attribute-name -> value map."""

    fields: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        if not self.fields:
            raise DataError("entity record must have at least one attribute")

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> EntityRecord:
        return cls(tuple((str(k), str(v)) for k, v in d.items()))

    def as_dict(self) -> dict[str, str]:
        return dict(self.fields)

    def attribute_names(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self.fields)


@dataclass(frozen=True)
class EntityType:
    """Schema entry: an entity type name and its attribute names."""

    name: str
    attributes: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.name:
            raise SchemaError("entity type name must be non-empty")
        if not self.attributes:
            raise SchemaError(f"entity type {self.name!r} needs at least one attribute")


@dataclass(frozen=True)
class DatasetSchema:
    """The set of entity types a corpus is annotated with."""

    entity_types: tuple[EntityType, ...]

    def __post_init__(self) -> None:
        names = [t.name for t in self.entity_types]
        if len(names) != len(set(names)):
            raise SchemaError("duplicate entity type names in schema")
        if not names:
            raise SchemaError("schema must declare at least one entity type")

    @property
    def type_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.entity_types)

    def attributes_of(self, name: str) -> tuple[str, ...]:
        for t in self.entity_types:
            if t.name == name:
                return t.attributes
        raise SchemaError(f"unknown entity type {name!r}")


@dataclass(frozen=True)
class AnnotatedSample:
    """A sample together with its annotations, one key per entity type."""

    sample: Sample
    annotations: dict[str, tuple[EntityRecord, ...]]

    @property
    def id(self) -> str:
        return self.sample.id


@dataclass(frozen=True)
class Dataset:
    """An ordered corpus with its schema and any attached annotations."""

    schema: DatasetSchema
    samples: tuple[Sample, ...]
    gold: dict[str, AnnotatedSample] = field(default_factory=dict)
    predicted: dict[str, AnnotatedSample] = field(default_factory=dict)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.samples)

    def __len__(self) -> int:
        return len(self.samples)

    def sample_by_id(self, sample_id: str) -> Sample:
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise DataError(f"unknown sample id {sample_id!r}")


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (line_number, object) pairs, skipping blank lines."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False))
            fh.write("\n")


def load_schema(path: str | Path) -> DatasetSchema:
    """Read a schema file: {"entity_types": [{"name": ..., "attributes": [...]}]}."""
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc
    types = obj.get("entity_types")
    if not isinstance(types, list):
        raise SchemaError(f"{path}: missing 'entity_types' list")
    entity_types = []
    for t in types:
        if not isinstance(t, dict) or "name" not in t or "attributes" not in t:
            raise SchemaError(f"{path}: each entity type needs 'name' and 'attributes'")
        entity_types.append(EntityType(str(t["name"]), tuple(str(a) for a in t["attributes"])))
    return DatasetSchema(tuple(entity_types))


def save_schema(schema: DatasetSchema, path: str | Path) -> None:
    obj = {
        "entity_types": [
            {"name": t.name, "attributes": list(t.attributes)} for t in schema.entity_types
        ]
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, ensure_ascii=False, indent=2)
        fh.write("\n")


def _parse_annotation_obj(
    obj: dict, schema: DatasetSchema, where: str
) -> dict[str, tuple[EntityRecord, ...]]:
    """Parse the annotations payload of one line, filling absent types."""
    raw = obj.get("annotations")
    if not isinstance(raw, dict):
        raise DataError(f"{where}: missing 'annotations' object")
    known = set(schema.type_names)
    for key in raw:
        if key not in known:
            raise SchemaError(f"{where}: entity type {key!r} not in schema")
    annotations: dict[str, tuple[EntityRecord, ...]] = {}
    for name in schema.type_names:
        records = raw.get(name, [])
        if not isinstance(records, list):
            raise DataError(f"{where}: annotations for {name!r} must be a list")
        parsed = []
        for rec in records:
            if not isinstance(rec, dict):
                raise DataError(f"{where}: records for {name!r} must be objects")
            parsed.append(EntityRecord(tuple((str(k), str(v)) for k, v in rec.items())))
        annotations[name] = tuple(parsed)
    return annotations


def load_annotations(
    path: str | Path, schema: DatasetSchema, samples: dict[str, Sample] | None = None
) -> dict[str, AnnotatedSample]:
    """Read an annotation file into a sample-id keyed map.

    When ``samples`` is given, every annotation line must refer to a known
    sample and the stored Sample is reused; otherwise a text-less placeholder
    cannot be built, so the id is all that is checked.
    """
    out: dict[str, AnnotatedSample] = {}
    for lineno, obj in read_jsonl(path):
        where = f"{path}:{lineno}"
        sid = obj.get("id")
        if not isinstance(sid, str) or not sid:
            raise DataError(f"{where}: missing sample 'id'")
        if sid in out:
            raise DataError(f"{where}: duplicate annotation for sample {sid!r}")
        if samples is not None:
            if sid not in samples:
                raise DataError(f"{where}: annotation for unknown sample {sid!r}")
            sample = samples[sid]
        else:
            sample = Sample(id=sid, text=obj.get("text") or "<unknown>")
        out[sid] = AnnotatedSample(sample, _parse_annotation_obj(obj, schema, where))
    return out


def load_dataset(
    path: str | Path, schema_path: str | Path, gold_path: str | Path | None = None
) -> Dataset:
    """Load samples (and optionally gold annotations) into a Dataset.

    Sample order follows the file. Duplicate ids and unknown entity types are
    hard errors; softer shape problems are left to ``validate``.
    """
    schema = load_schema(schema_path)
    samples: list[Sample] = []
    seen: set[str] = set()
    for lineno, obj in read_jsonl(path):
        where = f"{path}:{lineno}"
        sid = obj.get("id")
        text = obj.get("text")
        if not isinstance(sid, str) or not sid:
            raise DataError(f"{where}: missing sample 'id'")
        if not isinstance(text, str) or not text:
            raise DataError(f"{where}: missing sample 'text'")
        if sid in seen:
            raise DataError(f"{where}: duplicate sample id {sid!r}")
        seen.add(sid)
        doc_id = obj.get("doc_id")
        if doc_id is not None and not isinstance(doc_id, str):
            raise DataError(f"{where}: 'doc_id' must be a string")
        samples.append(Sample(id=sid, text=text, doc_id=doc_id))
    gold: dict[str, AnnotatedSample] = {}
    if gold_path is not None:
        gold = load_annotations(gold_path, schema, {s.id: s for s in samples})
    return Dataset(schema=schema, samples=tuple(samples), gold=gold)


def save_samples(dataset: Dataset, path: str | Path) -> None:
    def rec(s: Sample) -> dict:
        d: dict = {"id": s.id, "text": s.text}
        if s.doc_id is not None:
            d["doc_id"] = s.doc_id
        return d

    write_jsonl(path, (rec(s) for s in dataset.samples))


def save_annotations(
    annotations: dict[str, AnnotatedSample], schema: DatasetSchema, path: str | Path
) -> None:
    """Write annotations in schema type order with empty lists kept explicit."""

    def rec(a: AnnotatedSample) -> dict:
        body = {
            name: [r.as_dict() for r in a.annotations.get(name, ())]
            for name in schema.type_names
        }
        return {"id": a.id, "annotations": body}

    write_jsonl(path, (rec(a) for a in annotations.values()))


def validate(dataset: Dataset) -> list[str]:
    """Return human-readable violations; an empty list means a clean dataset.

    Validation never raises on content problems: callers decide whether a
    violation is fatal.
    """
    violations: list[str] = []
    seen: set[str] = set()
    for s in dataset.samples:
        if s.id in seen:
            violations.append(f"duplicate sample id {s.id!r}")
        seen.add(s.id)
    known = set(dataset.schema.type_names)
    for label, table in (("gold", dataset.gold), ("predicted", dataset.predicted)):
        for sid, ann in table.items():
            if sid not in seen:
                violations.append(f"{label} annotation for unknown sample {sid!r}")
            for name in dataset.schema.type_names:
                if name not in ann.annotations:
                    violations.append(
                        f"{label} annotation {sid!r}: missing entity type key {name!r}"
                    )
            for name, records in ann.annotations.items():
                if name not in known:
                    violations.append(
                        f"{label} annotation {sid!r}: unknown entity type {name!r}"
                    )
                    continue
                allowed = set(dataset.schema.attributes_of(name))
                for rec in records:
                    for attr in rec.attribute_names():
                        if attr not in allowed:
                            violations.append(
                                f"{label} annotation {sid!r}: {name!r} has "
                                f"unknown attribute {attr!r}"
                            )
    return violations


def deduplicate(dataset: Dataset) -> Dataset:
    """Drop samples whose doc_id was already seen, keeping the first.

    Samples without a doc_id are always kept. Gold and predicted entries for
    dropped samples are dropped with them. This is an opt-in preprocessing
    pass, never applied implicitly.
    """
    kept: list[Sample] = []
    seen_docs: set[str] = set()
    for s in dataset.samples:
        if s.doc_id is not None:
            if s.doc_id in seen_docs:
                continue
            seen_docs.add(s.doc_id)
        kept.append(s)
    kept_ids = {s.id for s in kept}
    return Dataset(
        schema=dataset.schema,
        samples=tuple(kept),
        gold={k: v for k, v in dataset.gold.items() if k in kept_ids},
        predicted={k: v for k, v in dataset.predicted.items() if k in kept_ids},
    )
