"""Seeded generator for a clustered synthetic corpus.

Desk-scale experiments need a corpus whose retrieval structure is knowable:
samples fall into lexical clusters with disjoint content vocabularies, so
within-cluster similarity dwarfs cross-cluster similarity. Entity values are
cluster-specific too, which makes good demonstration retrieval visibly pay
off under the simulated annotator.
"""
from __future__ import annotations

import random
from pathlib import Path

from .corpus import (
    AnnotatedSample,
    Dataset,
    DatasetSchema,
    EntityRecord,
    EntityType,
    Sample,
    save_annotations,
    save_samples,
    save_schema,
)
from .errors import DataError

__all__ = ["default_schema", "make_clustered_corpus", "write_corpus"]

_CONSONANTS = "bcdfghklmnprstvz"
_VOWELS = "aeiou"
_SALTS = ("chloride", "nitrate", "acetate", "sulfate", "oxide")


def default_schema() -> DatasetSchema:
    return DatasetSchema(
        (
            EntityType("Reagent", ("name", "amount")),
            EntityType("Solvent", ("name", "volume")),
            EntityType("Catalyst", ("name",)),
            EntityType("Outcome", ("value",)),
        )
    )


def _word(rng: random.Random, taken: set[str]) -> str:
    while True:
        syllables = rng.randrange(2, 4)
        w = "".join(
            rng.choice(_CONSONANTS) + rng.choice(_VOWELS) for _ in range(syllables)
        )
        if w not in taken:
            taken.add(w)
            return w


def make_clustered_corpus(
    n: int = 200, clusters: int = 5, seed: int = 7, schema: DatasetSchema | None = None
) -> Dataset:
    """Build n gold-annotated samples spread round-robin over lexical clusters.

    Each cluster mixes two sample kinds. Every eighth cluster member is a
    "protocol" sample: a short text built from the full cluster vocabulary
    with every clause present, which makes it an excellent retrieval target
    for the whole cluster. The rest are "report" samples that share the
    cluster vocabulary but drag in sample-specific jargon and drop clauses,
    so they match queries far more weakly. Selection quality therefore shows
    up directly in retrieval quality.

    Everything is drawn from one seeded generator, so the same arguments
    always produce the identical corpus. The schema defaults to four entity
    types; a custom schema must use the same type names.
    """
    if n < clusters:
        raise DataError(f"need at least one sample per cluster ({n} < {clusters})")
    if clusters < 1:
        raise DataError("need at least one cluster")
    schema = schema or default_schema()
    for name in ("Reagent", "Solvent", "Catalyst", "Outcome"):
        if name not in schema.type_names:
            raise DataError(f"synthetic corpus schema must include entity type {name!r}")

    rng = random.Random(seed)
    taken: set[str] = set()
    topics = []
    for c in range(clusters):
        vocab = [_word(rng, taken) for _ in range(10)]
        salt = _SALTS[c % len(_SALTS)]
        reagents = [f"{_word(rng, taken)} {salt}" for _ in range(3)]
        solvents = [_word(rng, taken) for _ in range(2)]
        catalysts = [f"{_word(rng, taken)} black" for _ in range(2)]
        yield_lo = 40 + 10 * (c % 5)
        topics.append((vocab, reagents, solvents, catalysts, yield_lo))

    samples: list[Sample] = []
    gold: dict[str, AnnotatedSample] = {}
    for i in range(n):
        vocab, reagents, solvents, catalysts, yield_lo = topics[i % clusters]
        sid = f"s{i:04d}"
        protocol = (i // clusters) % 8 == 0

        n_reagents = 1 if protocol else 1 + (rng.random() < 0.35)
        reagent_records = []
        mentions = []
        for name in rng.sample(reagents, n_reagents):
            amount = f"0.{rng.randrange(1, 10)} mmol"
            reagent_records.append(EntityRecord((("name", name), ("amount", amount))))
            mentions.append(f"{name} ({amount})")
        solvent_name = rng.choice(solvents)
        volume = f"{rng.randrange(2, 20)} mL"
        solvent_records = (EntityRecord((("name", solvent_name), ("volume", volume))),)
        catalyst_records: tuple[EntityRecord, ...] = ()
        catalyst_clause = ""
        if protocol or rng.random() < 0.65:
            catalyst_name = rng.choice(catalysts)
            catalyst_records = (EntityRecord((("name", catalyst_name),)),)
            catalyst_clause = f" over {catalyst_name}"
        outcome_records: tuple[EntityRecord, ...] = ()
        outcome_clause = "."
        if protocol or rng.random() < 0.7:
            value = f"{rng.randrange(yield_lo, yield_lo + 12)}%"
            outcome_records = (EntityRecord((("value", value),)),)
            outcome_clause = f" in {value} yield."

        w = rng.sample(vocab, len(vocab))
        text = (
            f"In a typical {w[0]} {w[1]} procedure, {' and '.join(mentions)} "
            f"were dissolved in {solvent_name} ({volume}) and stirred"
            f"{catalyst_clause}, affording the {w[2]} {w[3]} product"
            f"{outcome_clause} The workup followed the {w[4]} {w[5]} route "
            f"described for {w[6]} {w[7]} systems under {w[8]} {w[9]} conditions."
        )
        if not protocol:
            jargon = " ".join(_word(rng, taken) for _ in range(12))
            text += f" Supplementary notes discuss {jargon} measurements."
        sample = Sample(id=sid, text=text)
        samples.append(sample)
        gold[sid] = AnnotatedSample(
            sample,
            {
                "Reagent": tuple(reagent_records),
                "Solvent": solvent_records,
                "Catalyst": catalyst_records,
                "Outcome": outcome_records,
            },
        )
    return Dataset(schema=schema, samples=tuple(samples), gold=gold)


def write_corpus(dataset: Dataset, out_dir: str | Path) -> dict[str, Path]:
    """Materialize samples, schema, and gold annotations as files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "samples": out / "samples.jsonl",
        "schema": out / "schema.json",
        "gold": out / "gold.jsonl",
    }
    save_samples(dataset, paths["samples"])
    save_schema(dataset.schema, paths["schema"])
    save_annotations(dataset.gold, dataset.schema, paths["gold"])
    return paths
