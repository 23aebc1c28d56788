"""Shared fixtures and matrix-building helpers."""
from __future__ import annotations

import random

import numpy as np
import pytest

from allabel import Dataset, DatasetSchema, EntityType, Sample, SimilarityMatrix


def ids_for(n: int) -> list[str]:
    return [f"s{i:02d}" for i in range(n)]


def tiny_schema() -> DatasetSchema:
    return DatasetSchema(
        (
            EntityType("Reagent", ("name", "amount")),
            EntityType("Outcome", ("value",)),
        )
    )


def dataset_for(ids: list[str]) -> Dataset:
    """A dataset of placeholder texts, for code paths that only need ids."""
    return Dataset(
        schema=tiny_schema(),
        samples=tuple(Sample(id=s, text=f"text {s}") for s in ids),
    )


def matrix_from_rows(
    rows: list[list[float]],
    row_ids: list[str] | None = None,
    col_ids: list[str] | None = None,
    normalized: bool = True,
) -> SimilarityMatrix:
    n_rows = len(rows)
    n_cols = len(rows[0])
    if row_ids is None:
        row_ids = ids_for(max(n_rows, n_cols))[:n_rows]
    if col_ids is None:
        col_ids = ids_for(max(n_rows, n_cols))[:n_cols]
    return SimilarityMatrix(
        row_ids=tuple(row_ids),
        col_ids=tuple(col_ids),
        scores=np.array(rows, dtype=np.float64),
        normalized=normalized,
    )


def random_grid_rows(rng: random.Random, n: int, denominator: int) -> list[list[float]]:
    """A random square matrix on a dyadic value grid with a nan diagonal.

    Multiples of 1/2^p sum exactly in float64 at these sizes, so the library
    and the pure-Python oracles compute identical floats, and coarse grids
    force plenty of ties through the position rule.
    """
    nan = float("nan")
    return [
        [
            nan if i == j else rng.randrange(denominator + 1) / denominator
            for j in range(n)
        ]
        for i in range(n)
    ]


@pytest.fixture
def rng() -> random.Random:
    return random.Random(20240817)
