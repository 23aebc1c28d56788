"""Pairwise text similarity: scoring backends and the query/candidate matrix.

The central object is an N x N (later N x fewer-columns) matrix whose cell
(i, j) scores column sample j as a retrieval candidate for query row i.
Scores are asymmetric for lexical backends; a symmetric view is derived on
demand by taking the elementwise maximum of the two directions. Self pairs
are masked and stay masked through every transformation.
"""
from __future__ import annotations

import json
import math
import re
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .corpus import Dataset
from .errors import DataError

__all__ = [
    "tokenize",
    "Bm25Index",
    "build_index",
    "bm25_score",
    "Bm25Backend",
    "DenseBackend",
    "load_vectors",
    "SimilarityMatrix",
    "build_matrix",
    "normalize",
    "drop_columns",
    "symmetrized",
    "RankedCandidate",
    "RankedList",
    "ranked",
    "save_matrix",
    "load_matrix",
    "save_matrix_debug",
    "matrix_equal",
]

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters.

    Numeric fragments survive as their own tokens, so "AgNO3 (0.2 mmol)"
    becomes ["agno3", "0", "2", "mmol"].
    """
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Bm25Index:
    """Corpus statistics needed to score a query against each document."""

    doc_ids: tuple[str, ...]
    doc_tf: tuple[dict[str, int], ...]
    doc_len: tuple[int, ...]
    avg_dl: float
    df: dict[str, int]
    k1: float
    b: float

    def __post_init__(self) -> None:
        if self.k1 < 0:
            raise ValueError("k1 must be >= 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must lie in [0, 1]")
        if self.doc_ids and self.avg_dl <= 0:
            raise ValueError("average document length must be positive")

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)

    def idf(self, term: str) -> float:
        d = self.df.get(term, 0)
        return math.log((self.n_docs - d + 0.5) / (d + 0.5) + 1.0)

    @cached_property
    def _doc_index(self) -> dict[str, int]:
        return {doc_id: i for i, doc_id in enumerate(self.doc_ids)}

    @cached_property
    def _postings(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """term -> (document indices, term frequencies) as arrays."""
        lists: dict[str, list[tuple[int, int]]] = {}
        for i, tf in enumerate(self.doc_tf):
            for term, count in tf.items():
                lists.setdefault(term, []).append((i, count))
        return {
            term: (
                np.array([i for i, _ in pairs], dtype=np.intp),
                np.array([c for _, c in pairs], dtype=np.float64),
            )
            for term, pairs in lists.items()
        }

    @cached_property
    def _length_norm(self) -> np.ndarray:
        """Per-document k1 * (1 - b + b * |d| / avg_dl)."""
        lengths = np.array(self.doc_len, dtype=np.float64)
        return self.k1 * (1.0 - self.b + self.b * lengths / self.avg_dl)


def build_index(dataset: Dataset, k1: float = 1.5, b: float = 0.75) -> Bm25Index:
    """Tokenize every sample text and collect document frequency statistics."""
    token_lists = [tokenize(s.text) for s in dataset.samples]
    doc_tf: list[dict[str, int]] = []
    df: dict[str, int] = {}
    for tokens in token_lists:
        tf: dict[str, int] = {}
        for t in tokens:
            tf[t] = tf.get(t, 0) + 1
        doc_tf.append(tf)
        for term in tf:
            df[term] = df.get(term, 0) + 1
    lengths = [len(t) for t in token_lists]
    avg_dl = sum(lengths) / len(lengths) if lengths else 0.0
    return Bm25Index(
        doc_ids=tuple(s.id for s in dataset.samples),
        doc_tf=tuple(doc_tf),
        doc_len=tuple(lengths),
        avg_dl=avg_dl,
        df=df,
        k1=k1,
        b=b,
    )


def bm25_score(index: Bm25Index, query_tokens: Sequence[str], doc_id: str) -> float:
    """Score one document for a tokenized query.

    Each query token occurrence contributes independently; tokens absent from
    the document contribute zero.
    """
    j = index._doc_index.get(doc_id)
    if j is None:
        raise DataError(f"unknown document id {doc_id!r}")
    tf_map = index.doc_tf[j]
    norm = index.k1 * (1.0 - index.b + index.b * index.doc_len[j] / index.avg_dl)
    total = 0.0
    for term in query_tokens:
        f = tf_map.get(term, 0)
        if f == 0:
            continue
        total += index.idf(term) * f * (index.k1 + 1.0) / (f + norm)
    return total


class SimilarityBackend(Protocol):
    """Row-wise scorer used by build_matrix."""

    doc_ids: tuple[str, ...]

    def score_row(self, query_index: int) -> np.ndarray: ...


class Bm25Backend:
    """Lexical backend: row i scores the tokenized text of sample i
    against every sample treated as a document."""

    def __init__(self, dataset: Dataset, k1: float = 1.5, b: float = 0.75) -> None:
        self.index = build_index(dataset, k1=k1, b=b)
        self.doc_ids = self.index.doc_ids
        self._queries = [tokenize(s.text) for s in dataset.samples]

    def score_row(self, query_index: int) -> np.ndarray:
        index = self.index
        scores = np.zeros(index.n_docs, dtype=np.float64)
        postings = index._postings
        norm = index._length_norm
        # One pass per token occurrence keeps the accumulation order identical
        # to the single-cell scorer.
        for term in self._queries[query_index]:
            entry = postings.get(term)
            if entry is None:
                continue
            idx, tf = entry
            scores[idx] += index.idf(term) * tf * (index.k1 + 1.0) / (tf + norm[idx])
        return scores


class DenseBackend:
    """Cosine similarity over externally supplied embedding vectors."""

    def __init__(self, dataset: Dataset, vectors: dict[str, np.ndarray]) -> None:
        self.doc_ids = tuple(s.id for s in dataset.samples)
        rows = []
        dim: int | None = None
        for sid in self.doc_ids:
            if sid not in vectors:
                raise DataError(f"no vector for sample {sid!r}")
            v = np.asarray(vectors[sid], dtype=np.float64)
            if v.ndim != 1:
                raise DataError(f"vector for sample {sid!r} must be one-dimensional")
            if dim is None:
                dim = v.shape[0]
            elif v.shape[0] != dim:
                raise DataError(
                    f"vector for sample {sid!r} has dimension {v.shape[0]}, expected {dim}"
                )
            norm = float(np.linalg.norm(v))
            if norm == 0.0:
                raise DataError(f"vector for sample {sid!r} has zero norm")
            rows.append(v / norm)
        self._unit = np.vstack(rows)

    def score_row(self, query_index: int) -> np.ndarray:
        return self._unit @ self._unit[query_index]


def load_vectors(path: str | Path) -> dict[str, np.ndarray]:
    """Read embedding vectors from JSON lines of {"id": ..., "vector": [...]}. """
    from .corpus import read_jsonl

    out: dict[str, np.ndarray] = {}
    for lineno, obj in read_jsonl(path):
        sid = obj.get("id")
        vec = obj.get("vector")
        if not isinstance(sid, str) or not isinstance(vec, list):
            raise DataError(f"{path}:{lineno}: expected 'id' and 'vector' fields")
        if sid in out:
            raise DataError(f"{path}:{lineno}: duplicate vector for {sid!r}")
        out[sid] = np.asarray(vec, dtype=np.float64)
    return out


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """Query-by-candidate score matrix with NaN-masked cells.

    Rows keep the full corpus; columns shrink as samples get selected.
    A cell is masked if and only if it is NaN, which at build time means the
    self pair.
    """

    row_ids: tuple[str, ...]
    col_ids: tuple[str, ...]
    scores: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        if self.scores.shape != (len(self.row_ids), len(self.col_ids)):
            raise ValueError(
                f"score shape {self.scores.shape} does not match "
                f"{len(self.row_ids)} rows x {len(self.col_ids)} cols"
            )
        self.scores.flags.writeable = False

    @cached_property
    def row_index(self) -> dict[str, int]:
        return {r: i for i, r in enumerate(self.row_ids)}

    @cached_property
    def col_index(self) -> dict[str, int]:
        return {c: j for j, c in enumerate(self.col_ids)}

    @property
    def n_rows(self) -> int:
        return len(self.row_ids)

    @property
    def n_cols(self) -> int:
        return len(self.col_ids)

    def row(self, query_id: str) -> np.ndarray:
        i = self.row_index.get(query_id)
        if i is None:
            raise DataError(f"unknown query id {query_id!r}")
        return self.scores[i]


def build_matrix(
    dataset: Dataset, backend: SimilarityBackend, max_workers: int = 1
) -> SimilarityMatrix:
    """Score every sample as a query against every sample as a candidate.

    Rows are computed independently, so a parallel build assembles the exact
    same matrix as a sequential one.
    """
    ids = tuple(s.id for s in dataset.samples)
    if ids != tuple(backend.doc_ids):
        raise DataError("backend document ids do not match the dataset")
    n = len(ids)
    if n == 0:
        raise DataError("cannot build a similarity matrix over an empty dataset")

    def one_row(i: int) -> np.ndarray:
        try:
            row = np.asarray(backend.score_row(i), dtype=np.float64).copy()
        except Exception as exc:
            raise DataError(f"similarity backend failed on query row {ids[i]!r}") from exc
        if row.shape != (n,):
            raise DataError(f"backend returned shape {row.shape} for query row {ids[i]!r}")
        row[i] = np.nan  # self pair is never a candidate
        return row

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            rows = list(pool.map(one_row, range(n)))
    else:
        rows = [one_row(i) for i in range(n)]
    return SimilarityMatrix(row_ids=ids, col_ids=ids, scores=np.vstack(rows))


def normalize(matrix: SimilarityMatrix) -> SimilarityMatrix:
    """Min-max scale all unmasked cells to [0, 1] in one global pass.

    A matrix whose unmasked cells are all equal maps to all zeros. Masked
    cells stay masked. Renormalizing is a contract violation.
    """
    if matrix.normalized:
        raise ValueError("matrix is already normalized")
    scores = matrix.scores
    unmasked = ~np.isnan(scores)
    out = scores.copy()
    if unmasked.any():
        lo = float(scores[unmasked].min())
        hi = float(scores[unmasked].max())
        if hi > lo:
            out[unmasked] = (scores[unmasked] - lo) / (hi - lo)
        else:
            out[unmasked] = 0.0
    return SimilarityMatrix(
        row_ids=matrix.row_ids, col_ids=matrix.col_ids, scores=out, normalized=True
    )


def drop_columns(matrix: SimilarityMatrix, ids: Sequence[str]) -> SimilarityMatrix:
    """Remove candidate columns, preserving the order of the survivors."""
    drop = set(ids)
    missing = drop - set(matrix.col_ids)
    if missing:
        raise ValueError(f"cannot drop absent columns: {sorted(missing)}")
    keep = [j for j, c in enumerate(matrix.col_ids) if c not in drop]
    return SimilarityMatrix(
        row_ids=matrix.row_ids,
        col_ids=tuple(matrix.col_ids[j] for j in keep),
        scores=matrix.scores[:, keep].copy(),
        normalized=matrix.normalized,
    )


def symmetrized(matrix: SimilarityMatrix) -> np.ndarray:
    """Elementwise max of the two scoring directions, for square matrices."""
    if matrix.row_ids != matrix.col_ids:
        raise ValueError("symmetrized view requires a square matrix with matching ids")
    a = matrix.scores
    return np.fmax(a, a.T)


@dataclass(frozen=True)
class RankedCandidate:
    id: str
    score: float
    rank: int


@dataclass(frozen=True)
class RankedList:
    query_id: str
    candidates: tuple[RankedCandidate, ...]

    def rank_of(self, candidate_id: str) -> int | None:
        for c in self.candidates:
            if c.id == candidate_id:
                return c.rank
        return None


def ranked(matrix: SimilarityMatrix, query_id: str) -> RankedList:
    """All unmasked candidates of one row, best first.

    Ties break toward the earlier column position, which preserves dataset
    order end to end. Ranks run 1..len with no gaps.
    """
    row = matrix.row(query_id)
    keep = np.flatnonzero(~np.isnan(row))
    # lexsort: last key is primary, so sort by descending score then position
    order = keep[np.lexsort((keep, -row[keep]))]
    cands = tuple(
        RankedCandidate(id=matrix.col_ids[j], score=float(row[j]), rank=r)
        for r, j in enumerate(order, start=1)
    )
    return RankedList(query_id=query_id, candidates=cands)


_MAGIC = b"ALSM"
_VERSION = 1


def save_matrix(matrix: SimilarityMatrix, path: str | Path) -> None:
    """Write the binary container: header, id tables, row-major float64."""

    def id_table(ids: tuple[str, ...]) -> bytes:
        parts = []
        for s in ids:
            raw = s.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise DataError(f"id too long to serialize: {s[:32]!r}...")
            parts.append(struct.pack("<H", len(raw)) + raw)
        return b"".join(parts)

    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HBII", _VERSION, 1 if matrix.normalized else 0,
                             matrix.n_rows, matrix.n_cols))
        fh.write(id_table(matrix.row_ids))
        fh.write(id_table(matrix.col_ids))
        fh.write(np.ascontiguousarray(matrix.scores, dtype="<f8").tobytes())


def load_matrix(path: str | Path) -> SimilarityMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise DataError(f"{path}: not a similarity matrix file")
    off = 4
    try:
        version, flags, n_rows, n_cols = struct.unpack_from("<HBII", blob, off)
        off += struct.calcsize("<HBII")
        if version != _VERSION:
            raise DataError(f"{path}: unsupported matrix version {version}")

        def read_ids(count: int, off: int) -> tuple[tuple[str, ...], int]:
            ids = []
            for _ in range(count):
                (length,) = struct.unpack_from("<H", blob, off)
                off += 2
                ids.append(blob[off : off + length].decode("utf-8"))
                off += length
            return tuple(ids), off

        row_ids, off = read_ids(n_rows, off)
        col_ids, off = read_ids(n_cols, off)
        need = n_rows * n_cols * 8
        if len(blob) - off != need:
            raise DataError(f"{path}: truncated or oversized score block")
        scores = np.frombuffer(blob[off:], dtype="<f8").reshape(n_rows, n_cols).copy()
    except struct.error as exc:
        raise DataError(f"{path}: truncated matrix file") from exc
    return SimilarityMatrix(
        row_ids=row_ids, col_ids=col_ids, scores=scores, normalized=bool(flags & 1)
    )


def save_matrix_debug(matrix: SimilarityMatrix, path: str | Path) -> None:
    """Lossless JSON dump for inspection; masked cells become null."""
    rows = [[None if math.isnan(v) else v for v in row] for row in matrix.scores.tolist()]
    obj = {
        "format": "ALSM-debug",
        "version": _VERSION,
        "normalized": matrix.normalized,
        "row_ids": list(matrix.row_ids),
        "col_ids": list(matrix.col_ids),
        "scores": rows,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, ensure_ascii=False)
        fh.write("\n")


def matrix_equal(a: SimilarityMatrix, b: SimilarityMatrix) -> bool:
    """Bitwise equality including masks and the normalized flag."""
    return (
        a.row_ids == b.row_ids
        and a.col_ids == b.col_ids
        and a.normalized == b.normalized
        and bool(np.array_equal(a.scores, b.scores, equal_nan=True))
    )
