"""Sample selection: the three-stage pipeline and its baselines.

The pipeline spends an annotation budget M in three stages. A diversity
stage grows a core set by greedy max-min distance, a similarity stage ranks
candidates by how often they appear near the top of each query's ranked
list, and an uncertainty stage finds queries that the current pool serves
badly and reapplies the rank scoring restricted to those rows. Every
tie anywhere breaks toward the earlier dataset position, so the pipeline is
deterministic end to end and takes no seed.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .corpus import Dataset
from .errors import DataError, SelectionError
from .similarity import SimilarityMatrix, drop_columns, normalize, symmetrized

if TYPE_CHECKING:  # pragma: no cover - typing only
    from .annotator import Annotator
    from .prompting import PromptTemplate

__all__ = [
    "Budget",
    "split_budget",
    "SelectionConfig",
    "StageResult",
    "TraceEntry",
    "SelectionResult",
    "seed_sample",
    "diversity_stage",
    "sum_rank_scores",
    "similarity_stage",
    "weak_test_points",
    "uncertainty_stage",
    "allabel_select",
    "random_select",
    "coldstart_coreset",
    "perplexity_select",
    "save_selection",
    "load_selection",
]

STAGE_NAMES = {"D": "diversity", "S": "similarity", "U": "uncertainty"}
VALID_ORDERS = ("D-S-U", "S-D-U", "S-U-D")


@dataclass(frozen=True)
class Budget:
    """Total selection size and, for the staged pipeline, its split."""

    m: int
    proportion: tuple[int, int, int] | None = None
    stage_sizes: dict[str, int] | None = None

    def size_of(self, stage: str) -> int:
        if self.stage_sizes is None:
            raise SelectionError("budget carries no stage split")
        return self.stage_sizes[stage]


def split_budget(m: int, proportion: Sequence[int] = (1, 3, 1)) -> Budget:
    """Apportion M across diversity, similarity, and uncertainty stages.

    Uses the largest-remainder rule on exact integer arithmetic: floor each
    share, then hand out the leftover picks to the largest fractional
    remainders, earlier stage first on ties. Sizes always sum to M exactly.
    """
    parts = tuple(int(p) for p in proportion)
    if len(parts) != 3:
        raise SelectionError("proportion must have exactly three parts")
    if any(p <= 0 for p in parts):
        raise SelectionError("proportion parts must be positive")
    if m < len(parts):
        raise SelectionError(f"budget M={m} cannot feed {len(parts)} stages")
    total = sum(parts)
    base = [(m * p) // total for p in parts]
    remainders = [(m * p) % total for p in parts]
    leftover = m - sum(base)
    order = sorted(range(3), key=lambda i: (-remainders[i], i))
    for i in order[:leftover]:
        base[i] += 1
    sizes = {"diversity": base[0], "similarity": base[1], "uncertainty": base[2]}
    return Budget(m=m, proportion=parts, stage_sizes=sizes)


@dataclass(frozen=True)
class SelectionConfig:
    """Knobs of the staged pipeline.

    ``x`` bounds the decayed-credit zone of the rank scoring; when None it
    defaults to the similarity stage size, lifted to k + 1 whenever that
    size would not exceed k.
    """

    order: str = "D-S-U"
    proportion: tuple[int, int, int] = (1, 3, 1)
    k: int = 3
    x: int | None = None


@dataclass(frozen=True)
class StageResult:
    name: str
    ids: tuple[str, ...]


@dataclass(frozen=True)
class TraceEntry:
    stage: str
    pick: int
    id: str
    score: float | None
    rule: str


@dataclass(frozen=True)
class SelectionResult:
    budget: Budget
    stages: tuple[StageResult, ...]
    trace: tuple[TraceEntry, ...] = ()

    @property
    def selected_ids(self) -> tuple[str, ...]:
        out: list[str] = []
        for stage in self.stages:
            out.extend(stage.ids)
        return tuple(out)


def _require_square_normalized(matrix: SimilarityMatrix, op: str) -> SimilarityMatrix:
    if matrix.row_ids != matrix.col_ids:
        raise SelectionError(f"{op} needs a square matrix with matching row/col ids")
    if not matrix.normalized:
        raise SelectionError(f"{op} needs a normalized matrix")
    return matrix


def seed_sample(matrix: SimilarityMatrix) -> str:
    """The sample least similar on average to everything else.

    Similarity is the symmetric view; the mean runs over the other N - 1
    samples. Ties go to the earlier dataset position.
    """
    _require_square_normalized(matrix, "seed_sample")
    if matrix.n_rows < 2:
        raise SelectionError("seed_sample needs at least two samples")
    sym = symmetrized(matrix)
    means = np.nanmean(sym, axis=1)
    return matrix.row_ids[int(np.argmin(means))]


def diversity_stage(
    matrix: SimilarityMatrix,
    m: int,
    selected: Sequence[str] = (),
    candidates: Sequence[str] | None = None,
) -> list[tuple[str, float, str]]:
    """Greedy max-min core-set picks: (id, score, rule) per pick.

    With nothing selected yet, the first pick is the seed (lowest mean
    similarity, recorded score is that mean). Every other pick maximizes the
    minimum distance (1 - symmetric similarity) to everything selected so
    far, including picks made by earlier stages; the recorded score is that
    distance. Ties go to the earlier dataset position.
    """
    _require_square_normalized(matrix, "diversity_stage")
    n = matrix.n_rows
    index = matrix.row_index
    sel: list[int] = []
    for s in selected:
        if s not in index:
            raise SelectionError(f"selected id {s!r} not in matrix")
        sel.append(index[s])
    if candidates is None:
        cand_ids: Iterable[str] = (c for c in matrix.row_ids if c not in set(selected))
    else:
        cand_ids = candidates
    is_cand = np.zeros(n, dtype=bool)
    for c in cand_ids:
        if c not in index:
            raise SelectionError(f"candidate id {c!r} not in matrix")
        is_cand[index[c]] = True
    if is_cand[sel].any():
        raise SelectionError("candidate set overlaps the already-selected set")
    if m > int(is_cand.sum()):
        raise SelectionError(f"cannot pick {m} samples from {int(is_cand.sum())} candidates")

    sym = symmetrized(matrix)
    if sel:
        maxsim = np.fmax.reduce(sym[:, sel], axis=1)
    else:
        maxsim = np.full(n, -np.inf)

    picks: list[tuple[str, float, str]] = []
    for _ in range(m):
        if not sel:
            means = np.nanmean(sym, axis=1)
            vals = np.where(is_cand, means, np.inf)
            i = int(np.argmin(vals))
            picks.append((matrix.row_ids[i], float(means[i]), "seed:min_mean_similarity"))
        else:
            vals = np.where(is_cand, maxsim, np.inf)
            i = int(np.argmin(vals))
            picks.append((matrix.row_ids[i], float(1.0 - maxsim[i]), "maxmin_distance"))
        sel.append(i)
        is_cand[i] = False
        maxsim = np.fmax(maxsim, sym[:, i])
    return picks


def _sum_rank_array(matrix: SimilarityMatrix, k: int, x: int) -> np.ndarray:
    """Accumulated rank credit per column, in column order.

    Every row acts as a query, including rows of already-selected samples.
    A candidate ranked r in a row earns 1 for r <= k, 1 / (r - k + 1) for
    k < r <= x, and nothing beyond x.
    """
    if k < 1:
        raise SelectionError("k must be at least 1")
    if x <= k:
        raise SelectionError(f"x={x} must exceed k={k}")
    scores = np.zeros(matrix.n_cols, dtype=np.float64)
    for i in range(matrix.n_rows):
        row = matrix.scores[i]
        keep = np.flatnonzero(~np.isnan(row))
        if keep.size == 0:
            continue
        order = keep[np.lexsort((keep, -row[keep]))]
        r = np.arange(1, order.size + 1, dtype=np.float64)
        # the decayed branch only applies for r > k, where the denominator
        # is at least 2; clamping keeps numpy from evaluating 1/0 at r = k - 1
        denom = np.maximum(r - k + 1.0, 1.0)
        credit = np.where(r <= k, 1.0, np.where(r <= x, 1.0 / denom, 0.0))
        scores[order] += credit
    return scores


def sum_rank_scores(matrix: SimilarityMatrix, k: int, x: int) -> dict[str, float]:
    arr = _sum_rank_array(matrix, k, x)
    return {c: float(arr[j]) for j, c in enumerate(matrix.col_ids)}


def _top_columns(matrix: SimilarityMatrix, scores: np.ndarray, m: int) -> list[int]:
    """Column positions of the m best scores, earlier position on ties."""
    if m > matrix.n_cols:
        raise SelectionError(f"cannot pick {m} from {matrix.n_cols} candidates")
    positions = np.arange(matrix.n_cols)
    order = np.lexsort((positions, -scores))
    return [int(j) for j in order[:m]]


def similarity_stage(
    matrix: SimilarityMatrix, k: int, x: int, m: int
) -> list[tuple[str, float, str]]:
    """Top-m candidates by accumulated rank credit."""
    scores = _sum_rank_array(matrix, k, x)
    rule = f"sum_rank(k={k},x={x})"
    return [
        (matrix.col_ids[j], float(scores[j]), rule) for j in _top_columns(matrix, scores, m)
    ]


def _best_rank_in(matrix: SimilarityMatrix, d1_pos: Sequence[int]) -> np.ndarray:
    """Per row: rank of the best-placed member of the reference columns.

    Rows where no reference column is rankable (the only reference is the
    row's own masked self pair) get the sentinel n_cols + 1, which sorts as
    weaker than any real rank.
    """
    n_rows, n_cols = matrix.n_rows, matrix.n_cols
    sentinel = n_cols + 1
    ranks = np.full(n_rows, sentinel, dtype=np.int64)
    d1 = np.asarray(d1_pos, dtype=np.intp)
    for i in range(n_rows):
        row = matrix.scores[i]
        cand = row[d1]
        ok = ~np.isnan(cand)
        if not ok.any():
            continue
        # best reference candidate: highest score, earliest position on ties
        sub = d1[ok]
        best_local = sub[np.lexsort((sub, -row[sub]))][0]
        s = row[best_local]
        unmasked = ~np.isnan(row)
        better = int(np.sum(row[unmasked] > s))
        equal_before = int(
            np.sum((row[unmasked] == s) & (np.flatnonzero(unmasked) < best_local))
        )
        ranks[i] = 1 + better + equal_before
    return ranks


def weak_test_points(
    matrix: SimilarityMatrix, d1_ids: Sequence[str], m: int
) -> list[tuple[str, int]]:
    """The m query rows served worst by the reference pool: (row_id, rank).

    A row's rank records where the best-placed reference sample sits in that
    row's full ranked candidate list; larger means weaker. Rows sort by
    descending rank, earlier dataset position on ties.
    """
    if not d1_ids:
        raise SelectionError("weak_test_points needs a non-empty reference pool")
    col_index = matrix.col_index
    d1_pos = []
    for s in d1_ids:
        if s not in col_index:
            raise SelectionError(f"reference id {s!r} is not a matrix column")
        d1_pos.append(col_index[s])
    if m > matrix.n_rows:
        raise SelectionError(f"cannot take {m} weak rows from {matrix.n_rows}")
    ranks = _best_rank_in(matrix, d1_pos)
    rows = np.arange(matrix.n_rows)
    order = np.lexsort((rows, -ranks))
    return [(matrix.row_ids[int(i)], int(ranks[int(i)])) for i in order[:m]]


def uncertainty_stage(
    matrix: SimilarityMatrix, d1_ids: Sequence[str], k: int, x: int, m: int
) -> list[tuple[str, float, str]]:
    """Reapply rank scoring on the weakest query rows.

    The matrix is cut down to the m weakest rows with the reference columns
    removed, and the top m candidates by rank credit are returned.
    """
    if m == 0:
        return []
    if m > matrix.n_cols - len(d1_ids):
        raise SelectionError(
            f"cannot pick {m} from {matrix.n_cols - len(d1_ids)} remaining candidates"
        )
    weak = weak_test_points(matrix, d1_ids, m)
    weak_rows = [w for w, _ in weak]
    row_pos = [matrix.row_index[w] for w in weak_rows]
    narrowed = SimilarityMatrix(
        row_ids=tuple(weak_rows),
        col_ids=matrix.col_ids,
        scores=matrix.scores[row_pos, :].copy(),
        normalized=matrix.normalized,
    )
    narrowed = drop_columns(narrowed, d1_ids)
    scores = _sum_rank_array(narrowed, k, x)
    rule = f"sum_rank(k={k},x={x}) over {len(weak_rows)} weak rows"
    return [
        (narrowed.col_ids[j], float(scores[j]), rule)
        for j in _top_columns(narrowed, scores, m)
    ]


def _parse_order(order: str) -> list[str]:
    canonical = order.strip().upper()
    if canonical not in VALID_ORDERS:
        raise SelectionError(
            f"unsupported stage order {order!r}; expected one of {', '.join(VALID_ORDERS)}"
        )
    return [STAGE_NAMES[ch] for ch in canonical.split("-")]


def allabel_select(
    dataset: Dataset,
    matrix: SimilarityMatrix,
    m: int,
    config: SelectionConfig = SelectionConfig(),
) -> SelectionResult:
    """Run the staged pipeline and return picks with a full audit trace.

    The matrix starts square over the dataset; before each diversity or
    similarity stage the columns of everything already selected are dropped.
    An uncertainty stage instead receives the matrix as the previous stage
    left it, treats the still-present freshly selected columns as its
    reference pool, and drops them itself after locating the weak rows.
    """
    if tuple(matrix.row_ids) != dataset.ids:
        raise SelectionError("matrix rows do not match the dataset sample order")
    if matrix.row_ids != matrix.col_ids:
        raise SelectionError("allabel_select needs the full square matrix")
    if m > matrix.n_rows:
        raise SelectionError(f"budget M={m} exceeds corpus size {matrix.n_rows}")
    if not matrix.normalized:
        matrix = normalize(matrix)

    budget = split_budget(m, config.proportion)
    m_sim = budget.size_of("similarity")
    k = config.k
    if k < 1:
        raise SelectionError("k must be at least 1")
    x = config.x if config.x is not None else (m_sim if m_sim > k else k + 1)
    if x <= k:
        raise SelectionError(f"x={x} must exceed k={k}")

    full = matrix
    current = matrix
    selected: list[str] = []
    dropped: set[str] = set()
    stages: list[StageResult] = []
    trace: list[TraceEntry] = []

    def catch_up_drop() -> None:
        nonlocal current
        pending = [s for s in selected if s not in dropped]
        if pending:
            current = drop_columns(current, pending)
            dropped.update(pending)

    for stage_name in _parse_order(config.order):
        size = budget.size_of(stage_name)
        if size == 0:
            stages.append(StageResult(stage_name, ()))
            continue
        if stage_name == "diversity":
            catch_up_drop()
            picks = diversity_stage(full, size, selected=selected, candidates=current.col_ids)
        elif stage_name == "similarity":
            catch_up_drop()
            picks = similarity_stage(current, k, x, size)
        else:
            d1 = [s for s in selected if s not in dropped]
            if not d1:
                raise SelectionError(
                    "uncertainty stage has no freshly selected reference pool; "
                    "run a similarity or diversity stage before it"
                )
            picks = uncertainty_stage(current, d1, k, x, size)
        ids = tuple(p[0] for p in picks)
        stages.append(StageResult(stage_name, ids))
        for n, (pid, score, rule) in enumerate(picks, start=1):
            trace.append(TraceEntry(stage_name, n, pid, score, rule))
        selected.extend(ids)

    if len(selected) != m or len(set(selected)) != m:
        raise SelectionError("stage outputs overlap or do not sum to the budget")
    return SelectionResult(budget=budget, stages=tuple(stages), trace=tuple(trace))


def random_select(dataset: Dataset, m: int, seed: int) -> SelectionResult:
    """Uniform draw without replacement from a seeded generator."""
    n = len(dataset)
    if not 1 <= m <= n:
        raise SelectionError(f"budget M={m} must lie in [1, {n}]")
    rng = random.Random(seed)
    ids = rng.sample(list(dataset.ids), m)
    rule = f"uniform(seed={seed})"
    trace = tuple(TraceEntry("random", i, sid, None, rule) for i, sid in enumerate(ids, 1))
    return SelectionResult(
        budget=Budget(m=m), stages=(StageResult("random", tuple(ids)),), trace=trace
    )


def coldstart_coreset(matrix: SimilarityMatrix, m: int, seed: int) -> SelectionResult:
    """Greedy max-min core set whose first pick is drawn at random."""
    if matrix.row_ids != matrix.col_ids:
        raise SelectionError("coldstart_coreset needs the full square matrix")
    n = matrix.n_rows
    if not 1 <= m <= n:
        raise SelectionError(f"budget M={m} must lie in [1, {n}]")
    if not matrix.normalized:
        matrix = normalize(matrix)
    rng = random.Random(seed)
    first = matrix.row_ids[rng.randrange(n)]
    rest = diversity_stage(matrix, m - 1, selected=[first])
    ids = (first,) + tuple(p[0] for p in rest)
    trace = [TraceEntry("coreset_cold", 1, first, None, f"coldstart(seed={seed})")]
    for i, (pid, score, rule) in enumerate(rest, start=2):
        trace.append(TraceEntry("coreset_cold", i, pid, score, rule))
    return SelectionResult(
        budget=Budget(m=m),
        stages=(StageResult("coreset_cold", ids),),
        trace=tuple(trace),
    )


def perplexity_select(
    dataset: Dataset,
    m: int,
    annotator: "Annotator",
    template: "PromptTemplate",
) -> SelectionResult:
    """Pick the samples whose zero-shot outputs the model is least sure of.

    Every sample gets one zero-shot extraction pass; samples are ordered by
    descending completion perplexity, earlier dataset position on ties.
    """
    from .annotator import perplexity
    from .prompting import assemble_prompt

    n = len(dataset)
    if not 1 <= m <= n:
        raise SelectionError(f"budget M={m} must lie in [1, {n}]")
    scores: list[float] = []
    for sample in dataset.samples:
        prompt = assemble_prompt(template, (), sample.text)
        completion = annotator.annotate_sample(sample, (), prompt)
        scores.append(perplexity(completion))
    order = sorted(range(n), key=lambda i: (-scores[i], i))[:m]
    ids = tuple(dataset.ids[i] for i in order)
    trace = tuple(
        TraceEntry("perplexity", rank, dataset.ids[i], scores[i], "desc_zero_shot_perplexity")
        for rank, i in enumerate(order, start=1)
    )
    return SelectionResult(
        budget=Budget(m=m), stages=(StageResult("perplexity", ids),), trace=trace
    )


def _budget_to_obj(budget: Budget) -> dict:
    obj: dict = {"m": budget.m}
    if budget.proportion is not None:
        obj["proportion"] = list(budget.proportion)
    if budget.stage_sizes is not None:
        obj["stage_sizes"] = dict(budget.stage_sizes)
    return obj


def save_selection(result: SelectionResult, path: str | Path) -> None:
    obj = {
        "budget": _budget_to_obj(result.budget),
        "stages": [{"name": s.name, "ids": list(s.ids)} for s in result.stages],
        "trace": [
            {"stage": t.stage, "pick": t.pick, "id": t.id, "score": t.score, "rule": t.rule}
            for t in result.trace
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, ensure_ascii=False, indent=2)
        fh.write("\n")


def load_selection(path: str | Path) -> SelectionResult:
    """Read a selection file back, checking its internal consistency."""
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc
    try:
        raw_budget = obj["budget"]
        budget = Budget(
            m=int(raw_budget["m"]),
            proportion=(
                tuple(raw_budget["proportion"]) if "proportion" in raw_budget else None
            ),
            stage_sizes=raw_budget.get("stage_sizes"),
        )
        stages = tuple(
            StageResult(str(s["name"]), tuple(str(i) for i in s["ids"]))
            for s in obj["stages"]
        )
        trace = tuple(
            TraceEntry(
                stage=str(t["stage"]),
                pick=int(t["pick"]),
                id=str(t["id"]),
                score=None if t.get("score") is None else float(t["score"]),
                rule=str(t.get("rule", "")),
            )
            for t in obj.get("trace", [])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed selection file: {exc}") from exc

    all_ids: list[str] = []
    for s in stages:
        all_ids.extend(s.ids)
    if len(all_ids) != len(set(all_ids)):
        raise DataError(f"{path}: stages share sample ids")
    if len(all_ids) != budget.m:
        raise DataError(
            f"{path}: stages carry {len(all_ids)} ids but the budget says {budget.m}"
        )
    if budget.stage_sizes is not None:
        for s in stages:
            want = budget.stage_sizes.get(s.name)
            if want is not None and want != len(s.ids):
                raise DataError(
                    f"{path}: stage {s.name!r} has {len(s.ids)} ids, budget says {want}"
                )
    return SelectionResult(budget=budget, stages=stages, trace=trace)
