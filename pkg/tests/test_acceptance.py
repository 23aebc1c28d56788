"""Acceptance gate: ten end-to-end checks, one printed verdict line each.

Each test prints "acceptance N <label>: PASS/FAIL" straight to the terminal
(bypassing capture) and then asserts, so a full run shows exactly ten
verdict lines.
"""
from __future__ import annotations

import math
import random
import subprocess
import sys
import time
from types import SimpleNamespace

import pytest

import oracles
from conftest import dataset_for, ids_for, matrix_from_rows, random_grid_rows
from allabel import (
    Bm25Backend,
    Completion,
    Dataset,
    DatasetSchema,
    Demonstration,
    EntityRecord,
    EntityType,
    ExperimentConfig,
    MatchCounts,
    Sample,
    SelectionConfig,
    allabel_select,
    annotate_with_pool,
    build_environment,
    build_index,
    build_matrix,
    bm25_score,
    classify,
    coldstart_coreset,
    convergence_fraction,
    drop_columns,
    make_clustered_corpus,
    normalize,
    parse_output,
    perplexity,
    random_select,
    ranked,
    render_annotations,
    run_benchmark,
    save_selection,
    score,
    split_budget,
    sum_rank_scores,
    tokenize,
    weak_test_points,
)
from allabel.annotator import SimulatedModel, simulated_annotate


@pytest.fixture
def verdict(capsys):
    def emit(number: int, label: str, ok: bool, detail: str = "") -> None:
        line = f"acceptance {number:2d} {label}: {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f"  [{detail}]"
        with capsys.disabled():
            print(line)
        assert ok, line

    return emit


def test_01_staged_selection_matches_bruteforce_oracles(verdict):
    t0 = time.perf_counter()
    rng = random.Random(20240819)
    pipelines = 0
    for case in range(100):
        n = rng.randrange(4, 13)
        rows = random_grid_rows(rng, n, rng.choice([4, 16]))
        ids = ids_for(n)
        matrix = matrix_from_rows(rows, ids, ids)
        dataset = dataset_for(ids)
        all_cols = list(range(n))
        extra_order = ("S-D-U", "S-U-D")[case % 2]
        for m in range(3, n + 1):
            result = allabel_select(dataset, matrix, m)
            sizes = result.budget.stage_sizes
            md, ms, mu = (sizes[s] for s in ("diversity", "similarity", "uncertainty"))
            assert (md, ms, mu) == oracles.split(m, (1, 3, 1))
            assert {s.name: list(s.ids) for s in result.stages} == oracles.allabel(
                ids, rows, m
            )
            x = ms if ms > 3 else 4

            div_ids = list(result.stages[0].ids)
            if md:
                assert div_ids[0] == ids[oracles.seed_index(rows)]
                assert div_ids == [
                    ids[i] for i in oracles.diversity_picks(rows, md, [], all_cols)
                ]

            remaining = drop_columns(matrix, div_ids)
            cur_cols = [j for j in all_cols if ids[j] not in set(div_ids)]
            cur_rows = [[rows[i][j] for j in cur_cols] for i in range(n)]
            table = sum_rank_scores(remaining, 3, x)
            oracle_table = oracles.sum_rank(cur_rows, 3, x)
            assert [table[ids[j]] for j in cur_cols] == oracle_table

            sim_ids = list(result.stages[1].ids)
            assert sim_ids == [
                ids[cur_cols[j]] for j in oracles.top_by_score(oracle_table, ms)
            ]

            if mu:
                ref = [cur_cols.index(ids.index(s)) for s in sim_ids]
                weak = weak_test_points(remaining, sim_ids, mu)
                assert [w for w, _ in weak] == [
                    ids[i] for i in oracles.weak_rows(cur_rows, ref, mu)
                ]
                for row_id, rank in weak:
                    assert rank == oracles.best_rank(cur_rows[ids.index(row_id)], ref)

            other = allabel_select(dataset, matrix, m, SelectionConfig(order=extra_order))
            assert {s.name: list(s.ids) for s in other.stages} == oracles.allabel(
                ids, rows, m, extra_order
            )
            pipelines += 2
    elapsed = time.perf_counter() - t0
    verdict(
        1,
        "staged selection equals brute force",
        elapsed < 60.0,
        f"{pipelines} pipelines over 100 matrices in {elapsed:.1f}s",
    )


def test_02_selection_is_deterministic(tmp_path, verdict):
    dataset = make_clustered_corpus(n=40, clusters=5, seed=11)
    staged, rand, coreset = set(), set(), set()
    matrix = None
    for i in range(10):
        workers = 4 if i == 5 else 1
        matrix = normalize(build_matrix(dataset, Bm25Backend(dataset), max_workers=workers))
        path = tmp_path / f"staged{i}.json"
        save_selection(allabel_select(dataset, matrix, 10), path)
        staged.add(path.read_bytes())
        path = tmp_path / f"random{i}.json"
        save_selection(random_select(dataset, 10, 42), path)
        rand.add(path.read_bytes())
        path = tmp_path / f"coreset{i}.json"
        save_selection(coldstart_coreset(matrix, 10, 42), path)
        coreset.add(path.read_bytes())
    verdict(
        2,
        "repeat runs write identical files",
        len(staged) == 1 and len(rand) == 1 and len(coreset) == 1,
        "10 runs per strategy, one with a 4-worker matrix build",
    )


FROZEN_DOCS = {
    "d1": "silver nitrate dissolved in water",
    "d2": "copper sulfate in ethanol",
}
FROZEN_SCORES = {
    ("silver nitrate in water", "d1"): 2.154060093784562,
    ("silver nitrate in water", "d2"): 0.19191742820416272,
    ("copper sulfate", "d1"): 0.0,
    ("copper sulfate", "d2"): 1.4592572222314637,
}


def test_03_bm25_fixture_and_ranked_lists(verdict):
    dataset = Dataset(
        schema=dataset_for(["x"]).schema,
        samples=tuple(Sample(id=d, text=t) for d, t in FROZEN_DOCS.items()),
    )
    index = build_index(dataset)
    worst_rel = 0.0
    for (query, doc), expected in FROZEN_SCORES.items():
        got = bm25_score(index, tokenize(query), doc)
        if expected == 0.0:
            assert got == 0.0
        else:
            rel = abs(got - expected) / abs(expected)
            worst_rel = max(worst_rel, rel)
            assert rel <= 1e-12

    corpus = make_clustered_corpus(n=8, clusters=2, seed=3)
    matrix = build_matrix(corpus, Bm25Backend(corpus))
    doc_tokens = [tokenize(s.text) for s in corpus.samples]
    for qi, sample in enumerate(corpus.samples):
        row = [
            float("nan") if d == qi else oracles.bm25(doc_tokens, doc_tokens[qi], d)
            for d in range(len(corpus.samples))
        ]
        oracle_ids = [corpus.ids[j] for j in oracles.ranked_positions(row)]
        lib_ids = [c.id for c in ranked(matrix, sample.id).candidates]
        for k in range(1, len(corpus.samples)):
            assert lib_ids[:k] == oracle_ids[:k]
    verdict(
        3,
        "bm25 matches the frozen fixture and sort oracle",
        True,
        f"fixture worst relative error {worst_rel:.2e}, 8-doc lists agree for all k",
    )


def test_04_rank_credit_literal_cases(verdict):
    scores = [(13 - j) / 16 for j in range(13)]
    matrix = matrix_from_rows(
        [scores], row_ids=["q"], col_ids=[f"c{j + 1:02d}" for j in range(13)]
    )
    table = sum_rank_scores(matrix, k=3, x=12)
    ok = table["c02"] == 1.0 and table["c05"] == 1.0 / 3.0 and table["c13"] == 0.0
    verdict(
        4,
        "rank credit pays 1, 1/3, 0 at ranks 2, 5, 13",
        ok,
        f"k=3 x=12 gave {table['c02']}, {table['c05']}, {table['c13']}",
    )


def test_05_perplexity_closed_forms(verdict):
    def pp(logprobs: list[float]) -> float:
        pairs = tuple(("t", lp) for lp in logprobs)
        return perplexity(Completion(text="t", token_logprobs=pairs))

    cases = [
        (pp([0.0, 0.0, 0.0]), 1.0),
        (pp([math.log(1.0 / 7.0)] * 5), 7.0),
        (pp([-1.0, -2.0, -3.0]), math.exp(2.0)),
    ]
    worst = max(abs(got - want) / want for got, want in cases)
    verdict(
        5,
        "perplexity hits 1, V, and e^2",
        worst <= 1e-12,
        f"worst relative error {worst:.2e}",
    )


def _three_type_fixture() -> tuple[Dataset, dict]:
    def rec(v: str) -> EntityRecord:
        return EntityRecord((("v", v),))

    schema = DatasetSchema(
        (EntityType("A", ("v",)), EntityType("B", ("v",)), EntityType("C", ("v",)))
    )
    gold_cells = {
        "s1": {"A": ("a1",), "B": (), "C": ("c1",)},
        "s2": {"A": (), "B": ("b2",), "C": ("c2",)},
        "s3": {"A": (), "B": (), "C": ()},
        "s4": {"A": ("a4",), "B": (), "C": ("c4",)},
    }
    pred_cells = {
        "s1": {"A": ("a1",), "B": (), "C": ()},
        "s2": {"A": ("zz",), "B": ("b2",), "C": ("c2",)},
        "s3": {"A": (), "B": (), "C": ()},
        "s4": {"A": (), "B": ("qq",), "C": ("c4",)},
    }
    samples = {sid: Sample(id=sid, text=f"text {sid}") for sid in gold_cells}

    def annotated(cells):
        from allabel import AnnotatedSample

        return {
            sid: AnnotatedSample(
                samples[sid],
                {t: tuple(rec(v) for v in vals) for t, vals in by_type.items()},
            )
            for sid, by_type in cells.items()
        }

    dataset = Dataset(
        schema=schema,
        samples=tuple(samples[s] for s in sorted(samples)),
        gold=annotated(gold_cells),
    )
    return dataset, annotated(pred_cells)


def test_06_f1_rules_and_aggregation(verdict):
    r = EntityRecord((("v", "x"),))
    other = EntityRecord((("v", "y"),))
    outcomes = (
        classify((r,), (r,)) == MatchCounts(tp=1),
        classify((), (r,)) == MatchCounts(fp=1),
        classify((r,), (other,)) == MatchCounts(fp=1),
        classify((), ()) == MatchCounts(tn=1),
        classify((r,), ()) == MatchCounts(fn=1),
    )
    dataset, predictions = _three_type_fixture()
    report = score(dataset, predictions, dataset.ids, "mean")
    expected_samples = {"s1": 2 / 3, "s2": 2 / 3, "s3": 1.0, "s4": 1 / 3}
    expected_types = {"A": 0.5, "B": 0.75, "C": 0.75}
    tol = 1e-12
    agg_ok = (
        abs(report.dataset_f1 - 2 / 3) <= tol
        and all(abs(report.per_sample[s] - v) <= tol for s, v in expected_samples.items())
        and all(abs(report.per_type_mean[t] - v) <= tol for t, v in expected_types.items())
    )
    verdict(
        6,
        "match classification and mean-of-means agree with hand computation",
        all(outcomes) and agg_ok,
        f"dataset f1 {report.dataset_f1:.12f} vs 0.666666666667",
    )


def test_07_simulated_accuracy_and_perplexity_track_similarity(verdict):
    t0 = time.perf_counter()
    dataset = make_clustered_corpus()
    schema, gold = dataset.schema, dataset.gold
    model = SimulatedModel(alpha0=0.3, beta=0.6, seed=0)
    rendered = {sid: render_annotations(g.annotations, schema) for sid, g in gold.items()}
    samples = dataset.samples
    n = len(samples)
    trials_per_bin = 1000
    centers = [0.05 + 0.1 * b for b in range(10)]
    accuracy, mean_pp = [], []
    for center in centers:
        good = cells = 0
        pp_sum = 0.0
        for t in range(trials_per_bin):
            query = samples[t % n]
            demo_idx = [
                (t % n + 1 + t % 37) % n,
                (t % n + 53 + t % 89) % n,
                (t % n + 131 + t % 59) % n,
            ]
            demos = [
                Demonstration(
                    id=samples[j].id,
                    text=samples[j].text,
                    annotation=rendered[samples[j].id],
                    score=center,
                )
                for j in demo_idx
            ]
            completion = simulated_annotate(query, demos, gold[query.id], model, schema)
            parsed = parse_output(completion.text, schema)
            for type_name in schema.type_names:
                c = classify(
                    gold[query.id].annotations.get(type_name, ()),
                    parsed.annotations.get(type_name, ()),
                )
                good += int(c.tp == 1 or c.tn == 1)
                cells += 1
            pp_sum += perplexity(completion)
        accuracy.append(good / cells)
        mean_pp.append(pp_sum / trials_per_bin)
    elapsed = time.perf_counter() - t0
    rising = all(b >= a for a, b in zip(accuracy, accuracy[1:]))
    falling = all(b < a for a, b in zip(mean_pp, mean_pp[1:]))
    verdict(
        7,
        "accuracy rises and perplexity falls with similarity",
        rising and falling and elapsed < 120.0,
        f"accuracy {accuracy[0]:.3f} to {accuracy[-1]:.3f}, "
        f"perplexity {mean_pp[0]:.2f} to {mean_pp[-1]:.2f}, "
        f"{10 * trials_per_bin} trials in {elapsed:.1f}s",
    )


@pytest.fixture(scope="module")
def benchmark_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("bench")
    run_dir = base / "run"
    code = (
        "from allabel import ExperimentConfig, run_benchmark\n"
        f"run_benchmark(ExperimentConfig(), {str(run_dir)!r})\n"
    )
    proc = subprocess.Popen(
        [sys.executable, "-c", code],
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
    )
    log = run_dir / "log.jsonl"
    deadline = time.monotonic() + 120
    while time.monotonic() < deadline and proc.poll() is None:
        if log.exists() and log.stat().st_size > 200_000:
            break
        time.sleep(0.01)
    killed_mid_run = proc.poll() is None
    if killed_mid_run:
        proc.kill()
    proc.wait()
    partial_records = len(log.read_bytes().splitlines()) if log.exists() else 0

    t0 = time.perf_counter()
    table, paths = run_benchmark(ExperimentConfig(), run_dir)
    sweep_seconds = time.perf_counter() - t0
    resumed = {k: p.read_bytes() for k, p in paths.items()}
    records_after_resume = len(log.read_bytes().splitlines())

    _, paths2 = run_benchmark(ExperimentConfig(), run_dir)
    reemitted = {k: p.read_bytes() for k, p in paths2.items()}
    records_after_reemit = len(log.read_bytes().splitlines())

    _, paths3 = run_benchmark(ExperimentConfig(), base / "fresh")
    fresh = {k: p.read_bytes() for k, p in paths3.items()}

    return SimpleNamespace(
        table=table,
        killed_mid_run=killed_mid_run,
        partial_records=partial_records,
        records_after_resume=records_after_resume,
        records_after_reemit=records_after_reemit,
        resumed=resumed,
        reemitted=reemitted,
        fresh=fresh,
        sweep_seconds=sweep_seconds,
    )


def test_08_staged_selection_beats_random_sampling(benchmark_run, verdict):
    t0 = time.perf_counter()
    aggregates = benchmark_run.table.aggregates()
    staged = {a.pool_size: a.mean_f1 for a in aggregates if a.strategy == "allabel"}
    rand = {a.pool_size: a.mean_f1 for a in aggregates if a.strategy == "random"}
    pools = tuple(range(10, 61, 5))
    assert tuple(sorted(staged)) == pools and tuple(sorted(rand)) == pools
    runs = {a.runs for a in aggregates if a.strategy == "random"}
    assert runs == {5}
    margins = {m: staged[m] - rand[m] for m in pools}

    dataset, matrix, annotator, template = build_environment(ExperimentConfig())
    predictions, failures = annotate_with_pool(
        dataset, matrix, dataset.ids, 3, template, annotator
    )
    assert failures == 0
    reference = score(dataset, predictions, dataset.ids, "mean").dataset_f1
    conv_staged = convergence_fraction(sorted(staged.items()), reference, 0.02, len(dataset))
    conv_rand = convergence_fraction(sorted(rand.items()), reference, 0.02, len(dataset))
    never = math.inf
    converges_first = (conv_staged if conv_staged is not None else never) <= (
        conv_rand if conv_rand is not None else never
    )
    elapsed = benchmark_run.sweep_seconds + (time.perf_counter() - t0)
    verdict(
        8,
        "f1 dominates random at every pool size and converges no later",
        all(v >= 0 for v in margins.values())
        and conv_staged is not None
        and converges_first
        and elapsed < 600.0,
        f"worst margin {min(margins.values()):+.4f}, convergence "
        f"{conv_staged}% vs {conv_rand}%, {elapsed:.0f}s",
    )


def test_09_budget_split_matches_exact_apportionment(verdict):
    checked = 0
    for m in range(3, 201):
        for proportion in ((1, 1, 1), (1, 2, 1), (1, 3, 1), (1, 4, 1), (1, 5, 1)):
            budget = split_budget(m, proportion)
            sizes = tuple(
                budget.stage_sizes[s] for s in ("diversity", "similarity", "uncertainty")
            )
            assert sum(sizes) == m
            assert sizes == oracles.split(m, proportion)
            checked += 1
    verdict(9, "budget split matches the exact-fraction oracle", True, f"{checked} splits")


def test_10_benchmark_survives_a_kill_and_reemits_identically(benchmark_run, verdict):
    b = benchmark_run
    completed = all(r.completed for r in b.table.rows)
    resumed_not_restarted = (
        0 < b.partial_records < b.records_after_resume
        and b.records_after_reemit == b.records_after_resume
    )
    identical = b.resumed == b.reemitted and b.resumed == b.fresh
    verdict(
        10,
        "benchmark resumes after a kill and re-emits identical reports",
        b.killed_mid_run
        and completed
        and len(b.table.rows) == 110
        and resumed_not_restarted
        and identical,
        f"killed at {b.partial_records} log records, finished with "
        f"{b.records_after_resume}, {len(b.resumed)} artifacts byte-identical "
        f"across resume, re-emit, and a fresh run",
    )
