"""Exit codes, output contract, and end-to-end subcommand flows."""
from __future__ import annotations

import json

import pytest

from allabel import ResultsLog, load_annotations, load_dataset, prompt_hash
from allabel.annotator import Completion
from allabel.cli import main


def run_ok(argv: list[str], capsys) -> dict:
    code = main(argv)
    out = capsys.readouterr().out
    assert code == 0, out
    lines = out.strip().splitlines()
    assert len(lines) == 1, "stdout must carry exactly one summary line"
    return json.loads(lines[0])


def run_fail(argv: list[str], capsys) -> tuple[int, str]:
    code = main(argv)
    captured = capsys.readouterr()
    assert captured.out == "", "failures must not print a summary"
    return code, captured.err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus"
    assert main(["synth", "--out-dir", str(corpus), "--n", "18", "--clusters", "3"]) == 0
    paths = {
        "root": root,
        "samples": corpus / "samples.jsonl",
        "schema": corpus / "schema.json",
        "gold": corpus / "gold.jsonl",
        "matrix": root / "matrix.alsm",
    }
    assert main(
        [
            "similarity",
            "--samples", str(paths["samples"]),
            "--schema", str(paths["schema"]),
            "--normalize",
            "--out", str(paths["matrix"]),
        ]
    ) == 0
    return paths


def corpus_args(ws) -> list[str]:
    return [
        "--samples", str(ws["samples"]),
        "--schema", str(ws["schema"]),
        "--gold", str(ws["gold"]),
    ]


class TestSynth:
    def test_reports_files_and_size(self, tmp_path, capsys):
        summary = run_ok(
            ["synth", "--out-dir", str(tmp_path / "c"), "--n", "12", "--clusters", "2"],
            capsys,
        )
        assert summary["n"] == 12
        assert (tmp_path / "c" / "samples.jsonl").exists()
        assert (tmp_path / "c" / "schema.json").exists()
        assert (tmp_path / "c" / "gold.jsonl").exists()

    def test_same_seed_reproduces_the_corpus(self, tmp_path, capsys):
        for d in ("a", "b"):
            run_ok(
                ["synth", "--out-dir", str(tmp_path / d), "--n", "10", "--clusters", "2"],
                capsys,
            )
        for name in ("samples.jsonl", "schema.json", "gold.jsonl"):
            assert (tmp_path / "a" / name).read_bytes() == (
                tmp_path / "b" / name
            ).read_bytes()


class TestSimilarity:
    def test_summary_shape(self, workspace, tmp_path, capsys):
        out = tmp_path / "m.alsm"
        summary = run_ok(
            [
                "similarity",
                "--samples", str(workspace["samples"]),
                "--schema", str(workspace["schema"]),
                "--out", str(out),
            ],
            capsys,
        )
        assert summary["rows"] == summary["cols"] == 18
        assert summary["normalized"] is False
        assert out.exists()

    def test_debug_dump_on_request(self, workspace, tmp_path, capsys):
        debug = tmp_path / "m.json"
        run_ok(
            [
                "similarity",
                "--samples", str(workspace["samples"]),
                "--schema", str(workspace["schema"]),
                "--out", str(tmp_path / "m.alsm"),
                "--debug-json", str(debug),
            ],
            capsys,
        )
        assert json.loads(debug.read_text(encoding="utf-8"))["row_ids"]

    def test_dense_backend_needs_vectors(self, workspace, tmp_path, capsys):
        code, err = run_fail(
            [
                "similarity",
                "--samples", str(workspace["samples"]),
                "--schema", str(workspace["schema"]),
                "--backend", "dense",
                "--out", str(tmp_path / "m.alsm"),
            ],
            capsys,
        )
        assert code == 2
        assert "--vectors" in err

    def test_missing_samples_file_names_the_path(self, workspace, tmp_path, capsys):
        code, err = run_fail(
            [
                "similarity",
                "--samples", str(tmp_path / "nowhere.jsonl"),
                "--schema", str(workspace["schema"]),
                "--out", str(tmp_path / "m.alsm"),
            ],
            capsys,
        )
        assert code == 1
        assert "nowhere.jsonl" in err


class TestSelect:
    def select_args(self, ws, tmp_path, *extra: str) -> list[str]:
        return [
            "select", *corpus_args(ws),
            "--matrix", str(ws["matrix"]),
            "-m", "6",
            "--out", str(tmp_path / "selection.json"),
            *extra,
        ]

    def test_staged_selection_summary(self, workspace, tmp_path, capsys):
        summary = run_ok(self.select_args(workspace, tmp_path), capsys)
        assert summary["strategy"] == "allabel"
        assert summary["m"] == 6
        assert summary["stages"] == {"diversity": 1, "similarity": 4, "uncertainty": 1}
        assert len(summary["selected"]) == 6

    def test_repeat_invocations_write_identical_files(self, workspace, tmp_path, capsys):
        run_ok(self.select_args(workspace, tmp_path), capsys)
        first = (tmp_path / "selection.json").read_bytes()
        run_ok(self.select_args(workspace, tmp_path), capsys)
        assert (tmp_path / "selection.json").read_bytes() == first

    def test_random_needs_a_seed(self, workspace, tmp_path, capsys):
        code, err = run_fail(
            self.select_args(workspace, tmp_path, "--strategy", "random"), capsys
        )
        assert code == 2
        assert "--seed" in err

    def test_coreset_needs_a_seed(self, workspace, tmp_path, capsys):
        code, _ = run_fail(
            self.select_args(workspace, tmp_path, "--strategy", "coreset"), capsys
        )
        assert code == 2

    @pytest.mark.parametrize("strategy", ["allabel", "perplexity"])
    def test_deterministic_strategies_refuse_a_seed(
        self, strategy, workspace, tmp_path, capsys
    ):
        code, err = run_fail(
            self.select_args(workspace, tmp_path, "--strategy", strategy, "--seed", "1"),
            capsys,
        )
        assert code == 2
        assert "deterministic" in err

    def test_staged_selection_needs_the_matrix(self, workspace, tmp_path, capsys):
        code, err = run_fail(
            [
                "select", *corpus_args(workspace),
                "-m", "6",
                "--out", str(tmp_path / "s.json"),
            ],
            capsys,
        )
        assert code == 2
        assert "--matrix" in err

    def test_budget_beyond_corpus_fails_cleanly(self, workspace, tmp_path, capsys):
        code, err = run_fail(
            [
                "select", *corpus_args(workspace),
                "--matrix", str(workspace["matrix"]),
                "-m", "99",
                "--out", str(tmp_path / "s.json"),
            ],
            capsys,
        )
        assert code == 1
        assert "99" in err

    def test_random_with_seed_summarizes(self, workspace, tmp_path, capsys):
        summary = run_ok(
            self.select_args(workspace, tmp_path, "--strategy", "random", "--seed", "5"),
            capsys,
        )
        assert summary["stages"] == {"random": 6}

    def test_perplexity_runs_on_the_simulator(self, workspace, tmp_path, capsys):
        summary = run_ok(
            self.select_args(workspace, tmp_path, "--strategy", "perplexity"), capsys
        )
        assert summary["stages"] == {"perplexity": 6}

    def test_perplexity_on_simulator_needs_gold(self, workspace, tmp_path, capsys):
        code, err = run_fail(
            [
                "select",
                "--samples", str(workspace["samples"]),
                "--schema", str(workspace["schema"]),
                "--strategy", "perplexity",
                "-m", "4",
                "--out", str(tmp_path / "s.json"),
            ],
            capsys,
        )
        assert code == 2
        assert "--gold" in err


@pytest.fixture(scope="module")
def selection(workspace):
    path = workspace["root"] / "selection.json"
    assert main(
        [
            "select", *corpus_args(workspace),
            "--matrix", str(workspace["matrix"]),
            "-m", "6",
            "--out", str(path),
        ]
    ) == 0
    return path


class TestAnnotate:
    def annotate_args(self, ws, selection, out, *extra: str) -> list[str]:
        return [
            "annotate", *corpus_args(ws),
            "--matrix", str(ws["matrix"]),
            "--selection", str(selection),
            "--out", str(out),
            *extra,
        ]

    def test_perfect_simulator_reproduces_gold(self, workspace, selection, tmp_path, capsys):
        out = tmp_path / "pred.jsonl"
        summary = run_ok(
            self.annotate_args(
                workspace, selection, out, "--alpha0", "1.0", "--beta", "0.0"
            ),
            capsys,
        )
        assert summary["annotated"] == 18
        assert summary["failed"] == 0
        dataset = load_dataset(workspace["samples"], workspace["schema"], workspace["gold"])
        predictions = load_annotations(out, dataset.schema, {s.id: s for s in dataset.samples})
        for sid, gold in dataset.gold.items():
            assert predictions[sid].annotations == gold.annotations

    def test_results_log_caches_repeat_runs(self, workspace, selection, tmp_path, capsys):
        out = tmp_path / "pred.jsonl"
        log = tmp_path / "log.jsonl"
        run_ok(
            self.annotate_args(workspace, selection, out, "--log", str(log)), capsys
        )
        first = log.read_bytes()
        run_ok(
            self.annotate_args(workspace, selection, out, "--log", str(log)), capsys
        )
        assert log.read_bytes() == first
        assert len(first.splitlines()) == 18

    def test_short_pool_warns_but_succeeds(self, workspace, selection, tmp_path, capsys, caplog):
        out = tmp_path / "pred.jsonl"
        with caplog.at_level("WARNING", logger="allabel.cli"):
            summary = run_ok(
                self.annotate_args(workspace, selection, out, "--shots", "9"), capsys
            )
        assert summary["annotated"] == 18
        assert any("fewer than 9" in r.getMessage() for r in caplog.records)

    def test_replay_gaps_go_to_an_error_sidecar(self, workspace, selection, tmp_path, capsys):
        log = tmp_path / "recorded.jsonl"
        ResultsLog(log).append(
            "s0000", "live:m", prompt_hash("a prompt that never matches"),
            Completion(text="[]"), None,
        )
        out = tmp_path / "pred.jsonl"
        summary = run_ok(
            self.annotate_args(
                workspace, selection, out, "--annotator", "replay", "--replay-log", str(log)
            ),
            capsys,
        )
        assert summary["failed"] == 18
        assert summary["annotated"] == 0
        sidecar = tmp_path / "pred.jsonl.errors.jsonl"
        assert summary["errors"] == str(sidecar)
        lines = sidecar.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 18
        assert json.loads(lines[0])["id"] == "s0000"

    def test_missing_selection_file_fails_cleanly(self, workspace, tmp_path, capsys):
        code, err = run_fail(
            self.annotate_args(workspace, tmp_path / "ghost.json", tmp_path / "p.jsonl"),
            capsys,
        )
        assert code == 1
        assert "ghost.json" in err


class TestEvaluate:
    def test_gold_scores_one_against_itself(self, workspace, selection, tmp_path, capsys):
        out_dir = tmp_path / "eval"
        summary = run_ok(
            [
                "evaluate", *corpus_args(workspace),
                "--predictions", str(workspace["gold"]),
                "--selection", str(selection),
                "--out-dir", str(out_dir),
            ],
            capsys,
        )
        assert summary["dataset_f1"] == 1.0
        assert summary["n_evaluated"] == 18
        report = json.loads((out_dir / "report.json").read_text(encoding="utf-8"))
        assert report["pool_size"] == 6
        per_type = (out_dir / "per_type.csv").read_text(encoding="utf-8").splitlines()
        assert per_type[0] == "entity_type,tp,fp,tn,fn,mean_f1,pooled_f1"
        assert len(per_type) == 5
        assert (out_dir / "per_type_f1.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_empty_predictions_rejected(self, workspace, tmp_path, capsys):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("", encoding="utf-8")
        code, err = run_fail(
            [
                "evaluate", *corpus_args(workspace),
                "--predictions", str(empty),
                "--out-dir", str(tmp_path / "eval"),
            ],
            capsys,
        )
        assert code == 1
        assert "missing" in err

    def test_pooled_aggregation_flag(self, workspace, tmp_path, capsys):
        summary = run_ok(
            [
                "evaluate", *corpus_args(workspace),
                "--predictions", str(workspace["gold"]),
                "--aggregation", "pooled",
                "--out-dir", str(tmp_path / "eval"),
            ],
            capsys,
        )
        assert summary["aggregation"] == "pooled"


class TestBenchmark:
    def test_smoke_run_emits_reports(self, tmp_path, capsys):
        config = tmp_path / "config.yaml"
        config.write_text(
            "corpus:\n  synthetic: {n: 15, clusters: 3, seed: 3}\n"
            "strategies: [allabel, random]\n"
            "pools: [5]\n"
            "runs: 2\n"
            "annotator: {kind: sim, alpha0: 1.0, beta: 0.0}\n",
            encoding="utf-8",
        )
        run_dir = tmp_path / "bench"
        summary = run_ok(
            ["benchmark", "--config", str(config), "--run-dir", str(run_dir)], capsys
        )
        assert summary["cells"] == 4
        assert summary["completed"] == 4
        assert (run_dir / "table.csv").exists()
        assert (run_dir / "f1_vs_pool_k3.png").exists()


class TestParserContract:
    def test_missing_subcommand_is_usage_error(self, capsys):
        assert main([]) == 2

    def test_unknown_flag_is_usage_error(self, capsys):
        assert main(["synth", "--bogus"]) == 2

    def test_missing_required_flag_is_usage_error(self, capsys):
        assert main(["similarity", "--samples", "x.jsonl"]) == 2
