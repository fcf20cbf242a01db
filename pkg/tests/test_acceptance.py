"""End-to-end acceptance gate.

Each test covers one contract area, prints exactly one ``[PASS]`` or
``[FAIL]`` line on the live terminal, and enforces that area's runtime
budget.  Expected values are the hand-written fixtures from the
per-module suites; nothing below is derived from the code under test.
"""

import contextlib
import itertools
import random
import time

import pytest
import requests

from nlekit.analysis import nle_score, paired_t_test
from nlekit.corpus import Task, attach_nles, load_comve, split_winogrande
from nlekit.engine import (FloorViolationError, ToyBackend, beam_search,
                           greedy_decode, select_winner, train_stage)
from nlekit.formatting import (DatasetSpec, SpecEntry, build_union,
                               canonical_label, format_example, format_input,
                               parse_output)
from nlekit.metrics import bleu_n
from nlekit.recipes import (CriterionKind, RecipeName, SelectionCriterion,
                            build_plan)
from nlekit.service import AnnotationCoordinator, AppendLog, start_server

from conftest import esnli_example, make_split, wg_example
from test_analysis import SCORE_FIXTURES
from test_corpus import make_comve_dir
from test_engine_runner import label_only_stage, point, run_m4, wg_resolver
from test_engine_toy import copy_pairs, exhaustive_best, trained_backend
from test_formatting import random_example
from test_metrics import BLEU_ORACLE_PAIRS
from test_recipes import FEWSHOT_EPOCHS, GOLDEN, stage_signature
from test_service import build_batches, fetch_next, register, submit


@pytest.fixture
def criterion(capsys):
    """Time a block, then print one [PASS]/[FAIL] line even on failure."""
    @contextlib.contextmanager
    def run(name, budget_s):
        notes = []
        failed = False
        start = time.monotonic()
        try:
            yield notes
        except BaseException:
            failed = True
            raise
        finally:
            elapsed = time.monotonic() - start
            status = "FAIL" if failed or elapsed >= budget_s else "PASS"
            detail = f" - {'; '.join(notes)}" if notes else ""
            with capsys.disabled():
                print(f"[{status}] {name}{detail} "
                      f"({elapsed:.3f}s, budget {budget_s:g}s)")
        assert elapsed < budget_s, f"{name} overran {budget_s:g}s"
    return run


def test_weighted_rating_score_rows(criterion):
    with criterion("rating-score arithmetic", 0.5) as notes:
        assert len(SCORE_FIXTURES) == 16
        for name, (yes, weak_yes, weak_no, no), expected in SCORE_FIXTURES:
            got = nle_score({"yes": yes, "weak_yes": weak_yes,
                             "weak_no": weak_no, "no": no})
            assert got == pytest.approx(expected, abs=0.1), name
        notes.append("16/16 rows within 0.1")


def test_training_plan_golden_suite(criterion):
    with criterion("training-plan compilation", 1.0) as notes:
        assert len(GOLDEN) == 16
        for (recipe_name, child), expected in GOLDEN.items():
            plan = build_plan(RecipeName[recipe_name], Task(child))
            got = [stage_signature(s) for s in plan.stages]
            assert got == expected, (recipe_name, child)
            assert all(s.grid.batch_size == 16 for s in plan.stages)
        assert FEWSHOT_EPOCHS == (1, 2, 3, 5, 7, 10, 13, 17, 21, 26)
        floored = build_plan(RecipeName.CD_UNION, Task.COMVE)
        assert floored.stages[0].criterion.accuracy_floor == 0.75
        notes.append("16/16 plans match golden fixtures, batch size 16")


def test_dataset_construction_sizes(criterion, tmp_path):
    with criterion("dataset construction", 10.0) as notes:
        raw = make_split("train", [wg_example(i) for i in range(40_398)])
        train, dev = split_winogrande(raw, seed=1)
        assert (len(train), len(dev)) == (39_130, 1_268)
        assert train.ids().isdisjoint(dev.ids())
        assert train.ids() | dev.ids() == raw.ids()

        splits = load_comve(make_comve_dir(tmp_path, sizes=(100, 10, 10)))
        assert [len(splits[s]) for s in ("train", "dev", "test")] == \
            [100, 10, 10]
        for split in splits.values():
            for e in split:
                assert e.fields["statement1"] and e.fields["statement2"]
                assert e.label in ("1", "2")
                assert len(e.nles) >= 1
        assert all(len(e.nles) == 3 for e in splits["test"])

        sizes = {"train": (150, 100), "dev": (60, 50), "test": (120, 100)}
        for name, (n, k) in sizes.items():
            base = make_split(name, [wg_example(i) for i in range(n)])
            annotated = attach_nles(
                base, [(e.id, f"why {e.id}") for e in base.examples[:k]])
            assert sum(1 for e in annotated if e.nles) == k
        notes.append("39,130/1,268 re-split; merged fields; 100/50/100 "
                     "attached")


def test_formatting_round_trip_laws(criterion):
    with criterion("formatting round trip", 5.0) as notes:
        rng = random.Random(414243)
        for i in range(1_000):
            e = random_example(rng, i)
            pair = format_example(e, True)
            assert parse_output(pair.target_text, e.task) == \
                (canonical_label(e), e.nles[0])
            assert pair.input_text == \
                "explain " + format_input(e, False)
            bare = format_example(e, False)
            assert " explanation: " not in bare.target_text
            assert parse_output(bare.target_text, e.task) == \
                (canonical_label(e), "")
        a = make_split("a", [esnli_example(i) for i in range(9)])
        b = make_split("b", [wg_example(i, nles=("w",)) for i in range(6)])
        union = build_union(
            DatasetSpec((SpecEntry(a, True), SpecEntry(b, True))), seed=3)
        assert len(union) == 15
        notes.append("1,000 round trips; prefix law; union cardinality")


def test_engine_desk_scale_suite(criterion, tmp_path):
    with criterion("engine desk-scale suite", 300.0) as notes:
        # (a) beam width 1 is greedy; width 5 is exhaustively optimal
        lm = trained_backend(copy_pairs(("alpha", "beta", "gamma", "delta")))
        for probe in ("alpha beta", "beta gamma", "delta delta"):
            one = beam_search(lm, probe, width=1, max_len=6)
            greedy = greedy_decode(lm, probe, max_len=6)
            assert (one.text, one.token_ids) == \
                (greedy.text, greedy.token_ids)
            assert one.logprob == pytest.approx(greedy.logprob, abs=1e-12)
        small = trained_backend(copy_pairs(("a", "b")))
        assert small.vocab_size <= 6
        for probe in ("a", "b", "a b", "b b"):
            for max_len in (1, 2, 3, 4):
                best_lp, best_tokens = exhaustive_best(small, probe, max_len)
                got = beam_search(small, probe, width=5, max_len=max_len)
                assert got.token_ids == best_tokens, (probe, max_len)
                assert got.logprob == pytest.approx(best_lp, abs=1e-9)

        # (b) full grid coverage; floor and tie-break in winner selection
        resolver = wg_resolver()
        stage = label_only_stage(resolver.splits["child/train"],
                                 lrs=(0.01, 0.1, 0.4), epochs=(1, 2))
        results = train_stage(ToyBackend(), stage, None, seed=5,
                              resolver=resolver, beam_width=1, max_len=6)
        assert [(r.lr, r.epochs) for r in results] == \
            [(lr, ep) for lr in (0.01, 0.1, 0.4) for ep in (1, 2)]
        floor = SelectionCriterion(CriterionKind.CHILD_DEV_NLE_PERPLEXITY,
                                   accuracy_floor=0.75)
        assert select_winner([point(3e-5, 1, 2.0, 0.5),
                              point(1e-4, 1, 9.0, 0.8)], floor).lr == 1e-4
        with pytest.raises(FloorViolationError):
            select_winner([point(3e-5, 1, 2.0, 0.5)], floor)
        tie = SelectionCriterion(CriterionKind.CHILD_DEV_NLE_PERPLEXITY)
        assert select_winner([point(1e-4, 5, 4.0), point(1e-4, 2, 4.0),
                              point(3e-5, 7, 4.0)], tie).lr == 3e-5

        # (c) a separable task is solved; the staged run reproduces
        sep = label_only_stage(resolver.splits["child/train"],
                               lrs=(0.4,), epochs=(2, 80))
        best = select_winner(
            train_stage(ToyBackend(), sep, None, seed=3, resolver=resolver,
                        beam_width=2, max_len=6), sep.criterion)
        assert best.accuracy == pytest.approx(1.0)
        final_a, _ = run_m4(tmp_path / "a")
        final_b, _ = run_m4(tmp_path / "b")
        assert (tmp_path / "a" / "manifest.json").read_bytes() == \
            (tmp_path / "b" / "manifest.json").read_bytes()
        assert final_a == final_b
        notes.append("decode exact; 6/6 grid points; floor and tie-break; "
                     "100% dev accuracy; byte-identical reruns")


def test_ngram_precision_reference_oracle(criterion):
    with criterion("sentence-score oracle", 5.0) as notes:
        assert len(BLEU_ORACLE_PAIRS) == 20
        for cand, refs, expected in BLEU_ORACLE_PAIRS:
            for n in (1, 2, 3, 4):
                assert bleu_n(cand, refs, n) == \
                    pytest.approx(expected[n - 1], abs=1e-6), (cand, n)
        text = "an identity pair scores one hundred"
        assert all(bleu_n(text, [text], n) == pytest.approx(100.0)
                   for n in (1, 2, 3, 4))
        assert bleu_n("the the the", ["the cat"], 1) == \
            pytest.approx(100.0 / 3.0, abs=1e-6)
        notes.append("20 pairs at 1e-6; identity 100; clipped unigram")


def test_paired_t_test_oracle(criterion):
    with criterion("paired t-test oracle", 1.0) as notes:
        result = paired_t_test([2, 4, 6, 8, 10], [1, 2, 3, 4, 5])
        assert result.t == pytest.approx(4.243, abs=1e-3)
        assert result.p_one_tailed == pytest.approx(0.0066, abs=1e-3)
        same = paired_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert (same.t, same.p_one_tailed) == (0.0, 0.5)
        rng = random.Random(4242)
        for _ in range(20):
            n = rng.randint(3, 10)
            a = [rng.random() for _ in range(n)]
            b = [rng.random() for _ in range(n)]
            ab, ba = paired_t_test(a, b), paired_t_test(b, a)
            assert ab.t == pytest.approx(-ba.t, abs=1e-12)
            assert ab.p_one_tailed + ba.p_one_tailed == \
                pytest.approx(1.0, abs=1e-12)
        notes.append("t 4.243, p 0.0066; identical (0, 0.5); antisymmetry")


def test_annotation_gates_over_live_service(criterion, tmp_path):
    from test_service import wire_records

    with criterion("annotation gates over live service", 60.0) as notes:
        store_path = str(tmp_path / "events.ndjson")
        store = AppendLog(store_path)
        counter = itertools.count()
        coordinator = AnnotationCoordinator(
            build_batches(20), store,
            token_factory=lambda: f"acc{next(counter)}")
        server, _ = start_server(coordinator, operator_token="op")
        base = f"http://127.0.0.1:{server.server_address[1]}"
        bodies = []
        try:
            # 80% label correctness fails on the right gate
            reg = requests.post(f"{base}/api/annotators", json={"name": "f"})
            bodies.append(reg.text)
            failer = reg.json()["annotator"]
            nxt = fetch_next(base, failer)
            bodies.append(nxt.text)
            batch_id = nxt.json()["batch_id"]
            verdict = submit(base, failer, batch_id, wire_records(
                coordinator.batches[batch_id], bad_labels=2))
            bodies.append(verdict.text)
            assert verdict.status_code == 200
            out = verdict.json()
            assert out["passed"] is False
            assert out["failures"] == ["label_correctness"]
            assert out["label_correct_pct"] == 80.0

            # the re-queued batch passes on exact thresholds: 90/90/80
            reg2 = requests.post(f"{base}/api/annotators", json={"name": "p"})
            bodies.append(reg2.text)
            passer = reg2.json()["annotator"]
            nxt2 = fetch_next(base, passer)
            bodies.append(nxt2.text)
            assert nxt2.json()["batch_id"] == batch_id
            verdict2 = submit(base, passer, batch_id, wire_records(
                coordinator.batches[batch_id],
                bad_labels=1, gold_negatives=1, model_positives=8))
            bodies.append(verdict2.text)
            assert verdict2.status_code == 200
            outcome = verdict2.json()
            assert outcome["passed"] is True
            assert outcome["failures"] == []
            assert outcome["label_correct_pct"] == 90.0
            assert outcome["gold_positive_pct"] == 90.0
            assert outcome["model_positive_pct"] == 80.0

            progress = requests.get(f"{base}/api/progress")
            bodies.append(progress.text)
            # which slot holds the reference text never crosses the wire
            for body in bodies:
                assert "provenance" not in body
                assert "gold_label" not in body
        finally:
            server.shutdown()

        # crash mid-append: recovery keeps whole submissions only
        events_before = len(store.read_all())
        store.close()
        with open(store_path, "ab") as fh:
            fh.write(b'{"event":"submission","batch":"batch-000","rec')
        store = AppendLog(store_path)
        revived = AnnotationCoordinator(
            build_batches(20), store,
            token_factory=lambda: f"acc{next(counter)}")
        assert len(store.read_all()) == events_before
        assert revived.batches[batch_id].accepted_by == {passer}
        assert len(revived.batches[batch_id].rejections) == 1
        server2, _ = start_server(revived, operator_token="op")
        base2 = f"http://127.0.0.1:{server2.server_address[1]}"
        try:
            fresh = register(base2)
            retry_id = fetch_next(base2, fresh).json()["batch_id"]
            final = submit(base2, fresh, retry_id,
                           wire_records(revived.batches[retry_id]))
            assert final.json()["passed"] is True
        finally:
            server2.shutdown()
            store.close()
        notes.append("90/90/80 pass; label gate fails; blind wire; "
                     "torn tail dropped whole")
