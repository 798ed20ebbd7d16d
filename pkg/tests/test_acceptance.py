"""Acceptance checks: one test per shipped guarantee, each printing a verdict line.

Every test exercises its contract end to end and writes a single
``[acceptance] criterion N: PASS/FAIL`` line to the real stdout so the
verdicts survive pytest's capture.
"""

import contextlib
import itertools
import json
import random
import sys
import time
from fractions import Fraction

import pytest

import canon
from conftest import make_answer, make_backends
from ramify.backend import ScriptedBackend, ScriptEntry
from ramify.config import RunConfig
from ramify.engine import (
    parse_breadth_aspects,
    parse_controller_decision,
    parse_depth_question,
)
from ramify.errors import (
    CyclicDependencies,
    MalformedModelOutput,
    MalformedToolInput,
    PlanRejected,
)
from ramify.evalharness import (
    CRITERIA,
    Domain,
    EvalItem,
    Ordering,
    Side,
    criterion_rate,
    derotate,
    dual_comparison,
    evaluate_questions,
    judge_round,
    parse_judge_verdict,
    total_rate,
)
from ramify.executor import (
    ExecutionStatus,
    execute,
    parse_summary,
    parse_validation,
    schedule,
)
from ramify.orchestrator import load_run, persist_run, run
from ramify.planner import check_format, decompose, parse_plan
from ramify.prompter import (
    optimize_query,
    parse_optimize_response,
    parse_recovery_response,
)
from ramify.toolbox import parse_news_input
from ramify.errors import BudgetExceeded
from ramify.tree import NodeOrigin, TerminationCause, add_child, check_termination, new_tree

RAW = "Assess the copper market after the export ban"


@contextlib.contextmanager
def criterion(number, label):
    try:
        yield
    except BaseException:
        print(f"[acceptance] criterion {number}: FAIL - {label}", file=sys.__stdout__, flush=True)
        raise
    print(f"[acceptance] criterion {number}: PASS - {label}", file=sys.__stdout__, flush=True)


# -- 1: growth stops exactly at the node and layer budgets ------------------------------


def test_criterion_1_budget_conformance(library):
    with criterion(1, "node and layer budgets bind exactly"):
        # stock profile, expansion requested until refused: the node budget
        # admits exactly 15 nodes and the 16th request is rejected
        start = time.perf_counter()
        config = RunConfig()
        tree = new_tree("q")
        tree.set_answer("n1", make_answer())
        parents = ["n1"]
        refused = False
        while parents and not refused:
            parent = parents.pop(0)
            if tree.node(parent).layer >= config.max_layer:
                continue
            try:
                child = add_child(tree, parent, f"q{len(tree)}", NodeOrigin.BREADTH, config)
            except BudgetExceeded:
                parents.append(parent)
                refused = True
                break
            tree.set_answer(child, make_answer())
            parents.extend([child, parent])
        assert refused
        assert len(tree) == config.max_nodes == 15
        status = check_termination(tree, config, frontier_size=len(parents))
        assert status.cause is TerminationCause.MAX_NODES_REACHED
        assert time.perf_counter() - start < 1.0

        # unbounded expansion demand through the full run loop: breadth
        # everywhere, layers allowed past the node budget so the node cap is
        # the binding constraint
        start = time.perf_counter()
        record = run(
            RAW,
            make_backends(canon.run_entries(RAW)),
            config=RunConfig(max_layer=4),
            library=library,
            deterministic=True,
        )
        assert time.perf_counter() - start < 1.0
        assert record.metrics["total_nodes"] == 15
        assert record.termination is TerminationCause.MAX_NODES_REACHED

        # same demand under the stock profile: the layer cap binds first and
        # no node ever lands beyond it
        start = time.perf_counter()
        stock = run(
            RAW,
            make_backends(canon.run_entries(RAW)),
            config=RunConfig(),
            library=library,
            deterministic=True,
        )
        assert time.perf_counter() - start < 1.0
        assert stock.termination is TerminationCause.MAX_LAYER_REACHED
        assert stock.metrics["total_nodes"] == 13
        assert stock.metrics["total_nodes"] <= RunConfig().max_nodes
        assert all(n.layer <= RunConfig().max_layer for n in stock.tree.in_creation_order())

        # depth-saturating scenario: a pure depth chain stops at the layer cap
        start = time.perf_counter()
        controller = {layer: "DEPTH" for layer in range(1, 10)}
        chain = run(
            RAW,
            make_backends(canon.run_entries(RAW, controller=controller)),
            config=RunConfig(),
            library=library,
            deterministic=True,
        )
        assert time.perf_counter() - start < 1.0
        layers = [n.layer for n in chain.tree.in_creation_order()]
        assert max(layers) == RunConfig().max_layer == 3
        assert chain.termination is TerminationCause.MAX_LAYER_REACHED


# -- 2: expansion arity and verbatim child queries ---------------------------------------


def test_criterion_2_expansion_arity(library):
    with criterion(2, "breadth yields 1-3 children, depth exactly 1, queries verbatim"):
        rng = random.Random(4242)
        words = ("markets", "policy", "supply", "demand", "logistics", "pricing")
        saw_breadth = saw_depth = False
        for trial in range(50):
            n_aspects = rng.randint(1, 3)
            aspects = tuple(
                f"Aspect question {trial}-{i} about {rng.choice(words)}?"
                for i in range(n_aspects)
            )
            depth_q = f"Deeper question {trial} about {rng.choice(words)}?"
            controller = {
                layer: rng.choice(("BREADTH", "DEPTH")) for layer in range(1, 10)
            }
            record = run(
                RAW,
                make_backends(
                    canon.run_entries(
                        RAW,
                        controller=controller,
                        aspect_queries=aspects,
                        depth_question=depth_q,
                    )
                ),
                config=RunConfig(),
                library=library,
                deterministic=True,
            )
            tree = record.tree
            for node in tree.in_creation_order():
                kids = [tree.node(c) for c in node.children]
                if not kids:
                    continue
                origins = {k.origin for k in kids}
                if origins == {NodeOrigin.BREADTH}:
                    saw_breadth = True
                    assert 1 <= len(kids) <= RunConfig().max_aspects
                    # node budget may truncate an expansion, never reorder it
                    assert [k.query for k in kids] == list(aspects[: len(kids)])
                else:
                    assert origins == {NodeOrigin.DEPTH}
                    saw_depth = True
                    assert len(kids) == 1
                    assert kids[0].query == depth_q
        assert saw_breadth and saw_depth


# -- 3: scheduling order and failure propagation against brute-force oracles ---------------


def _make_plan(deps):
    tasks = [
        canon.task(task_id=t, name="llm", input_text=f"probe {t}", dep=dep)
        for t, dep in deps.items()
    ]
    return parse_plan(canon.plan_json(tasks))


def _order_exists(ids, deps):
    return any(
        all(order.index(d) < order.index(t) for t in ids for d in deps[t])
        for order in itertools.permutations(ids)
    )


def _expected_statuses(ids, deps, failures):
    status: dict[str, ExecutionStatus] = {}

    def visit(t):
        if t not in status:
            if any(visit(d) is not ExecutionStatus.SUCCESS for d in deps[t]):
                status[t] = ExecutionStatus.SKIPPED
            elif t in failures:
                status[t] = ExecutionStatus.FAILURE
            else:
                status[t] = ExecutionStatus.SUCCESS
        return status[t]

    for t in ids:
        visit(t)
    return status


def test_criterion_3_scheduler_oracle(library):
    with criterion(3, "schedule order and failure skipping match brute-force oracles"):
        ids = ["t1", "t2", "t3"]
        pairs = [(a, b) for a in ids for b in ids if a != b]
        acyclic = []
        for mask in range(2 ** len(pairs)):
            deps = {t: tuple(b for bit, (a, b) in enumerate(pairs) if a == t and mask >> bit & 1) for t in ids}
            plan = _make_plan(deps)
            assert len(plan) <= 3
            if _order_exists(ids, deps):
                acyclic.append(deps)
                order = [t.id for wave in schedule(plan) for t in wave]
                assert sorted(order) == sorted(ids)
                for t in ids:
                    for d in deps[t]:
                        assert order.index(d) < order.index(t)
            else:
                with pytest.raises(CyclicDependencies):
                    schedule(plan)
        assert len(acyclic) == 25

        checked = 0
        for deps in acyclic:
            for failures in (set(c) for r in range(4) for c in itertools.combinations(ids, r)):
                entries = [
                    ScriptEntry("" if t in failures else f"result for {t}", contains=f"probe {t}")
                    for t in ids
                ]
                records = execute(_make_plan(deps), make_backends(entries), library)
                expected = _expected_statuses(ids, deps, failures)
                assert {r.task_id: r.status for r in records} == expected
                checked += 1
        assert checked == 25 * 8


# -- 4: every grammar accepts its canonical text and rejects mutilations --------------------


def _drop(raw, *path):
    doc = json.loads(raw)
    target = doc
    for key in path[:-1]:
        target = target[key]
    del target[path[-1]]
    return json.dumps(doc)


def _without_lines(text, prefix):
    return "\n".join(l for l in text.splitlines() if not l.strip().startswith(prefix))


def _swap(text, first, second):
    return text.replace(first, "\x00").replace(second, first).replace("\x00", second)


def _grammar_cases():
    cases = []

    def ok(parser, text):
        cases.append((parser, text, None))

    def bad(parser, text, exc=MalformedModelOutput):
        cases.append((parser, text, exc))

    optimize = canon.optimize_json()
    recovery = canon.recovery_json()
    plan = canon.plan_json()
    summary = canon.summary_block()
    validation = canon.validation_text()
    controller = canon.controller_output()
    breadth = canon.breadth_output(("Q1?",))
    depth = canon.depth_output()
    judge = canon.judge_json()

    ok(parse_optimize_response, optimize)
    ok(parse_recovery_response, recovery)
    ok(parse_plan, plan)
    ok(parse_summary, summary)
    ok(parse_validation, validation)
    ok(parse_controller_decision, controller)
    ok(parse_breadth_aspects, breadth)
    ok(parse_depth_question, depth)
    ok(parse_judge_verdict, judge)
    ok(parse_news_input, "copper prices,3")

    for key in json.loads(optimize):
        bad(parse_optimize_response, _drop(optimize, key))
    for key in json.loads(recovery):
        bad(parse_recovery_response, _drop(recovery, key))
    for key in json.loads(recovery)["error_handling"]:
        bad(parse_recovery_response, _drop(recovery, "error_handling", key))

    for key in json.loads(plan)[0]:
        bad(parse_plan, _drop(plan, 0, key))
    bad(parse_plan, '["just a string"]')
    bad(parse_plan, "no array here")

    bad(parse_summary, _without_lines(summary, "[SUMMARY]"))
    bad(parse_summary, _without_lines(summary, "[END SUMMARY]"))
    for header in ("KEY FINDINGS:", "EVIDENCE AND DATA:", "ANALYSIS:", "CONCLUSION:"):
        bad(parse_summary, _without_lines(summary, header))
    bad(parse_summary, _swap(summary, "KEY FINDINGS:", "CONCLUSION:"))

    bad(parse_validation, _without_lines(validation, "[SUMMARY VALIDATION]"))
    for label in ("STATUS:", "CONFIDENCE:", "ISSUES:", "EVIDENCE:"):
        bad(parse_validation, _without_lines(validation, label))
    bad(parse_validation, validation.replace("STATUS: VALID", "STATUS: FINE"))
    bad(parse_validation, validation.replace("CONFIDENCE: HIGH", "CONFIDENCE: TOTAL"))

    for label in ("Decision:", "Reasoning:", "Layer:"):
        bad(parse_controller_decision, _without_lines(controller, label))
    bad(parse_controller_decision, controller.replace("BREADTH", "SIDEWAYS"))
    bad(parse_controller_decision, controller.replace("Layer: 1", "Layer: one"))

    for label in ("Aspect:", "Category:", "Reasoning:", "Query:", "Priority:"):
        bad(parse_breadth_aspects, _without_lines(breadth, label))
    bad(parse_breadth_aspects, breadth.replace("Priority: HIGH", "Priority: URGENT"))
    bad(parse_breadth_aspects, "plain prose with no aspects")

    for label in ("Question:", "Reasoning:", "Priority:"):
        bad(parse_depth_question, _without_lines(depth, label))
    bad(parse_depth_question, depth.replace("What second-order effects follow?", ""))
    bad(parse_depth_question, depth.replace("Priority: HIGH", "Priority: MILD"))

    bad(parse_judge_verdict, _drop(judge, "overall_winner"))
    bad(parse_judge_verdict, _drop(judge, "criteria"))
    bad(parse_judge_verdict, _drop(judge, "criteria", "innovation"))
    bad(parse_judge_verdict, _drop(judge, "criteria", "innovation", "winner"))
    bad(parse_judge_verdict, judge.replace("model_a", "model_c"))
    bad(parse_judge_verdict, judge.replace("Stronger on innovation.", " "))

    for text in ("copper,0", "copper,6", ",3", "copper", "copper,", "copper,x"):
        bad(parse_news_input, text, MalformedToolInput)

    return cases


def test_criterion_4_grammar_suite():
    with criterion(4, "every model-output grammar has golden and mutation coverage"):
        cases = _grammar_cases()
        assert len(cases) >= 60
        start = time.perf_counter()
        for parser, text, exc in cases:
            if exc is None:
                parser(text)
            else:
                with pytest.raises(exc):
                    parser(text)
        assert time.perf_counter() - start < 1.0


# -- 5: mechanical plan rules -----------------------------------------------------------


def _news_plan(input_text, count=1):
    tasks = [
        canon.task(task_id=f"t{i + 1}", name="news_search", input_text=input_text)
        for i in range(count)
    ]
    return parse_plan(canon.plan_json(tasks))


def test_criterion_5_plan_format_rules():
    with criterion(5, "plan size, search input, and dependency rules enforced"):
        for n in range(1, 6):
            assert check_format(_news_plan(f"copper prices,{n}")) == []
        for bad in ("copper prices,0", "copper prices,6", ",3", "copper prices"):
            codes = [v.code for v in check_format(_news_plan(bad))]
            assert "news_input" in codes

        assert "task_count" in [v.code for v in check_format(parse_plan("[]"))]
        four = parse_plan(canon.plan_json([canon.task(task_id=f"t{i}") for i in range(4)]))
        assert "task_count" in [v.code for v in check_format(four)]

        dangling = _make_plan({"t1": ("t9",)})
        assert "dangling_dependency" in [v.code for v in check_format(dangling)]
        cyclic = _make_plan({"t1": ("t2",), "t2": ("t1",)})
        assert "cyclic_dependencies" in [v.code for v in check_format(cyclic)]


# -- 6: order-swapped judging, de-rotation, and exact aggregation -----------------------------


def _oracle_side(slot, ordering):
    if ordering is Ordering.A_FIRST:
        return Side.A if slot == "model_a" else Side.B
    return Side.B if slot == "model_a" else Side.A


def test_criterion_6_dual_comparison(library):
    with criterion(6, "two judging rounds, de-rotation, and exact win-rate aggregation"):
        backend = canon.CountingBackend(canon.judge_json(winner="model_a"))
        first, second = dual_comparison("q", "a", "b", backend, library)
        assert backend.calls == 2
        assert backend.tags == ["eval.judge", "eval.judge"]

        # a raw first-slot vote in the swapped round belongs to system B
        assert derotate("model_a", Ordering.B_FIRST) is Side.B
        assert first.overall_winner is Side.A
        assert second.overall_winner is Side.B
        swapped = judge_round("q", "a", "b", Ordering.B_FIRST, canon.CountingBackend(canon.judge_json()), library)
        assert all(c.winner is Side.B for c in swapped.criteria.values())

        rng = random.Random(882299)
        slots = ("model_a", "model_b")
        for _ in range(200):
            n_questions = rng.randint(1, 3)
            domain = rng.choice(list(Domain))
            items = []
            entries = []
            expected_a = {k: 0 for k in CRITERIA}
            expected_b = {k: 0 for k in CRITERIA}
            for q in range(n_questions):
                items.append(EvalItem(domain, f"q{q}", "a", "b"))
                for ordering in (Ordering.A_FIRST, Ordering.B_FIRST):
                    winners = {k: rng.choice(slots) for k in CRITERIA}
                    entries.append(
                        ScriptEntry(
                            canon.judge_json(winners=winners, overall=rng.choice(slots)),
                            calls=1,
                        )
                    )
                    for key, slot in winners.items():
                        if _oracle_side(slot, ordering) is Side.A:
                            expected_a[key] += 1
                        else:
                            expected_b[key] += 1
            table = evaluate_questions(items, ScriptedBackend(entries), library)
            tally = table.domains[domain.value]
            assert tally.questions == n_questions
            assert tally.points_a == expected_a
            assert tally.points_b == expected_b
            for key in CRITERIA:
                rate_a = criterion_rate(tally, key, Side.A)
                rate_b = criterion_rate(tally, key, Side.B)
                assert rate_a == Fraction(expected_a[key] * 100, 2 * n_questions)
                assert rate_a + rate_b == Fraction(100)
            assert total_rate(tally, Side.A) + total_rate(tally, Side.B) == Fraction(100)


# -- 7: every request in a full run is issued at temperature zero ---------------------------


def test_criterion_7_temperature_discipline(library):
    with criterion(7, "full run issues every request at temperature zero"):
        backends = make_backends(canon.run_entries(RAW))
        record = run(RAW, backends, config=RunConfig(), library=library, deterministic=True)
        transcript = backends.reasoning.transcript
        assert record.transcript_calls == len(transcript) > 20
        tags = {entry.request.tag for entry in transcript}
        assert {"prompter.optimize", "planner.decompose", "engine.controller", "response.final"} <= tags
        assert all(entry.request.temperature == 0.0 for entry in transcript)


# -- 8: deterministic runs serialize identically and round-trip ----------------------------


def test_criterion_8_determinism(library, tmp_path):
    with criterion(8, "repeat runs byte-identical; records survive persist and reload"):
        paths = []
        for name in ("first.json", "second.json"):
            record = run(
                RAW,
                make_backends(canon.run_entries(RAW)),
                config=RunConfig(),
                library=library,
                deterministic=True,
            )
            path = tmp_path / name
            persist_run(record, path)
            paths.append(path)
        assert paths[0].read_bytes() == paths[1].read_bytes()

        reloaded = load_run(paths[0])
        replay = tmp_path / "third.json"
        persist_run(reloaded, replay)
        assert replay.read_bytes() == paths[0].read_bytes()


# -- 9: parse-retry and plan-retry budgets are hard call ceilings ---------------------------


def test_criterion_9_retry_budgets(library, registry):
    with criterion(9, "query refinement and planning stop exactly at their call budgets"):
        for retries in (0, 2):
            backend = canon.CountingBackend("never valid JSON")
            with pytest.raises(MalformedModelOutput):
                optimize_query(RAW, backend, library, max_parse_retries=retries)
            assert backend.calls == 1 + retries

        unparseable = canon.CountingBackend("never a plan")
        with pytest.raises(PlanRejected):
            decompose(RAW, registry, unparseable, library, plan_retry_budget=3)
        assert unparseable.calls == 3

        rejected = canon.CountingBackend([canon.plan_json(), "No better."] * 3)
        with pytest.raises(PlanRejected):
            decompose(RAW, registry, rejected, library, plan_retry_budget=3)
        planning = [t for t in rejected.tags if t in ("planner.decompose", "planner.retry")]
        validations = [t for t in rejected.tags if t == "planner.validate"]
        assert len(planning) == 3
        assert len(validations) == 3
