"""Plan parsing, format rules, validation sentinel, and retry budgets."""

import itertools
import json

import pytest

import canon
from ramify.errors import MalformedModelOutput, PlanRejected
from ramify.planner import (
    ACCEPTANCE_SENTINEL,
    MAX_TASKS,
    MIN_TASKS,
    TaskPlan,
    check_format,
    decompose,
    parse_plan,
    regenerate,
    validate_plan,
)


def codes(violations):
    return sorted(v.code for v in violations)


def test_parse_plan_golden_single_task():
    plan = parse_plan(canon.plan_json())
    assert len(plan) == 1
    t = plan.tasks[0]
    assert (t.id, t.name, t.input, t.dep) == ("t1", "llm", "analyze the topic", ())
    assert t.task and t.reason


def test_parse_plan_three_tasks_with_deps():
    tasks = [
        canon.task(task_id="t1", name="news_search", input_text="copper prices,3"),
        canon.task(task_id="t2", name="event_extractor", dep=("t1",)),
        canon.task(task_id="t3", dep=("t1", "t2")),
    ]
    plan = parse_plan(canon.plan_json(tasks))
    assert plan.ids() == ["t1", "t2", "t3"]
    assert plan.tasks[2].dep == ("t1", "t2")


def test_parse_plan_embedded_in_prose_and_fence():
    text = "Here is the plan:\n```json\n" + canon.plan_json() + "\n```\nDone."
    assert parse_plan(text).ids() == ["t1"]


def test_parse_plan_empty_array_parses_as_empty_plan():
    # size rules live in check_format, not the parser
    assert len(parse_plan("[]")) == 0


def test_parse_plan_rejects_prose():
    with pytest.raises(MalformedModelOutput):
        parse_plan("first gather news, then reason about it")


def test_parse_plan_rejects_non_object_entry():
    with pytest.raises(MalformedModelOutput):
        parse_plan('["just a string"]')


@pytest.mark.parametrize("key", ["task", "id", "name", "input", "reason", "dep"])
def test_parse_plan_rejects_missing_field(key):
    entry = canon.task()
    del entry[key]
    with pytest.raises(MalformedModelOutput):
        parse_plan(json.dumps([entry]))


def test_parse_plan_rejects_extra_field():
    entry = canon.task()
    entry["priority"] = "high"
    with pytest.raises(MalformedModelOutput):
        parse_plan(json.dumps([entry]))


@pytest.mark.parametrize("key", ["task", "id", "name", "input", "reason"])
def test_parse_plan_rejects_non_string_field(key):
    entry = canon.task()
    entry[key] = 42
    with pytest.raises(MalformedModelOutput):
        parse_plan(json.dumps([entry]))


@pytest.mark.parametrize("dep", ["t1", [1], [{"id": "t1"}]])
def test_parse_plan_rejects_bad_dep_shape(dep):
    entry = canon.task()
    entry["dep"] = dep
    with pytest.raises(MalformedModelOutput):
        parse_plan(json.dumps([entry]))


def test_task_plan_json_round_trip():
    plan = parse_plan(canon.plan_json())
    assert json.loads(plan.to_json()) == [canon.task()]


# -- format rules --------------------------------------------------------------


def test_check_format_accepts_sound_plan(registry):
    tasks = [
        canon.task(task_id="t1", name="news_search", input_text="copper prices,3"),
        canon.task(task_id="t2", name="llm", dep=("t1",)),
    ]
    assert check_format(parse_plan(canon.plan_json(tasks)), registry) == []


def test_check_format_rejects_empty_plan():
    assert codes(check_format(TaskPlan(tasks=()))) == ["task_count"]


def test_check_format_rejects_four_tasks():
    tasks = [canon.task(task_id=f"t{i}") for i in range(1, 5)]
    violations = check_format(parse_plan(canon.plan_json(tasks)))
    assert "task_count" in codes(violations)
    assert MIN_TASKS == 1 and MAX_TASKS == 3


def test_check_format_rejects_blank_id():
    plan = parse_plan(canon.plan_json([canon.task(task_id="  ")]))
    assert "empty_id" in codes(check_format(plan))


def test_check_format_rejects_duplicate_id():
    tasks = [canon.task(task_id="t1"), canon.task(task_id="t1")]
    assert "duplicate_id" in codes(check_format(parse_plan(canon.plan_json(tasks))))


def test_check_format_rejects_unknown_tool():
    plan = parse_plan(canon.plan_json([canon.task(name="oracle")]))
    violations = check_format(plan)
    assert "unknown_tool" in codes(violations)
    assert "oracle" in str(violations[0])


def test_check_format_rejects_empty_input():
    plan = parse_plan(canon.plan_json([canon.task(input_text=" ")]))
    assert "empty_input" in codes(check_format(plan))


@pytest.mark.parametrize("count", [1, 2, 3, 4, 5])
def test_check_format_accepts_news_counts_in_range(count):
    plan = parse_plan(
        canon.plan_json([canon.task(name="news_search", input_text=f"copper prices,{count}")])
    )
    assert check_format(plan) == []


@pytest.mark.parametrize("bad", ["copper,0", "copper,6", ",3", "copper", "copper,many"])
def test_check_format_rejects_bad_news_input(bad):
    plan = parse_plan(canon.plan_json([canon.task(name="news_search", input_text=bad)]))
    assert "news_input" in codes(check_format(plan))


def test_check_format_rejects_dangling_dependency():
    plan = parse_plan(canon.plan_json([canon.task(dep=("ghost",))]))
    assert "dangling_dependency" in codes(check_format(plan))


def test_check_format_rejects_two_cycle():
    tasks = [
        canon.task(task_id="t1", dep=("t2",)),
        canon.task(task_id="t2", dep=("t1",)),
    ]
    assert "cyclic_dependencies" in codes(check_format(parse_plan(canon.plan_json(tasks))))


def test_check_format_rejects_self_loop():
    plan = parse_plan(canon.plan_json([canon.task(dep=("t1",))]))
    assert "cyclic_dependencies" in codes(check_format(plan))


def _topological_order_exists(ids, deps):
    """Brute force: some permutation satisfies every dependency."""
    return any(
        all(deps[t] <= set(order[:i]) for i, t in enumerate(order))
        for order in itertools.permutations(ids)
    )


@pytest.mark.parametrize("mask", range(64))
def test_cycle_detection_matches_permutation_oracle(mask):
    ids = ("t1", "t2", "t3")
    pairs = [(a, b) for a in ids for b in ids if a != b]
    edges = [pairs[i] for i in range(6) if mask >> i & 1]
    deps = {t: {d for (holder, d) in edges if holder == t} for t in ids}
    tasks = [canon.task(task_id=t, dep=tuple(sorted(deps[t]))) for t in ids]
    violations = check_format(parse_plan(canon.plan_json(tasks)))
    flagged = "cyclic_dependencies" in codes(violations)
    assert flagged == (not _topological_order_exists(ids, deps))


# -- model validation ----------------------------------------------------------


def test_validate_plan_accepts_sentinel(library):
    backend = canon.CountingBackend(canon.VALIDATOR_OK)
    verdict = validate_plan("q", parse_plan(canon.plan_json()), backend, library)
    assert verdict.passed
    request = backend.requests[0]
    assert request.tag == "planner.validate"
    assert '"id": "t1"' in request.user_prompt


def test_validate_plan_sentinel_tolerates_case_and_reflow(library):
    text = "Verdict:\nTHE PLAN   satisfies\ncompleteness and non-redundancy.\nGood work."
    backend = canon.CountingBackend(text)
    assert validate_plan("q", parse_plan(canon.plan_json()), backend, library).passed


def test_validate_plan_rejection_carries_feedback(library):
    backend = canon.CountingBackend("  The plan ignores price history entirely.  ")
    verdict = validate_plan("q", parse_plan(canon.plan_json()), backend, library)
    assert not verdict.passed
    assert verdict.feedback == "The plan ignores price history entirely."


def test_validate_plan_empty_verdict_is_malformed(library):
    backend = canon.CountingBackend("   \n ")
    with pytest.raises(MalformedModelOutput):
        validate_plan("q", parse_plan(canon.plan_json()), backend, library)


# -- planning loop -------------------------------------------------------------


def test_decompose_happy_path(registry, library):
    backend = canon.CountingBackend([canon.plan_json(), canon.VALIDATOR_OK])
    plan = decompose("analyze copper", registry, backend, library)
    assert plan.ids() == ["t1"]
    assert backend.calls == 2
    assert backend.tags == ["planner.decompose", "planner.validate"]
    assert "analyze copper" in backend.requests[0].user_prompt


def test_decompose_retries_after_parse_failure(registry, library):
    backend = canon.CountingBackend(["garbage", canon.plan_json(), canon.VALIDATOR_OK])
    plan = decompose("q", registry, backend, library, plan_retry_budget=3)
    assert plan.ids() == ["t1"]
    assert backend.tags == ["planner.decompose", "planner.retry", "planner.validate"]
    assert "could not be parsed as a JSON task array" in backend.requests[1].user_prompt


def test_decompose_retries_after_format_violation(registry, library):
    bad = canon.plan_json([canon.task(name="oracle")])
    backend = canon.CountingBackend([bad, canon.plan_json(), canon.VALIDATOR_OK])
    plan = decompose("q", registry, backend, library, plan_retry_budget=3)
    assert plan.ids() == ["t1"]
    assert backend.tags == ["planner.decompose", "planner.retry", "planner.validate"]
    assert "no agent named 'oracle'" in backend.requests[1].user_prompt


def test_decompose_retries_after_validator_rejection(registry, library):
    backend = canon.CountingBackend(
        [canon.plan_json(), "Plan misses the demand side.", canon.plan_json(), canon.VALIDATOR_OK]
    )
    plan = decompose("q", registry, backend, library, plan_retry_budget=3)
    assert plan.ids() == ["t1"]
    assert backend.tags == [
        "planner.decompose",
        "planner.validate",
        "planner.retry",
        "planner.validate",
    ]
    assert "Plan misses the demand side." in backend.requests[2].user_prompt


def test_decompose_budget_counts_planning_calls_only(registry, library):
    # every attempt parses and passes format, so the validator burns no budget
    backend = canon.CountingBackend(
        [
            canon.plan_json(),
            "Too shallow.",
            canon.plan_json(),
            "Still too shallow.",
            canon.plan_json(),
            "No better.",
        ]
    )
    with pytest.raises(PlanRejected) as excinfo:
        decompose("q", registry, backend, library, plan_retry_budget=3)
    assert excinfo.value.attempts == 3
    assert excinfo.value.feedback == "No better."
    assert backend.calls == 6
    assert backend.tags.count("planner.validate") == 3
    assert backend.tags.count("planner.decompose") + backend.tags.count("planner.retry") == 3


def test_decompose_exhausts_budget_on_unparseable_output(registry, library):
    backend = canon.CountingBackend("never json")
    with pytest.raises(PlanRejected) as excinfo:
        decompose("q", registry, backend, library, plan_retry_budget=3)
    assert backend.calls == 3
    assert backend.tags == ["planner.decompose", "planner.retry", "planner.retry"]
    assert excinfo.value.attempts == 3
    assert "could not be parsed" in excinfo.value.feedback


def test_decompose_budget_of_one(registry, library):
    backend = canon.CountingBackend("never json")
    with pytest.raises(PlanRejected):
        decompose("q", registry, backend, library, plan_retry_budget=1)
    assert backend.calls == 1


def test_regenerate_starts_from_given_feedback(registry, library):
    backend = canon.CountingBackend([canon.plan_json(), canon.VALIDATOR_OK])
    plan = regenerate(
        "q", "The summary failed fact checking.", registry, backend, library
    )
    assert plan.ids() == ["t1"]
    assert backend.tags == ["planner.retry", "planner.validate"]
    assert "The summary failed fact checking." in backend.requests[0].user_prompt


def test_sentinel_text_is_stable():
    assert ACCEPTANCE_SENTINEL == canon.VALIDATOR_OK
