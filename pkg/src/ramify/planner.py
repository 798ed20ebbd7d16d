"""Task planning: decomposition, structural checks, model validation, retries."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Optional

from .backend import Backend, CompletionRequest
from .config import DEFAULT_PLAN_RETRY_BUDGET, DEFAULT_TEMPERATURE
from .errors import MalformedModelOutput, MalformedToolInput, PlanRejected
from .parsing import extract_json_array, normalize_whitespace
from .prompts import PromptLibrary
from .toolbox import InputContract, ToolRegistry, default_registry, parse_news_input

logger = logging.getLogger(__name__)

MIN_TASKS = 1
MAX_TASKS = 3

ACCEPTANCE_SENTINEL = "The plan satisfies completeness and non-redundancy."

_TASK_FIELDS = {"task", "id", "name", "input", "reason", "dep"}


@dataclass(frozen=True)
class TaskSpec:
    task: str
    id: str
    name: str
    input: str
    reason: str
    dep: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "id": self.id,
            "name": self.name,
            "input": self.input,
            "reason": self.reason,
            "dep": list(self.dep),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaskSpec":
        return cls(
            task=data["task"],
            id=data["id"],
            name=data["name"],
            input=data["input"],
            reason=data["reason"],
            dep=tuple(data["dep"]),
        )


@dataclass(frozen=True)
class TaskPlan:
    tasks: tuple[TaskSpec, ...]

    def __len__(self) -> int:
        return len(self.tasks)

    def ids(self) -> list[str]:
        return [t.id for t in self.tasks]

    def to_json(self) -> str:
        return json.dumps([t.to_dict() for t in self.tasks], indent=2)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    task_id: Optional[str] = None

    def __str__(self) -> str:
        prefix = f"[{self.task_id}] " if self.task_id else ""
        return f"{prefix}{self.message}"


@dataclass(frozen=True)
class PlanVerdict:
    passed: bool
    feedback: str


def parse_plan(text: str) -> TaskPlan:
    """Parse a completion into a task plan; shape and types only."""
    items = extract_json_array(text)
    tasks = []
    for i, item in enumerate(items):
        if not isinstance(item, dict):
            raise MalformedModelOutput(f"plan entry {i} is not an object")
        keys = set(item)
        if keys != _TASK_FIELDS:
            missing = sorted(_TASK_FIELDS - keys)
            extra = sorted(keys - _TASK_FIELDS)
            detail = []
            if missing:
                detail.append(f"missing {missing}")
            if extra:
                detail.append(f"unexpected {extra}")
            raise MalformedModelOutput(f"plan entry {i}: {', '.join(detail)}")
        for key in ("task", "id", "name", "input", "reason"):
            if not isinstance(item[key], str):
                raise MalformedModelOutput(f"plan entry {i}: field {key!r} must be text")
        dep = item["dep"]
        if not isinstance(dep, list) or not all(isinstance(d, str) for d in dep):
            raise MalformedModelOutput(f"plan entry {i}: field 'dep' must be a list of ids")
        tasks.append(TaskSpec.from_dict(item))
    return TaskPlan(tasks=tuple(tasks))


def check_format(plan: TaskPlan, registry: ToolRegistry | None = None) -> list[Violation]:
    """Mechanical plan rules; returns an empty list when the plan is sound."""
    registry = registry or default_registry()
    violations: list[Violation] = []
    if not MIN_TASKS <= len(plan) <= MAX_TASKS:
        violations.append(
            Violation(
                code="task_count",
                message=f"plan must hold {MIN_TASKS}-{MAX_TASKS} tasks, got {len(plan)}",
            )
        )
    seen: set[str] = set()
    for task in plan.tasks:
        if not task.id.strip():
            violations.append(Violation("empty_id", "task id is empty", task.id))
        elif task.id in seen:
            violations.append(
                Violation("duplicate_id", f"task id {task.id!r} appears more than once", task.id)
            )
        seen.add(task.id)
        if task.name not in registry:
            violations.append(
                Violation("unknown_tool", f"no agent named {task.name!r}", task.id)
            )
        if not task.input.strip():
            violations.append(Violation("empty_input", "task input is empty", task.id))
        elif task.name in registry and (
            registry.get(task.name).input_contract is InputContract.QUERY_COUNT
        ):
            try:
                parse_news_input(task.input)
            except MalformedToolInput as exc:
                violations.append(Violation("news_input", str(exc), task.id))
        for dep in task.dep:
            if dep not in {t.id for t in plan.tasks}:
                violations.append(
                    Violation(
                        "dangling_dependency",
                        f"dependency {dep!r} names no task in the plan",
                        task.id,
                    )
                )
    if _has_cycle(plan):
        violations.append(
            Violation("cyclic_dependencies", "task dependencies form a cycle")
        )
    return violations


def _has_cycle(plan: TaskPlan) -> bool:
    ids = {t.id for t in plan.tasks}
    deps = {t.id: [d for d in t.dep if d in ids] for t in plan.tasks}
    resolved: set[str] = set()
    while True:
        ready = [tid for tid in deps if tid not in resolved and all(d in resolved for d in deps[tid])]
        if not ready:
            break
        resolved.update(ready)
    return len(resolved) != len(deps)


def validate_plan(
    query: str,
    plan: TaskPlan,
    backend: Backend,
    library: PromptLibrary,
    *,
    temperature: float = DEFAULT_TEMPERATURE,
) -> PlanVerdict:
    """Ask the model validator; acceptance is the sentinel sentence.

    The sentinel check is containment, case-insensitive, with whitespace
    collapsed, so cosmetic reflow in the verdict does not flip it.
    """
    system, user = library.render(
        "planner.validate", {"original_query": query, "task_plan": plan.to_json()}
    )
    text = backend.complete(
        CompletionRequest(system, user, temperature=temperature, tag="planner.validate")
    )
    if not text.strip():
        raise MalformedModelOutput("plan validation returned an empty verdict")
    if normalize_whitespace(ACCEPTANCE_SENTINEL).lower() in normalize_whitespace(text).lower():
        return PlanVerdict(passed=True, feedback=ACCEPTANCE_SENTINEL)
    return PlanVerdict(passed=False, feedback=text.strip())


def _plan_attempt_request(
    query: str, feedback: Optional[str], library: PromptLibrary, temperature: float
) -> CompletionRequest:
    if feedback is None:
        system, user = library.render("planner.decompose", {"input": query})
        return CompletionRequest(system, user, temperature=temperature, tag="planner.decompose")
    system, user = library.render(
        "planner.retry", {"original_query": query, "feedback": feedback}
    )
    return CompletionRequest(system, user, temperature=temperature, tag="planner.retry")


def _plan_loop(
    query: str,
    registry: ToolRegistry,
    backend: Backend,
    library: PromptLibrary,
    *,
    temperature: float,
    budget: int,
    initial_feedback: Optional[str],
) -> TaskPlan:
    feedback = initial_feedback
    attempts = 0
    while attempts < budget:
        attempts += 1
        request = _plan_attempt_request(query, feedback, library, temperature)
        text = backend.complete(request)
        try:
            plan = parse_plan(text)
        except MalformedModelOutput as exc:
            feedback = f"The previous output could not be parsed as a JSON task array: {exc}"
            logger.warning("plan attempt %d unparseable: %s", attempts, exc)
            continue
        violations = check_format(plan, registry)
        if violations:
            listing = "\n".join(f"- {v}" for v in violations)
            feedback = f"The task plan violates format rules:\n{listing}"
            logger.warning("plan attempt %d rejected by format check: %s", attempts, listing)
            continue
        verdict = validate_plan(query, plan, backend, library, temperature=temperature)
        if verdict.passed:
            return plan
        feedback = verdict.feedback
        logger.warning("plan attempt %d rejected by validator", attempts)
    assert feedback is not None
    raise PlanRejected(feedback, attempts)


def decompose(
    query: str,
    registry: ToolRegistry,
    backend: Backend,
    library: PromptLibrary,
    *,
    temperature: float = DEFAULT_TEMPERATURE,
    plan_retry_budget: int = DEFAULT_PLAN_RETRY_BUDGET,
) -> TaskPlan:
    """Full planning pipeline: decompose, check, validate, regenerate on feedback.

    Issues at most ``plan_retry_budget`` planning completions (the first
    decomposition plus retries); validator calls are separate.  Raises
    PlanRejected carrying the last feedback once the budget is spent.
    """
    return _plan_loop(
        query,
        registry,
        backend,
        library,
        temperature=temperature,
        budget=plan_retry_budget,
        initial_feedback=None,
    )


def regenerate(
    query: str,
    feedback: str,
    registry: ToolRegistry,
    backend: Backend,
    library: PromptLibrary,
    *,
    temperature: float = DEFAULT_TEMPERATURE,
    plan_retry_budget: int = DEFAULT_PLAN_RETRY_BUDGET,
) -> TaskPlan:
    """Re-plan from existing feedback; same pipeline and budget semantics."""
    return _plan_loop(
        query,
        registry,
        backend,
        library,
        temperature=temperature,
        budget=plan_retry_budget,
        initial_feedback=feedback,
    )
