"""Growth engines: route each node wider or deeper and produce follow-up queries."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum

from .backend import Backend, CompletionRequest
from .config import DEFAULT_MAX_PARSE_RETRIES, DEFAULT_TEMPERATURE
from .errors import InvalidInput, MalformedModelOutput
from .parsing import normalize_whitespace
from .prompts import PromptLibrary

logger = logging.getLogger(__name__)


class EngineChoice(str, Enum):
    BREADTH = "BREADTH"
    DEPTH = "DEPTH"


class Priority(str, Enum):
    HIGH = "HIGH"
    MEDIUM = "MEDIUM"
    LOW = "LOW"

    @property
    def rank(self) -> int:
        return {"HIGH": 0, "MEDIUM": 1, "LOW": 2}[self.value]


@dataclass(frozen=True)
class EngineContext:
    """What the engines see: the run's query, the node's focus, and its findings."""

    original_query: str
    further_query: str
    current_layer: int
    max_layer: int
    content: str

    def __post_init__(self) -> None:
        if self.current_layer < 1:
            raise InvalidInput(f"current_layer must be >= 1, got {self.current_layer}")
        if self.max_layer < self.current_layer:
            raise InvalidInput(
                f"max_layer ({self.max_layer}) is below current_layer ({self.current_layer})"
            )


@dataclass(frozen=True)
class ControllerDecision:
    choice: EngineChoice
    reasoning: str
    layer: int


@dataclass(frozen=True)
class BreadthAspect:
    aspect: str
    category: str
    reasoning: str
    query: str
    priority: Priority


@dataclass(frozen=True)
class DepthQuestion:
    question: str
    reasoning: str
    priority: Priority


# -- labeled-line parsing --------------------------------------------------------


def _segments(text: str, labels: tuple[str, ...]) -> list[tuple[str, str]]:
    """Split text into (label, value) runs.

    A line starting with a label opens a new segment; unlabeled lines extend
    the current one.  Lines before the first label are dropped.
    """
    runs: list[tuple[str, list[str]]] = []
    for line in text.splitlines():
        stripped = line.strip()
        matched = None
        for label in labels:
            if stripped.startswith(label):
                matched = label
                break
        if matched:
            runs.append((matched, [stripped[len(matched) :].strip()]))
        elif runs and stripped:
            runs[-1][1].append(stripped)
    return [(label, "\n".join(parts).strip()) for label, parts in runs]


def _parse_priority(value: str, context: str) -> Priority:
    try:
        return Priority(value.strip().upper())
    except ValueError:
        raise MalformedModelOutput(
            f"{context}: priority must be HIGH, MEDIUM or LOW, got {value!r}"
        ) from None


# -- controller -------------------------------------------------------------------


def parse_controller_decision(text: str) -> ControllerDecision:
    found = dict()
    for label, value in _segments(text, ("Decision:", "Reasoning:", "Layer:")):
        found.setdefault(label, value)
    missing = [l for l in ("Decision:", "Reasoning:", "Layer:") if l not in found]
    if missing:
        raise MalformedModelOutput(f"controller output lacks labels {missing}")
    raw_choice = found["Decision:"].strip().upper()
    try:
        choice = EngineChoice(raw_choice)
    except ValueError:
        raise MalformedModelOutput(
            f"controller decision must be BREADTH or DEPTH, got {found['Decision:']!r}"
        ) from None
    reasoning = found["Reasoning:"]
    if not reasoning:
        raise MalformedModelOutput("controller reasoning is empty")
    try:
        layer = int(found["Layer:"].strip())
    except ValueError:
        raise MalformedModelOutput(
            f"controller layer must be an integer, got {found['Layer:']!r}"
        ) from None
    return ControllerDecision(choice=choice, reasoning=reasoning, layer=layer)


def format_controller_decision(decision: ControllerDecision) -> str:
    return (
        f"Decision: {decision.choice.value}\n"
        f"Reasoning: {decision.reasoning}\n"
        f"Layer: {decision.layer}"
    )


def decide(
    ctx: EngineContext,
    backend: Backend,
    library: PromptLibrary,
    *,
    temperature: float = DEFAULT_TEMPERATURE,
    max_parse_retries: int = DEFAULT_MAX_PARSE_RETRIES,
) -> ControllerDecision:
    """Ask the controller whether this node should grow wider or deeper."""
    system, user = library.render(
        "engine.controller",
        {
            "original_query": ctx.original_query,
            "further_query": ctx.further_query,
            "current_layer": ctx.current_layer,
            "max_layer": ctx.max_layer,
            "content": ctx.content,
        },
    )
    request = CompletionRequest(system, user, temperature=temperature, tag="engine.controller")
    decision = _complete_parsed(request, backend, parse_controller_decision, max_parse_retries)
    if decision.layer != ctx.current_layer:
        # the tree knows the real layer; the model's echo is advisory only
        logger.warning(
            "controller reported layer %d but node sits at layer %d",
            decision.layer,
            ctx.current_layer,
        )
        decision = replace(decision, layer=ctx.current_layer)
    return decision


def _complete_parsed(request: CompletionRequest, backend: Backend, parser, max_parse_retries):
    last_error = None
    for attempt in range(1 + max_parse_retries):
        text = backend.complete(request)
        try:
            return parser(text)
        except MalformedModelOutput as exc:
            last_error = exc
            logger.warning("%s attempt %d malformed: %s", request.tag, attempt + 1, exc)
    raise MalformedModelOutput(
        f"{request.tag} output still malformed after {max_parse_retries} re-prompts: {last_error}"
    )


# -- breadth ----------------------------------------------------------------------

_ASPECT_LABELS = ("Aspect:", "Category:", "Reasoning:", "Query:", "Priority:")


def parse_breadth_aspects(text: str) -> list[BreadthAspect]:
    """Parse aspect blocks; every block needs all five labels."""
    groups: list[dict[str, str]] = []
    for label, value in _segments(text, _ASPECT_LABELS):
        if label == "Aspect:":
            groups.append({})
        if not groups:
            raise MalformedModelOutput(f"{label} appears before any Aspect label")
        if label in groups[-1]:
            raise MalformedModelOutput(f"duplicate {label} label in aspect {len(groups)}")
        groups[-1][label] = value
    if not groups:
        raise MalformedModelOutput("no aspects found in breadth output")
    aspects = []
    for i, group in enumerate(groups, start=1):
        missing = [l for l in _ASPECT_LABELS if l not in group]
        if missing:
            raise MalformedModelOutput(f"aspect {i} lacks labels {missing}")
        empty = [l for l in _ASPECT_LABELS if l != "Priority:" and not group[l]]
        if empty:
            raise MalformedModelOutput(f"aspect {i} has empty values for {empty}")
        aspects.append(
            BreadthAspect(
                aspect=group["Aspect:"],
                category=group["Category:"],
                reasoning=group["Reasoning:"],
                query=group["Query:"],
                priority=_parse_priority(group["Priority:"], f"aspect {i}"),
            )
        )
    return aspects


def format_breadth_aspects(aspects: list[BreadthAspect]) -> str:
    blocks = []
    for a in aspects:
        blocks.append(
            f"Aspect: {a.aspect}\n"
            f"Category: {a.category}\n"
            f"Reasoning: {a.reasoning}\n"
            f"Query: {a.query}\n"
            f"Priority: {a.priority.value}"
        )
    return "\n\n".join(blocks)


def prioritize_aspects(aspects: list[BreadthAspect], max_aspects: int) -> list[BreadthAspect]:
    """Drop duplicate queries, order by priority, and cap the count.

    The sort is stable, so equal priorities keep their generation order.
    """
    seen: set[str] = set()
    unique = []
    for aspect in aspects:
        key = normalize_whitespace(aspect.query)
        if key in seen:
            logger.warning("dropping aspect with duplicate query: %s", aspect.query)
            continue
        seen.add(key)
        unique.append(aspect)
    ordered = sorted(unique, key=lambda a: a.priority.rank)
    if len(ordered) > max_aspects:
        logger.warning(
            "breadth produced %d aspects, keeping the top %d", len(ordered), max_aspects
        )
        ordered = ordered[:max_aspects]
    return ordered


def expand_breadth(
    ctx: EngineContext,
    backend: Backend,
    library: PromptLibrary,
    *,
    max_aspects: int,
    temperature: float = DEFAULT_TEMPERATURE,
    max_parse_retries: int = DEFAULT_MAX_PARSE_RETRIES,
) -> list[BreadthAspect]:
    """Generate up to max_aspects distinct follow-up aspects for this node."""
    system, user = library.render(
        "engine.breadth",
        {
            "original_query": ctx.original_query,
            "content": ctx.content,
            "max_aspects": max_aspects,
        },
    )
    request = CompletionRequest(system, user, temperature=temperature, tag="engine.breadth")
    aspects = _complete_parsed(request, backend, parse_breadth_aspects, max_parse_retries)
    return prioritize_aspects(aspects, max_aspects)


# -- depth ------------------------------------------------------------------------

_DEPTH_LABELS = ("Question:", "Reasoning:", "Priority:")


def parse_depth_question(text: str) -> DepthQuestion:
    """Parse the single follow-up question block."""
    found: dict[str, str] = {}
    question_count = 0
    for label, value in _segments(text, _DEPTH_LABELS):
        if label == "Question:":
            question_count += 1
        found.setdefault(label, value)
    if question_count != 1:
        raise MalformedModelOutput(
            f"expected exactly one follow-up question, found {question_count}"
        )
    missing = [l for l in _DEPTH_LABELS if l not in found]
    if missing:
        raise MalformedModelOutput(f"depth output lacks labels {missing}")
    if not found["Question:"]:
        raise MalformedModelOutput("depth question is empty")
    if not found["Reasoning:"]:
        raise MalformedModelOutput("depth reasoning is empty")
    return DepthQuestion(
        question=found["Question:"],
        reasoning=found["Reasoning:"],
        priority=_parse_priority(found["Priority:"], "depth question"),
    )


def format_depth_question(question: DepthQuestion) -> str:
    return (
        f"Question: {question.question}\n"
        f"Reasoning: {question.reasoning}\n"
        f"Priority: {question.priority.value}"
    )


def expand_depth(
    ctx: EngineContext,
    backend: Backend,
    library: PromptLibrary,
    *,
    temperature: float = DEFAULT_TEMPERATURE,
    max_parse_retries: int = DEFAULT_MAX_PARSE_RETRIES,
) -> DepthQuestion:
    """Generate exactly one deepening follow-up question for this node."""
    system, user = library.render(
        "engine.depth",
        {"original_query": ctx.original_query, "content": ctx.content},
    )
    request = CompletionRequest(system, user, temperature=temperature, tag="engine.depth")
    return _complete_parsed(request, backend, parse_depth_question, max_parse_retries)
