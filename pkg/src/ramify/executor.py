"""Plan execution: dependency waves, tool runs, summarization, fact checking."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from typing import Optional

from .backend import Backend, BackendSet, CompletionRequest
from .config import DEFAULT_MAX_PARSE_RETRIES, DEFAULT_TEMPERATURE
from .errors import (
    BackendError,
    CyclicDependencies,
    InvalidInput,
    MalformedModelOutput,
    MalformedToolInput,
)
from .planner import TaskPlan, TaskSpec
from .prompts import PromptLibrary
from .toolbox import ToolRegistry, default_registry, invoke

logger = logging.getLogger(__name__)

SUMMARY_OPEN = "[SUMMARY]"
SUMMARY_CLOSE = "[END SUMMARY]"
TASK_VALIDATION_OPEN = "[TASK VALIDATION]"
TASK_VALIDATION_CLOSE = "[END TASK VALIDATION]"
SUMMARY_VALIDATION_OPEN = "[SUMMARY VALIDATION]"
SUMMARY_VALIDATION_CLOSE = "[END SUMMARY VALIDATION]"

_REQUIRED_SUMMARY_HEADERS = ("KEY FINDINGS:", "EVIDENCE AND DATA:", "ANALYSIS:", "CONCLUSION:")
_CONFLICTS_HEADER = "CONFLICTING INFORMATION:"
_ALL_SUMMARY_HEADERS = _REQUIRED_SUMMARY_HEADERS + (_CONFLICTS_HEADER,)


class ExecutionStatus(str, Enum):
    SUCCESS = "Success"
    FAILURE = "Failure"
    SKIPPED = "Skipped"


class ValidationStatus(str, Enum):
    VALID = "VALID"
    INVALID = "INVALID"


class Confidence(str, Enum):
    HIGH = "HIGH"
    MEDIUM = "MEDIUM"
    LOW = "LOW"


@dataclass(frozen=True)
class ExecutionRecord:
    """Outcome of one task: the tool's text on success, the error otherwise."""

    task_id: str
    tool: str
    status: ExecutionStatus
    result: str
    started: Optional[int] = None
    finished: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "tool": self.tool,
            "status": self.status.value,
            "result": self.result,
            "started": self.started,
            "finished": self.finished,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExecutionRecord":
        return cls(
            task_id=data["task_id"],
            tool=data["tool"],
            status=ExecutionStatus(data["status"]),
            result=data["result"],
            started=data.get("started"),
            finished=data.get("finished"),
        )


@dataclass(frozen=True)
class ExecutionSummary:
    key_findings: str
    evidence: tuple[str, ...]
    analysis: str
    conflicts: tuple[str, ...]
    conclusion: str
    raw: str

    def to_text(self) -> str:
        """Canonical section rendering, conflicts omitted when none were found."""
        parts = [
            f"KEY FINDINGS:\n{self.key_findings}",
            "EVIDENCE AND DATA:\n" + "\n".join(f"- {e}" for e in self.evidence),
            f"ANALYSIS:\n{self.analysis}",
        ]
        if self.conflicts:
            parts.append(
                "CONFLICTING INFORMATION:\n" + "\n".join(f"- {c}" for c in self.conflicts)
            )
        parts.append(f"CONCLUSION:\n{self.conclusion}")
        return "\n\n".join(parts)

    def to_dict(self) -> dict:
        return {
            "key_findings": self.key_findings,
            "evidence": list(self.evidence),
            "analysis": self.analysis,
            "conflicts": list(self.conflicts),
            "conclusion": self.conclusion,
            "raw": self.raw,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExecutionSummary":
        return cls(
            key_findings=data["key_findings"],
            evidence=tuple(data["evidence"]),
            analysis=data["analysis"],
            conflicts=tuple(data["conflicts"]),
            conclusion=data["conclusion"],
            raw=data["raw"],
        )


@dataclass(frozen=True)
class ValidationEntry:
    """One validation block; task_id is None for the summary block."""

    task_id: Optional[str]
    status: ValidationStatus
    confidence: Confidence
    issues: tuple[str, ...]
    evidence: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "status": self.status.value,
            "confidence": self.confidence.value,
            "issues": list(self.issues),
            "evidence": list(self.evidence),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ValidationEntry":
        return cls(
            task_id=data.get("task_id"),
            status=ValidationStatus(data["status"]),
            confidence=Confidence(data["confidence"]),
            issues=tuple(data["issues"]),
            evidence=tuple(data["evidence"]),
        )


@dataclass(frozen=True)
class ValidationReport:
    task_entries: tuple[ValidationEntry, ...]
    summary_validation: ValidationEntry

    def summary_entry(self) -> ValidationEntry:
        return self.summary_validation

    def to_dict(self) -> dict:
        return {
            "task_entries": [e.to_dict() for e in self.task_entries],
            "summary_validation": self.summary_validation.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ValidationReport":
        return cls(
            task_entries=tuple(ValidationEntry.from_dict(e) for e in data["task_entries"]),
            summary_validation=ValidationEntry.from_dict(data["summary_validation"]),
        )


# -- scheduling ----------------------------------------------------------------


def schedule(plan: TaskPlan) -> list[list[TaskSpec]]:
    """Group tasks into dependency waves.

    Wave k holds every task whose dependencies all sit in earlier waves;
    within a wave tasks keep their plan order.
    """
    ids = {t.id for t in plan.tasks}
    for task in plan.tasks:
        for dep in task.dep:
            if dep not in ids:
                raise InvalidInput(
                    f"task {task.id!r} depends on {dep!r}, which is not in the plan"
                )
    placed: set[str] = set()
    waves: list[list[TaskSpec]] = []
    remaining = list(plan.tasks)
    while remaining:
        wave = [t for t in remaining if all(d in placed for d in t.dep)]
        if not wave:
            cycle_ids = sorted(t.id for t in remaining)
            raise CyclicDependencies(f"tasks {cycle_ids} form a dependency cycle")
        waves.append(wave)
        placed.update(t.id for t in wave)
        remaining = [t for t in remaining if t.id not in placed]
    return waves


# -- execution -------------------------------------------------------------------


def _dependency_context(task: TaskSpec, records: dict[str, ExecutionRecord]) -> Optional[str]:
    if not task.dep:
        return None
    lines = []
    for dep in task.dep:
        record = records[dep]
        lines.append(f"- {record.task_id} ({record.tool}): {record.result}")
    return "\n".join(lines)


def execute(
    plan: TaskPlan,
    backends: BackendSet,
    library: PromptLibrary,
    *,
    registry: ToolRegistry | None = None,
    temperature: float = DEFAULT_TEMPERATURE,
) -> list[ExecutionRecord]:
    """Run every runnable task; skip the transitive dependents of failures.

    Tasks run wave by wave in plan order; a failure never stops independent
    tasks.  Records come back in plan order regardless of execution order.
    """
    registry = registry or default_registry()
    waves = schedule(plan)
    records: dict[str, ExecutionRecord] = {}
    blocked: set[str] = set()
    started_counter = 0
    finished_counter = 0
    for wave in waves:
        for task in wave:
            bad_deps = [d for d in task.dep if d in blocked]
            if bad_deps:
                records[task.id] = ExecutionRecord(
                    task_id=task.id,
                    tool=task.name,
                    status=ExecutionStatus.SKIPPED,
                    result=f"skipped: dependency {', '.join(bad_deps)} did not succeed",
                )
                blocked.add(task.id)
                continue
            context = _dependency_context(task, records)
            started_counter += 1
            started = started_counter
            try:
                output = invoke(
                    task.name,
                    task.input,
                    backends,
                    library,
                    temperature=temperature,
                    registry=registry,
                    context=context,
                )
            except (BackendError, MalformedToolInput) as exc:
                finished_counter += 1
                records[task.id] = ExecutionRecord(
                    task_id=task.id,
                    tool=task.name,
                    status=ExecutionStatus.FAILURE,
                    result=str(exc),
                    started=started,
                    finished=finished_counter,
                )
                blocked.add(task.id)
                logger.warning("task %s failed: %s", task.id, exc)
                continue
            finished_counter += 1
            records[task.id] = ExecutionRecord(
                task_id=task.id,
                tool=task.name,
                status=ExecutionStatus.SUCCESS,
                result=output.text,
                started=started,
                finished=finished_counter,
            )
    return [records[t.id] for t in plan.tasks]


def render_results(records: list[ExecutionRecord]) -> str:
    """Serialize execution records into the per-task block shape."""
    blocks = []
    for record in records:
        blocks.append(
            "\n".join(
                (
                    f"- Task Name: {record.tool}",
                    f"- Task ID: {record.task_id}",
                    f"- Execution Status: {record.status.value}",
                    f"- Task Result: {record.result}",
                )
            )
        )
    return "\n\n".join(blocks)


# -- summarization ----------------------------------------------------------------


def parse_summary(text: str) -> ExecutionSummary:
    """Parse the framed summary block into its sections.

    Headers are matched case-sensitively at line starts; the conflicts
    section is optional; key findings and conclusion must be non-empty.
    """
    lines = text.splitlines()
    try:
        open_idx = next(i for i, line in enumerate(lines) if line.strip() == SUMMARY_OPEN)
        close_idx = next(
            i for i, line in enumerate(lines) if line.strip() == SUMMARY_CLOSE and i > open_idx
        )
    except StopIteration:
        raise MalformedModelOutput(
            f"summary must sit between {SUMMARY_OPEN} and {SUMMARY_CLOSE}"
        ) from None
    inner = lines[open_idx + 1 : close_idx]

    sections: dict[str, list[str]] = {h: [] for h in _ALL_SUMMARY_HEADERS}
    seen_order: list[str] = []
    current: Optional[str] = None
    for line in inner:
        stripped = line.strip()
        matched = None
        for header in _ALL_SUMMARY_HEADERS:
            if stripped.startswith(header):
                matched = header
                remainder = stripped[len(header) :].strip()
                if remainder:
                    sections[header].append(remainder)
                break
        if matched:
            current = matched
            if matched not in seen_order:
                seen_order.append(matched)
            continue
        if current is not None:
            sections[current].append(line.rstrip())

    missing = [h for h in _REQUIRED_SUMMARY_HEADERS if h not in seen_order]
    if missing:
        raise MalformedModelOutput(f"summary lacks required sections: {missing}")
    required_seen = [h for h in seen_order if h in _REQUIRED_SUMMARY_HEADERS]
    if required_seen != list(_REQUIRED_SUMMARY_HEADERS):
        raise MalformedModelOutput(
            f"summary sections out of order: {required_seen}"
        )

    def _text_of(header: str) -> str:
        content = [line for line in sections[header]]
        while content and not content[0].strip():
            content.pop(0)
        while content and not content[-1].strip():
            content.pop()
        return "\n".join(content).strip()

    def _bullets_of(header: str) -> tuple[str, ...]:
        return tuple(
            line.strip()[2:].strip()
            for line in sections[header]
            if line.strip().startswith("- ")
        )

    key_findings = _text_of("KEY FINDINGS:")
    conclusion = _text_of("CONCLUSION:")
    if not key_findings:
        raise MalformedModelOutput("summary key findings are empty")
    if not conclusion:
        raise MalformedModelOutput("summary conclusion is empty")
    return ExecutionSummary(
        key_findings=key_findings,
        evidence=_bullets_of("EVIDENCE AND DATA:"),
        analysis=_text_of("ANALYSIS:"),
        conflicts=_bullets_of(_CONFLICTS_HEADER),
        conclusion=conclusion,
        raw=text,
    )


def summarize(
    original_query: str,
    records: list[ExecutionRecord],
    backend: Backend,
    library: PromptLibrary,
    *,
    temperature: float = DEFAULT_TEMPERATURE,
    max_parse_retries: int = DEFAULT_MAX_PARSE_RETRIES,
    extra_instructions: str = "",
) -> ExecutionSummary:
    """Summarize task results; re-prompt on malformed output up to the retry cap."""
    results_text = render_results(records)
    if extra_instructions:
        results_text = f"{results_text}\n\n{extra_instructions}"
    system, user = library.render(
        "executor.summarize",
        {"original_query": original_query, "results": results_text},
    )
    request = CompletionRequest(system, user, temperature=temperature, tag="executor.summarize")
    last_error: Optional[MalformedModelOutput] = None
    for attempt in range(1 + max_parse_retries):
        text = backend.complete(request)
        try:
            return parse_summary(text)
        except MalformedModelOutput as exc:
            last_error = exc
            logger.warning("summary attempt %d malformed: %s", attempt + 1, exc)
    assert last_error is not None
    raise MalformedModelOutput(
        f"summary still malformed after {max_parse_retries} re-prompts: {last_error}"
    )


# -- fact checking ----------------------------------------------------------------


def _parse_validation_block(
    block_lines: list[str], *, needs_task_id: bool, context: str
) -> ValidationEntry:
    task_id: Optional[str] = None
    status: Optional[ValidationStatus] = None
    confidence: Optional[Confidence] = None
    sections: dict[str, list[str]] = {"ISSUES:": [], "EVIDENCE:": []}
    current: Optional[str] = None
    seen: set[str] = set()
    for line in block_lines:
        stripped = line.strip()
        if stripped.startswith("TASK ID:"):
            task_id = stripped[len("TASK ID:") :].strip()
            seen.add("TASK ID:")
            current = None
        elif stripped.startswith("STATUS:"):
            value = stripped[len("STATUS:") :].strip()
            try:
                status = ValidationStatus(value)
            except ValueError:
                raise MalformedModelOutput(
                    f"{context}: STATUS must be VALID or INVALID, got {value!r}"
                ) from None
            seen.add("STATUS:")
            current = None
        elif stripped.startswith("CONFIDENCE:"):
            value = stripped[len("CONFIDENCE:") :].strip()
            try:
                confidence = Confidence(value)
            except ValueError:
                raise MalformedModelOutput(
                    f"{context}: CONFIDENCE must be HIGH, MEDIUM or LOW, got {value!r}"
                ) from None
            seen.add("CONFIDENCE:")
            current = None
        elif stripped.startswith("ISSUES:"):
            current = "ISSUES:"
            seen.add("ISSUES:")
        elif stripped.startswith("EVIDENCE:"):
            current = "EVIDENCE:"
            seen.add("EVIDENCE:")
        elif current is not None and stripped.startswith("- "):
            sections[current].append(stripped[2:].strip())
    required = {"STATUS:", "CONFIDENCE:", "ISSUES:", "EVIDENCE:"}
    if needs_task_id:
        required.add("TASK ID:")
    missing = sorted(required - seen)
    if missing:
        raise MalformedModelOutput(f"{context}: missing labels {missing}")
    assert status is not None and confidence is not None
    return ValidationEntry(
        task_id=task_id if needs_task_id else None,
        status=status,
        confidence=confidence,
        issues=tuple(sections["ISSUES:"]),
        evidence=tuple(sections["EVIDENCE:"]),
    )


def _extract_blocks(lines: list[str], open_marker: str, close_marker: str) -> list[list[str]]:
    blocks = []
    i = 0
    while i < len(lines):
        if lines[i].strip() == open_marker:
            for j in range(i + 1, len(lines)):
                if lines[j].strip() == close_marker:
                    blocks.append(lines[i + 1 : j])
                    i = j
                    break
            else:
                raise MalformedModelOutput(f"{open_marker} block never closes")
        i += 1
    return blocks


def parse_validation(text: str) -> ValidationReport:
    """Parse task validation blocks plus the single summary validation block."""
    lines = text.splitlines()
    task_blocks = _extract_blocks(lines, TASK_VALIDATION_OPEN, TASK_VALIDATION_CLOSE)
    summary_blocks = _extract_blocks(lines, SUMMARY_VALIDATION_OPEN, SUMMARY_VALIDATION_CLOSE)
    if len(summary_blocks) != 1:
        raise MalformedModelOutput(
            f"expected exactly one summary validation block, found {len(summary_blocks)}"
        )
    entries = tuple(
        _parse_validation_block(block, needs_task_id=True, context=f"task validation {i + 1}")
        for i, block in enumerate(task_blocks)
    )
    summary_entry = _parse_validation_block(
        summary_blocks[0], needs_task_id=False, context="summary validation"
    )
    return ValidationReport(task_entries=entries, summary_validation=summary_entry)


def fact_check(
    query: str,
    content: str,
    summary: str,
    run_date: date,
    backend: Backend,
    library: PromptLibrary,
    *,
    temperature: float = DEFAULT_TEMPERATURE,
    source: str = "task execution results",
) -> ValidationReport:
    """Verify factual accuracy of content and summary as of the run date."""
    system, user = library.render(
        "executor.fact_check",
        {
            "current_date": run_date.isoformat(),
            "query": query,
            "source": source,
            "content": content,
            "summary": summary,
        },
    )
    text = backend.complete(
        CompletionRequest(system, user, temperature=temperature, tag="executor.fact_check")
    )
    return parse_validation(text)
