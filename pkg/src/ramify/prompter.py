"""Query refinement: optimize the raw query, recover from malformed attempts."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

from .backend import Backend, CompletionRequest
from .config import DEFAULT_MAX_PARSE_RETRIES, DEFAULT_TEMPERATURE
from .errors import InvalidInput, MalformedModelOutput
from .parsing import (
    extract_json_object,
    require_exact_keys,
    require_nonempty_string,
    require_string_list,
)
from .prompts import PromptLibrary

logger = logging.getLogger(__name__)

_OPTIMIZE_FIELDS = {"optimized_query", "original_query", "modifications"}
_RECOVERY_FIELDS = _OPTIMIZE_FIELDS | {"error_handling"}
_ERROR_HANDLING_FIELDS = {
    "original_error",
    "correction_explanation",
    "previous_attempt_analysis",
}


@dataclass(frozen=True)
class ErrorHandling:
    original_error: str
    correction_explanation: str
    previous_attempt_analysis: str

    def to_dict(self) -> dict:
        return {
            "original_error": self.original_error,
            "correction_explanation": self.correction_explanation,
            "previous_attempt_analysis": self.previous_attempt_analysis,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ErrorHandling":
        return cls(
            original_error=data["original_error"],
            correction_explanation=data["correction_explanation"],
            previous_attempt_analysis=data["previous_attempt_analysis"],
        )


@dataclass(frozen=True)
class OptimizedQuery:
    """Refined query plus the record of how it came to be."""

    optimized_query: str
    original_query: str
    modifications: tuple[str, ...] = ()
    error_handling: Optional[ErrorHandling] = None

    def to_dict(self) -> dict:
        return {
            "optimized_query": self.optimized_query,
            "original_query": self.original_query,
            "modifications": list(self.modifications),
            "error_handling": self.error_handling.to_dict() if self.error_handling else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OptimizedQuery":
        raw_eh = data.get("error_handling")
        return cls(
            optimized_query=data["optimized_query"],
            original_query=data["original_query"],
            modifications=tuple(data.get("modifications", [])),
            error_handling=ErrorHandling.from_dict(raw_eh) if raw_eh else None,
        )


def parse_optimize_response(text: str) -> OptimizedQuery:
    """Parse the plain optimization document: exactly three fields."""
    obj = extract_json_object(text)
    require_exact_keys(obj, _OPTIMIZE_FIELDS, "optimization response")
    return OptimizedQuery(
        optimized_query=require_nonempty_string(obj, "optimized_query", "optimization response"),
        original_query=require_nonempty_string(obj, "original_query", "optimization response"),
        modifications=tuple(require_string_list(obj, "modifications", "optimization response")),
    )


def parse_recovery_response(text: str) -> OptimizedQuery:
    """Parse the recovery document: the three base fields plus error_handling."""
    obj = extract_json_object(text)
    require_exact_keys(obj, _RECOVERY_FIELDS, "recovery response")
    error_handling = obj["error_handling"]
    if not isinstance(error_handling, dict):
        raise MalformedModelOutput("recovery response: error_handling must be an object")
    require_exact_keys(error_handling, _ERROR_HANDLING_FIELDS, "recovery error_handling")
    for key in _ERROR_HANDLING_FIELDS:
        require_nonempty_string(error_handling, key, "recovery error_handling")
    return OptimizedQuery(
        optimized_query=require_nonempty_string(obj, "optimized_query", "recovery response"),
        original_query=require_nonempty_string(obj, "original_query", "recovery response"),
        modifications=tuple(require_string_list(obj, "modifications", "recovery response")),
        error_handling=ErrorHandling.from_dict(error_handling),
    )


def _pin_original(result: OptimizedQuery, raw_query: str) -> OptimizedQuery:
    """Keep the pipeline's notion of the original query, whatever the model echoed."""
    if result.original_query != raw_query:
        logger.warning(
            "model echoed a different original query (%r); keeping the pipeline's %r",
            result.original_query,
            raw_query,
        )
        return OptimizedQuery(
            optimized_query=result.optimized_query,
            original_query=raw_query,
            modifications=result.modifications,
            error_handling=result.error_handling,
        )
    return result


def recover_query(
    raw_query: str,
    error_message: str,
    failed_result: str,
    backend: Backend,
    library: PromptLibrary,
    *,
    temperature: float = DEFAULT_TEMPERATURE,
) -> OptimizedQuery:
    """One correction attempt against the error-handling prompt contract."""
    system, user = library.render(
        "prompter.error",
        {
            "original_query": raw_query,
            "error_message": error_message,
            "failed_result": failed_result,
        },
    )
    text = backend.complete(
        CompletionRequest(system, user, temperature=temperature, tag="prompter.error")
    )
    try:
        return _pin_original(parse_recovery_response(text), raw_query)
    except MalformedModelOutput as exc:
        exc.completion_text = text
        raise


def optimize_query(
    raw_query: str,
    backend: Backend,
    library: PromptLibrary,
    *,
    temperature: float = DEFAULT_TEMPERATURE,
    max_parse_retries: int = DEFAULT_MAX_PARSE_RETRIES,
) -> OptimizedQuery:
    """Refine a raw query; fall back to recovery attempts on malformed output.

    Issues at most ``1 + max_parse_retries`` completions: the plain
    optimization call, then one recovery call per remaining retry.  The
    returned original_query always equals ``raw_query``.
    """
    if not raw_query or not raw_query.strip():
        raise InvalidInput("query must be non-empty")
    system, user = library.render("prompter.optimize", {"input": raw_query})
    text = backend.complete(
        CompletionRequest(system, user, temperature=temperature, tag="prompter.optimize")
    )
    try:
        return _pin_original(parse_optimize_response(text), raw_query)
    except MalformedModelOutput as exc:
        error: MalformedModelOutput = exc
        failed = text
    for attempt in range(1, max_parse_retries + 1):
        logger.warning(
            "optimization output malformed (%s); recovery attempt %d/%d",
            error,
            attempt,
            max_parse_retries,
        )
        try:
            return recover_query(
                raw_query, str(error), failed, backend, library, temperature=temperature
            )
        except MalformedModelOutput as exc:
            error = exc
            failed = getattr(exc, "completion_text", failed)
    raise MalformedModelOutput(
        f"query optimization still malformed after {max_parse_retries} recovery attempts: {error}"
    )
