"""Completion backends: deterministic scripted playback and a generic HTTP client."""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import requests

from .errors import (
    DocumentError,
    EmptyCompletion,
    InvalidInput,
    ScriptExhausted,
    TransportError,
)

logger = logging.getLogger(__name__)

SCRIPT_SCHEMA = "ramify/script@1"
DEFAULT_RESPONSE_PATH: tuple = ("choices", 0, "message", "content")


@dataclass(frozen=True)
class CompletionRequest:
    """One prompt pair sent to a backend, tagged with its prompt contract."""

    system_prompt: str
    user_prompt: str
    temperature: float
    tag: str


@dataclass(frozen=True)
class TranscriptEntry:
    request: CompletionRequest
    response: str


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> str:  # pragma: no cover
        ...


@dataclass(frozen=True)
class BackendSet:
    """Backends by role: reasoning for analysis prompts, retrieval for search tools."""

    reasoning: Backend
    retrieval: Backend


def record_transcript(backend) -> tuple[TranscriptEntry, ...]:
    """Snapshot the ordered request/response pairs a backend has served."""
    return tuple(backend.transcript)


# -- scripted backend ---------------------------------------------------------


@dataclass
class ScriptEntry:
    """One canned response, matched by tag and/or a user-prompt substring.

    All specified conditions must hold for a request to match; ``calls``
    limits how often the entry may serve (None means unlimited).  A custom
    ``predicate`` can replace or sharpen the declarative match.
    """

    response: str
    tag: Optional[str] = None
    contains: Optional[str] = None
    calls: Optional[int] = None
    predicate: Optional[Callable[[CompletionRequest], bool]] = None

    def __post_init__(self) -> None:
        if self.calls is not None and self.calls < 1:
            raise InvalidInput(f"entry call budget must be >= 1, got {self.calls}")

    def matches(self, request: CompletionRequest) -> bool:
        if self.tag is not None and request.tag != self.tag:
            return False
        if self.contains is not None and self.contains not in request.user_prompt:
            return False
        if self.predicate is not None and not self.predicate(request):
            return False
        return True


class ScriptedBackend:
    """Plays back scripted responses deterministically; never touches the network."""

    def __init__(self, entries: Sequence[ScriptEntry]):
        self._entries = [e for e in entries]
        self._remaining = [e.calls for e in self._entries]
        self._lock = threading.Lock()
        self.transcript: list[TranscriptEntry] = []

    def complete(self, request: CompletionRequest) -> str:
        with self._lock:
            for i, entry in enumerate(self._entries):
                if self._remaining[i] == 0:
                    continue
                if not entry.matches(request):
                    continue
                if self._remaining[i] is not None:
                    self._remaining[i] -= 1
                if not entry.response.strip():
                    raise EmptyCompletion(
                        f"scripted entry for tag {request.tag!r} holds an empty response"
                    )
                self.transcript.append(TranscriptEntry(request, entry.response))
                return entry.response
        raise ScriptExhausted(
            f"no scripted entry left for tag {request.tag!r} "
            f"(user prompt starts {request.user_prompt[:60]!r})"
        )


def load_script(path: str | Path) -> list[ScriptEntry]:
    """Read a script file (versioned JSON) into entries, preserving order."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DocumentError(f"cannot read script file {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema") != SCRIPT_SCHEMA:
        raise DocumentError(
            f"script file {path} must carry schema {SCRIPT_SCHEMA!r}, got {doc.get('schema')!r}"
            if isinstance(doc, dict)
            else f"script file {path} must be a JSON object"
        )
    raw_entries = doc.get("entries")
    if not isinstance(raw_entries, list):
        raise DocumentError(f"script file {path} needs an 'entries' list")
    entries = []
    for i, raw in enumerate(raw_entries):
        if not isinstance(raw, dict) or "response" not in raw:
            raise DocumentError(f"script entry {i} must be an object with a 'response'")
        unknown = set(raw) - {"response", "tag", "contains", "calls"}
        if unknown:
            raise DocumentError(f"script entry {i} has unknown fields {sorted(unknown)}")
        try:
            entries.append(
                ScriptEntry(
                    response=raw["response"],
                    tag=raw.get("tag"),
                    contains=raw.get("contains"),
                    calls=raw.get("calls"),
                )
            )
        except InvalidInput as exc:
            raise DocumentError(f"script entry {i}: {exc}") from exc
    return entries


# -- HTTP backend -------------------------------------------------------------


@dataclass
class HttpBackend:
    """Chat-completion style HTTP client for any compatible endpoint.

    The request document is ``{"model", "messages", "temperature"}`` with
    system and user messages; the completion text is pulled from the
    response JSON at ``response_path``.  The credential is read from the
    environment variable named by ``credential_env`` at call time and sent
    as a bearer token.
    """

    endpoint: str
    model: str
    credential_env: Optional[str] = None
    response_path: Sequence = DEFAULT_RESPONSE_PATH
    timeout: float = 60.0
    transcript: list[TranscriptEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._lock = threading.Lock()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.credential_env:
            import os

            value = os.environ.get(self.credential_env)
            if not value:
                raise TransportError(
                    f"credential environment variable {self.credential_env!r} is not set"
                )
            headers["Authorization"] = f"Bearer {value}"
        return headers

    def complete(self, request: CompletionRequest) -> str:
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
        }
        try:
            response = requests.post(
                self.endpoint, json=payload, headers=self._headers(), timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise TransportError(f"request to {self.endpoint} failed: {exc}") from exc
        if not 200 <= response.status_code < 300:
            raise TransportError(
                f"endpoint {self.endpoint} answered HTTP {response.status_code}"
            )
        try:
            body = response.json()
        except ValueError as exc:
            raise TransportError(f"endpoint returned non-JSON body: {exc}") from exc
        text = body
        for step in self.response_path:
            try:
                text = text[step]
            except (KeyError, IndexError, TypeError) as exc:
                raise TransportError(
                    f"response body lacks path {list(self.response_path)!r}: {exc}"
                ) from exc
        if not isinstance(text, str) or not text.strip():
            raise EmptyCompletion("endpoint returned an empty completion")
        with self._lock:
            self.transcript.append(TranscriptEntry(request, text))
        return text


# -- retry wrapper ------------------------------------------------------------


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_seconds: float = 0.5
    backoff_multiplier: float = 2.0

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise InvalidInput(f"max_attempts must be >= 1, got {self.max_attempts}")
        if self.backoff_seconds < 0:
            raise InvalidInput("backoff_seconds must be >= 0")


def with_retry(action: Callable[[], str], policy: RetryPolicy, sleep=time.sleep) -> str:
    """Run ``action`` under the policy, retrying transient backend failures only.

    Only transport errors and empty completions are retried; anything else
    (including malformed-output parse errors) propagates on the first raise.
    """
    delay = policy.backoff_seconds
    last: Exception | None = None
    for attempt in range(1, policy.max_attempts + 1):
        try:
            return action()
        except (TransportError, EmptyCompletion) as exc:
            last = exc
            logger.warning("attempt %d/%d failed: %s", attempt, policy.max_attempts, exc)
            if attempt < policy.max_attempts:
                sleep(delay)
                delay *= policy.backoff_multiplier
    assert last is not None
    raise last


class RetryingBackend:
    """Wrap a backend so each completion is retried per the policy."""

    def __init__(self, inner, policy: RetryPolicy, sleep=time.sleep):
        self._inner = inner
        self._policy = policy
        self._sleep = sleep

    @property
    def transcript(self) -> list[TranscriptEntry]:
        return self._inner.transcript

    def complete(self, request: CompletionRequest) -> str:
        return with_retry(lambda: self._inner.complete(request), self._policy, self._sleep)
