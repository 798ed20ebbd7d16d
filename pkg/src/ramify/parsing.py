"""Low-level helpers for digging structured payloads out of completion text."""

from __future__ import annotations

import json
import re

from .errors import MalformedModelOutput

_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)


def strip_code_fences(text: str) -> str:
    """Return the content of the first fenced block, or the text unchanged."""
    match = _FENCE_RE.search(text)
    if match:
        return match.group(1)
    return text


def _balanced_span(text: str, start: int, open_ch: str, close_ch: str) -> int | None:
    """Index one past the closing delimiter matching text[start], or None."""
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == open_ch:
            depth += 1
        elif ch == close_ch:
            depth -= 1
            if depth == 0:
                return i + 1
    return None


def _extract_json(text: str, open_ch: str, close_ch: str, want: type) -> object:
    candidate_text = strip_code_fences(text)
    for start, ch in enumerate(candidate_text):
        if ch != open_ch:
            continue
        end = _balanced_span(candidate_text, start, open_ch, close_ch)
        if end is None:
            continue
        try:
            value = json.loads(candidate_text[start:end])
        except json.JSONDecodeError:
            continue
        if isinstance(value, want):
            return value
    raise MalformedModelOutput(
        f"no parseable JSON {'object' if want is dict else 'array'} found in completion"
    )


def extract_json_object(text: str) -> dict:
    """Find and parse the first balanced JSON object in the text."""
    return _extract_json(text, "{", "}", dict)


def extract_json_array(text: str) -> list:
    """Find and parse the first balanced JSON array in the text."""
    return _extract_json(text, "[", "]", list)


def require_exact_keys(obj: dict, required: set[str], context: str) -> None:
    """Reject objects whose key set differs from ``required`` in any way."""
    keys = set(obj)
    missing = required - keys
    extra = keys - required
    if missing:
        raise MalformedModelOutput(f"{context}: missing fields {sorted(missing)}")
    if extra:
        raise MalformedModelOutput(f"{context}: unexpected fields {sorted(extra)}")


def require_nonempty_string(obj: dict, key: str, context: str) -> str:
    value = obj.get(key)
    if not isinstance(value, str) or not value.strip():
        raise MalformedModelOutput(f"{context}: field {key!r} must be a non-empty string")
    return value


def require_string_list(obj: dict, key: str, context: str) -> list[str]:
    value = obj.get(key)
    if not isinstance(value, list) or not all(isinstance(item, str) for item in value):
        raise MalformedModelOutput(f"{context}: field {key!r} must be a list of strings")
    return value


def normalize_whitespace(text: str) -> str:
    """Collapse all whitespace runs to single spaces and trim the ends."""
    return " ".join(text.split())
