"""Prompt template bundle: loading, placeholder rendering, user overrides."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional

from ..errors import BundleError, MissingPlaceholder, MissingTemplate, UnknownPlaceholder

TEMPLATES_SCHEMA = "ramify/templates@1"

REQUIRED_TEMPLATE_IDS = (
    "prompter.optimize",
    "prompter.error",
    "planner.decompose",
    "planner.retry",
    "planner.validate",
    "tool.news_search",
    "tool.event_extractor",
    "tool.history_analyzer",
    "tool.reasoning",
    "tool.info_search",
    "executor.summarize",
    "executor.fact_check",
    "engine.controller",
    "engine.breadth",
    "engine.depth",
    "response.final",
    "eval.system",
    "eval.judge",
    "n2q.question",
)

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")

# Segment kinds produced by the scanner.
_LIT = "lit"
_PH = "ph"


def _scan_segments(text: str, context: str) -> tuple[tuple[str, str], ...]:
    """Split template text into literal and placeholder segments.

    ``{name}`` marks a placeholder; ``{{`` and ``}}`` are escapes for
    literal braces.  Anything else brace-shaped is a bundle defect and is
    rejected at load time rather than at render time.
    """
    segments: list[tuple[str, str]] = []
    buf: list[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "{":
            if text[i + 1 : i + 2] == "{":
                buf.append("{")
                i += 2
                continue
            match = _IDENT_RE.match(text, i + 1)
            if not match or text[match.end() : match.end() + 1] != "}":
                raise BundleError(f"{context}: stray '{{' at offset {i}")
            if buf:
                segments.append((_LIT, "".join(buf)))
                buf = []
            segments.append((_PH, match.group(0)))
            i = match.end() + 1
        elif ch == "}":
            if text[i + 1 : i + 2] == "}":
                buf.append("}")
                i += 2
                continue
            raise BundleError(f"{context}: stray '}}' at offset {i}")
        else:
            buf.append(ch)
            i += 1
    if buf:
        segments.append((_LIT, "".join(buf)))
    return tuple(segments)


def _render_segments(segments: tuple[tuple[str, str], ...], bindings: dict) -> str:
    parts = []
    for kind, value in segments:
        parts.append(str(bindings[value]) if kind == _PH else value)
    return "".join(parts)


@dataclass(frozen=True)
class PromptTemplate:
    """One prompt contract: a system part and a user part with placeholders."""

    id: str
    system: str
    user: str
    _system_segments: tuple = ()
    _user_segments: tuple = ()

    @classmethod
    def create(cls, template_id: str, system: str, user: str) -> "PromptTemplate":
        return cls(
            id=template_id,
            system=system,
            user=user,
            _system_segments=_scan_segments(system, f"{template_id} (system)"),
            _user_segments=_scan_segments(user, f"{template_id} (user)"),
        )

    @property
    def placeholders(self) -> frozenset[str]:
        names = {v for k, v in self._system_segments if k == _PH}
        names |= {v for k, v in self._user_segments if k == _PH}
        return frozenset(names)


def render(template: PromptTemplate, bindings: dict) -> tuple[str, str]:
    """Substitute placeholder bindings; returns the (system, user) text pair.

    Bindings must cover the template's placeholders exactly: a missing name
    raises MissingPlaceholder, a surplus one raises UnknownPlaceholder.
    """
    wanted = template.placeholders
    given = set(bindings)
    missing = wanted - given
    if missing:
        raise MissingPlaceholder(
            f"template {template.id}: no value for {sorted(missing)}"
        )
    extra = given - wanted
    if extra:
        raise UnknownPlaceholder(
            f"template {template.id}: unknown binding names {sorted(extra)}"
        )
    return (
        _render_segments(template._system_segments, bindings),
        _render_segments(template._user_segments, bindings),
    )


class PromptLibrary:
    """Immutable mapping of template ids to templates."""

    def __init__(self, templates: dict[str, PromptTemplate]):
        self._templates = dict(templates)

    def __contains__(self, template_id: str) -> bool:
        return template_id in self._templates

    def ids(self) -> list[str]:
        return sorted(self._templates)

    def get(self, template_id: str) -> PromptTemplate:
        try:
            return self._templates[template_id]
        except KeyError:
            raise MissingTemplate(template_id) from None

    def render(self, template_id: str, bindings: dict) -> tuple[str, str]:
        return render(self.get(template_id), bindings)

    def with_overrides(self, other: "PromptLibrary") -> "PromptLibrary":
        merged = dict(self._templates)
        merged.update(other._templates)
        return PromptLibrary(merged)


def _read_template_file(base: Path, name: str, context: str) -> str:
    path = base / name
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise BundleError(f"{context}: cannot read {path}: {exc}") from exc
    # Files end with a conventional newline that is not part of the prompt.
    return text.removesuffix("\n")


def load_bundle(path: str | Path, defaults: Optional[PromptLibrary] = None) -> PromptLibrary:
    """Load a template bundle directory; merge over ``defaults`` when given.

    Without defaults the bundle must supply every required template id.
    With defaults, the bundle may override any subset and the merged result
    is checked for completeness instead.
    """
    base = Path(path)
    manifest_path = base / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise BundleError(f"cannot read bundle manifest {manifest_path}: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("schema") != TEMPLATES_SCHEMA:
        raise BundleError(
            f"bundle manifest must carry schema {TEMPLATES_SCHEMA!r}, "
            f"got {manifest.get('schema') if isinstance(manifest, dict) else manifest!r}"
        )
    entries = manifest.get("templates")
    if not isinstance(entries, dict):
        raise BundleError("bundle manifest needs a 'templates' object")

    templates: dict[str, PromptTemplate] = {}
    for template_id, entry in entries.items():
        if not isinstance(entry, dict) or "system" not in entry or "user" not in entry:
            raise BundleError(f"manifest entry {template_id!r} needs system and user files")
        template = PromptTemplate.create(
            template_id,
            system=_read_template_file(base, entry["system"], template_id),
            user=_read_template_file(base, entry["user"], template_id),
        )
        declared = entry.get("placeholders")
        if declared is not None and set(declared) != set(template.placeholders):
            raise BundleError(
                f"manifest entry {template_id!r} declares placeholders "
                f"{sorted(declared)} but the files use {sorted(template.placeholders)}"
            )
        templates[template_id] = template

    library = PromptLibrary(templates)
    if defaults is not None:
        library = defaults.with_overrides(library)
    missing = [tid for tid in REQUIRED_TEMPLATE_IDS if tid not in library]
    if missing:
        raise MissingTemplate(missing)
    return library


@lru_cache(maxsize=1)
def default_library() -> PromptLibrary:
    """The bundle shipped with the package."""
    return load_bundle(Path(__file__).parent / "data")
