"""Tool registry and invocation: the five built-in agents plus user extensions."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .backend import BackendSet, CompletionRequest
from .config import DEFAULT_TEMPERATURE
from .errors import InvalidInput, MalformedToolInput, UnknownTool
from .prompts import PromptLibrary

NEWS_COUNT_MIN = 1
NEWS_COUNT_MAX = 5

CONTEXT_HEADER = "Context from dependencies:"


class InputContract(str, Enum):
    FREE_TEXT = "free_text"
    QUERY_COUNT = "query_count"


class BackendRole(str, Enum):
    REASONING = "reasoning"
    RETRIEVAL = "retrieval"


@dataclass(frozen=True)
class ToolDescriptor:
    """What a tool is called, what it takes, and which backend serves it.

    ``placeholder`` names the template slot the (free text) input fills;
    query/count tools always bind ``query`` and ``needed_count``.
    ``input_hint`` is the extra line shown under the tool in the agent
    listing, if any.
    """

    name: str
    description: str
    input_contract: InputContract
    backend_role: BackendRole
    template_id: str
    placeholder: str = "query"
    input_hint: str = ""


@dataclass(frozen=True)
class NewsQuery:
    query: str
    needed_count: int

    def __post_init__(self) -> None:
        if not self.query or not self.query.strip():
            raise InvalidInput("news query must be non-empty")
        if not NEWS_COUNT_MIN <= self.needed_count <= NEWS_COUNT_MAX:
            raise InvalidInput(
                f"article count must be {NEWS_COUNT_MIN}-{NEWS_COUNT_MAX}, "
                f"got {self.needed_count}"
            )

    def format(self) -> str:
        return f"{self.query},{self.needed_count}"


@dataclass(frozen=True)
class ToolOutput:
    tool: str
    text: str


class ToolRegistry:
    """Ordered collection of tool descriptors."""

    def __init__(self) -> None:
        self._tools: dict[str, ToolDescriptor] = {}

    def register(self, descriptor: ToolDescriptor) -> None:
        if descriptor.name in self._tools:
            raise InvalidInput(f"tool {descriptor.name!r} is already registered")
        self._tools[descriptor.name] = descriptor

    def get(self, name: str) -> ToolDescriptor:
        try:
            return self._tools[name]
        except KeyError:
            raise UnknownTool(f"no tool named {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._tools

    def descriptors(self) -> list[ToolDescriptor]:
        return list(self._tools.values())


def default_registry() -> ToolRegistry:
    """The five built-in agents, in their canonical listing order."""
    registry = ToolRegistry()
    registry.register(
        ToolDescriptor(
            name="news_search",
            description="Search and retrieve news articles and real-time information",
            input_contract=InputContract.QUERY_COUNT,
            backend_role=BackendRole.RETRIEVAL,
            template_id="tool.news_search",
            input_hint='Input format: "query,number" (e.g. "Ukraine conflict,5")',
        )
    )
    registry.register(
        ToolDescriptor(
            name="event_extractor",
            description="Extract key events and their relationships from text",
            input_contract=InputContract.FREE_TEXT,
            backend_role=BackendRole.REASONING,
            template_id="tool.event_extractor",
            placeholder="text",
        )
    )
    registry.register(
        ToolDescriptor(
            name="history_analyzer",
            description="Analyze historical patterns and similar cases",
            input_contract=InputContract.FREE_TEXT,
            backend_role=BackendRole.REASONING,
            template_id="tool.history_analyzer",
            placeholder="event",
        )
    )
    registry.register(
        ToolDescriptor(
            name="info_search",
            description="Search for supplementary information",
            input_contract=InputContract.FREE_TEXT,
            backend_role=BackendRole.RETRIEVAL,
            template_id="tool.info_search",
        )
    )
    registry.register(
        ToolDescriptor(
            name="llm",
            description="Generate answers using language model reasoning",
            input_contract=InputContract.FREE_TEXT,
            backend_role=BackendRole.REASONING,
            template_id="tool.reasoning",
        )
    )
    return registry


def describe_tools(registry: ToolRegistry) -> str:
    """Render the agent listing block fed to planning prompts."""
    lines = ["Available agents:"]
    for descriptor in registry.descriptors():
        lines.append(f"- {descriptor.name}: {descriptor.description}")
        if descriptor.input_hint:
            lines.append(f"  {descriptor.input_hint}")
    return "\n".join(lines)


def parse_news_input(text: str) -> NewsQuery:
    """Split ``query,number`` on the last comma; the query may itself hold commas."""
    cut = text.rfind(",")
    if cut < 0:
        raise MalformedToolInput(
            f'news_search input must look like "query,number", got {text!r}'
        )
    query = text[:cut].strip()
    count_text = text[cut + 1 :].strip()
    if not query:
        raise MalformedToolInput("news_search query part is empty")
    try:
        needed_count = int(count_text)
    except ValueError:
        raise MalformedToolInput(
            f"news_search article count must be an integer, got {count_text!r}"
        ) from None
    if not NEWS_COUNT_MIN <= needed_count <= NEWS_COUNT_MAX:
        raise MalformedToolInput(
            f"news_search article count must be {NEWS_COUNT_MIN}-{NEWS_COUNT_MAX}, "
            f"got {needed_count}"
        )
    return NewsQuery(query=query, needed_count=needed_count)


def _with_context(text: str, context: str | None) -> str:
    if not context:
        return text
    return f"{text}\n\n{CONTEXT_HEADER}\n{context}"


def invoke(
    name: str,
    input_text: str,
    backends: BackendSet,
    library: PromptLibrary,
    *,
    temperature: float = DEFAULT_TEMPERATURE,
    registry: ToolRegistry | None = None,
    context: str | None = None,
) -> ToolOutput:
    """Run one tool: validate its input, render its prompt, hit its backend.

    ``context`` carries predecessor results; it is appended under a context
    section inside the query text, after input validation, so query/count
    inputs still parse on the raw task input.
    """
    registry = registry or default_registry()
    descriptor = registry.get(name)
    if descriptor.input_contract is InputContract.QUERY_COUNT:
        news = parse_news_input(input_text)
        bindings = {
            "needed_count": news.needed_count,
            "query": _with_context(news.query, context),
        }
    else:
        bindings = {descriptor.placeholder: _with_context(input_text, context)}
    system, user = library.render(descriptor.template_id, bindings)
    backend = (
        backends.retrieval
        if descriptor.backend_role is BackendRole.RETRIEVAL
        else backends.reasoning
    )
    text = backend.complete(
        CompletionRequest(system, user, temperature=temperature, tag=descriptor.template_id)
    )
    return ToolOutput(tool=name, text=text)
