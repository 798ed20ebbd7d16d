"""Evaluation harness: news-to-question generation, dual-order judging, win rates."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Optional

from .backend import Backend, CompletionRequest
from .config import DEFAULT_TEMPERATURE
from .errors import BackendError, DocumentError, MalformedModelOutput
from .parsing import extract_json_object, require_exact_keys
from .prompts import PromptLibrary

logger = logging.getLogger(__name__)

N2Q_SCHEMA = "ramify/n2q@1"
ANSWERS_SCHEMA = "ramify/answers@1"
RESULTS_SCHEMA = "ramify/eval@1"

CRITERIA = (
    "analytical_depth",
    "specific_arguments",
    "innovation",
    "practicality",
    "logical_coherence",
)

_SLOT_TOKENS = ("model_a", "model_b")


class Domain(str, Enum):
    BIOMEDICINE = "Biomedicine"
    ECONOMICS = "Economics"
    GEOPOLITICS = "Geopolitics"
    INDUSTRY = "Industry"
    TECHNOLOGY = "Technology"


class Side(str, Enum):
    """Stable system identity, independent of presentation order."""

    A = "system_a"
    B = "system_b"

    @property
    def other(self) -> "Side":
        return Side.B if self is Side.A else Side.A


class Ordering(Enum):
    A_FIRST = "a_first"
    B_FIRST = "b_first"


# -- question generation ---------------------------------------------------------


@dataclass(frozen=True)
class N2QItem:
    domain: Domain
    news: str
    question: str


def generate_question(
    news: str,
    backend: Backend,
    library: PromptLibrary,
    *,
    temperature: float = DEFAULT_TEMPERATURE,
) -> str:
    """Turn one news text into a single self-contained analysis question."""
    system, user = library.render("n2q.question", {"news": news})
    text = backend.complete(
        CompletionRequest(system, user, temperature=temperature, tag="n2q.question")
    )
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("Question:"):
            question = stripped[len("Question:") :].strip()
            if question:
                return question
    raise MalformedModelOutput("questioner output has no 'Question:' line")


def build_n2q_items(
    news_items: list[tuple[Domain, str]],
    backend: Backend,
    library: PromptLibrary,
    *,
    temperature: float = DEFAULT_TEMPERATURE,
) -> list[N2QItem]:
    """Generate questions for many news texts, dropping the ones that fail."""
    items = []
    for domain, news in news_items:
        try:
            question = generate_question(news, backend, library, temperature=temperature)
        except (MalformedModelOutput, BackendError) as exc:
            logger.warning("skipping %s news item: %s", domain.value, exc)
            continue
        items.append(N2QItem(domain=domain, news=news, question=question))
    return items


def save_n2q_items(items: list[N2QItem], path: str | Path) -> None:
    doc = {
        "schema": N2Q_SCHEMA,
        "items": [
            {"domain": i.domain.value, "news": i.news, "question": i.question} for i in items
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_n2q_items(path: str | Path) -> list[N2QItem]:
    doc = _read_document(path, N2Q_SCHEMA)
    items = []
    for i, raw in enumerate(doc.get("items", [])):
        try:
            items.append(
                N2QItem(domain=Domain(raw["domain"]), news=raw["news"], question=raw["question"])
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DocumentError(f"bad question item {i} in {path}: {exc}") from exc
    return items


def answer_question(
    question: str,
    backend: Backend,
    library: PromptLibrary,
    *,
    temperature: float = DEFAULT_TEMPERATURE,
) -> str:
    """Produce a single-shot baseline answer for a question."""
    system, user = library.render("eval.system", {"question": question})
    return backend.complete(
        CompletionRequest(system, user, temperature=temperature, tag="eval.system")
    )


# -- judging --------------------------------------------------------------------


@dataclass(frozen=True)
class CriterionVerdict:
    winner: Side
    reason: str


@dataclass(frozen=True)
class RoundVerdict:
    """One judging round, already mapped back to stable system identities."""

    ordering: Ordering
    criteria: dict[str, CriterionVerdict]
    overall_winner: Side


def parse_judge_verdict(text: str) -> dict:
    """Parse the judge JSON in slot space (model_a/model_b), strictly."""
    obj = extract_json_object(text)
    require_exact_keys(obj, {"criteria", "overall_winner"}, "judge verdict")
    criteria = obj["criteria"]
    if not isinstance(criteria, dict):
        raise MalformedModelOutput("judge verdict: criteria must be an object")
    require_exact_keys(criteria, set(CRITERIA), "judge criteria")
    parsed: dict[str, tuple[str, str]] = {}
    for key in CRITERIA:
        entry = criteria[key]
        if not isinstance(entry, dict):
            raise MalformedModelOutput(f"judge criterion {key} must be an object")
        require_exact_keys(entry, {"winner", "reason"}, f"judge criterion {key}")
        winner = entry["winner"]
        if winner not in _SLOT_TOKENS:
            raise MalformedModelOutput(
                f"judge criterion {key}: winner must be one of {_SLOT_TOKENS}, got {winner!r}"
            )
        reason = entry["reason"]
        if not isinstance(reason, str) or not reason.strip():
            raise MalformedModelOutput(f"judge criterion {key}: reason must be a non-empty string")
        parsed[key] = (winner, reason)
    overall = obj["overall_winner"]
    if overall not in _SLOT_TOKENS:
        raise MalformedModelOutput(
            f"judge overall_winner must be one of {_SLOT_TOKENS}, got {overall!r}"
        )
    return {"criteria": parsed, "overall_winner": overall}


def derotate(slot_winner: str, ordering: Ordering) -> Side:
    """Map a slot token back to the system that actually filled the slot."""
    if slot_winner not in _SLOT_TOKENS:
        raise MalformedModelOutput(f"unknown slot token {slot_winner!r}")
    first = Side.A if ordering is Ordering.A_FIRST else Side.B
    return first if slot_winner == "model_a" else first.other


def judge_round(
    question: str,
    answer_a: str,
    answer_b: str,
    ordering: Ordering,
    backend: Backend,
    library: PromptLibrary,
    *,
    temperature: float = DEFAULT_TEMPERATURE,
) -> RoundVerdict:
    """Judge one round with the answers presented in the given order."""
    if ordering is Ordering.A_FIRST:
        slot_a, slot_b = answer_a, answer_b
    else:
        slot_a, slot_b = answer_b, answer_a
    system, user = library.render(
        "eval.judge", {"question": question, "answer_a": slot_a, "answer_b": slot_b}
    )
    text = backend.complete(
        CompletionRequest(system, user, temperature=temperature, tag="eval.judge")
    )
    raw = parse_judge_verdict(text)
    criteria = {
        key: CriterionVerdict(winner=derotate(winner, ordering), reason=reason)
        for key, (winner, reason) in raw["criteria"].items()
    }
    return RoundVerdict(
        ordering=ordering,
        criteria=criteria,
        overall_winner=derotate(raw["overall_winner"], ordering),
    )


def dual_comparison(
    question: str,
    answer_a: str,
    answer_b: str,
    backend: Backend,
    library: PromptLibrary,
    *,
    temperature: float = DEFAULT_TEMPERATURE,
) -> tuple[RoundVerdict, RoundVerdict]:
    """Judge twice with the presentation order swapped between rounds."""
    first = judge_round(
        question, answer_a, answer_b, Ordering.A_FIRST, backend, library, temperature=temperature
    )
    second = judge_round(
        question, answer_a, answer_b, Ordering.B_FIRST, backend, library, temperature=temperature
    )
    return first, second


# -- aggregation -----------------------------------------------------------------


def _zero_points() -> dict[str, int]:
    return {key: 0 for key in CRITERIA}


@dataclass
class DomainTally:
    """Criterion points for one domain; each round awards one point per criterion."""

    questions: int = 0
    rejected: int = 0
    points_a: dict[str, int] = field(default_factory=_zero_points)
    points_b: dict[str, int] = field(default_factory=_zero_points)

    def add_round(self, verdict: RoundVerdict) -> None:
        for key, criterion in verdict.criteria.items():
            if criterion.winner is Side.A:
                self.points_a[key] += 1
            else:
                self.points_b[key] += 1

    def merged(self, other: "DomainTally") -> "DomainTally":
        return DomainTally(
            questions=self.questions + other.questions,
            rejected=self.rejected + other.rejected,
            points_a={k: self.points_a[k] + other.points_a[k] for k in CRITERIA},
            points_b={k: self.points_b[k] + other.points_b[k] for k in CRITERIA},
        )


@dataclass(frozen=True)
class EvalItem:
    domain: Domain
    question: str
    answer_a: str
    answer_b: str


def criterion_rate(tally: DomainTally, criterion: str, side: Side) -> Optional[Fraction]:
    """Share of this criterion's points won, as an exact percentage."""
    if tally.questions == 0:
        return None
    points = tally.points_a if side is Side.A else tally.points_b
    return Fraction(points[criterion] * 100, 2 * tally.questions)


def total_rate(tally: DomainTally, side: Side) -> Optional[Fraction]:
    """Share of all criterion points won across the tally."""
    if tally.questions == 0:
        return None
    points = tally.points_a if side is Side.A else tally.points_b
    return Fraction(sum(points.values()) * 100, 2 * tally.questions * len(CRITERIA))


@dataclass
class WinRateTable:
    """Per-domain criterion points for two named systems."""

    name_a: str
    name_b: str
    domains: dict[str, DomainTally]

    def overall(self) -> DomainTally:
        merged = DomainTally()
        for tally in self.domains.values():
            merged = merged.merged(tally)
        return merged

    def to_document(self) -> dict:
        return {
            "schema": RESULTS_SCHEMA,
            "criteria": list(CRITERIA),
            "name_a": self.name_a,
            "name_b": self.name_b,
            "domains": {
                domain: {
                    "questions": tally.questions,
                    "rejected": tally.rejected,
                    "points_a": dict(tally.points_a),
                    "points_b": dict(tally.points_b),
                }
                for domain, tally in sorted(self.domains.items())
            },
        }

    @classmethod
    def from_document(cls, doc: dict) -> "WinRateTable":
        if not isinstance(doc, dict) or doc.get("schema") != RESULTS_SCHEMA:
            raise DocumentError(
                f"results document must carry schema {RESULTS_SCHEMA!r}, "
                f"got {doc.get('schema')!r}"
            )
        if tuple(doc.get("criteria", ())) != CRITERIA:
            raise DocumentError(f"results document criteria must be {list(CRITERIA)}")
        domains = {}
        try:
            for domain, raw in doc["domains"].items():
                Domain(domain)
                domains[domain] = DomainTally(
                    questions=int(raw["questions"]),
                    rejected=int(raw["rejected"]),
                    points_a={k: int(raw["points_a"][k]) for k in CRITERIA},
                    points_b={k: int(raw["points_b"][k]) for k in CRITERIA},
                )
            return cls(name_a=doc["name_a"], name_b=doc["name_b"], domains=domains)
        except (KeyError, TypeError, ValueError) as exc:
            raise DocumentError(f"bad results document: {exc}") from exc


def evaluate_questions(
    items: list[EvalItem],
    backend: Backend,
    library: PromptLibrary,
    *,
    name_a: str = "system_a",
    name_b: str = "system_b",
    temperature: float = DEFAULT_TEMPERATURE,
) -> WinRateTable:
    """Run the dual comparison for every item and tally criterion points.

    A question whose judging fails in either round is excluded from scoring
    and counted as rejected for its domain.
    """
    domains: dict[str, DomainTally] = {}
    for item in items:
        tally = domains.setdefault(item.domain.value, DomainTally())
        try:
            first, second = dual_comparison(
                item.question,
                item.answer_a,
                item.answer_b,
                backend,
                library,
                temperature=temperature,
            )
        except (MalformedModelOutput, BackendError) as exc:
            logger.warning("rejecting question for %s: %s", item.domain.value, exc)
            tally.rejected += 1
            continue
        tally.questions += 1
        tally.add_round(first)
        tally.add_round(second)
    return WinRateTable(name_a=name_a, name_b=name_b, domains=domains)


def render_table(table: WinRateTable) -> str:
    """Plain-text grid of win rates for system A (system B holds the rest)."""
    headers = ["Domain", "Qs", "Rej"] + list(CRITERIA) + ["Total Win Rate"]
    rows = []
    ordered = sorted(table.domains.items())
    if len(ordered) > 1:
        ordered.append(("Overall", table.overall()))
    for name, tally in ordered:
        cells = [name, str(tally.questions), str(tally.rejected)]
        for criterion in CRITERIA:
            rate = criterion_rate(tally, criterion, Side.A)
            cells.append("-" if rate is None else f"{float(rate):.1f}")
        total = total_rate(tally, Side.A)
        cells.append("-" if total is None else f"{float(total):.1f}")
        rows.append(cells)
    widths = [
        max(len(headers[i]), *(len(row[i]) for row in rows)) if rows else len(headers[i])
        for i in range(len(headers))
    ]
    def fmt(cells: list[str]) -> str:
        first = cells[0].ljust(widths[0])
        rest = [cells[i].rjust(widths[i]) for i in range(1, len(cells))]
        return "  ".join([first] + rest).rstrip()
    lines = [
        f"Win rates for {table.name_a} vs {table.name_b} "
        "(percent of criterion points over two judging rounds per question)",
        "",
        fmt(headers),
    ]
    lines.extend(fmt(row) for row in rows)
    return "\n".join(lines) + "\n"


# -- answer documents --------------------------------------------------------------


def save_eval_items(
    items: list[EvalItem], name_a: str, name_b: str, path: str | Path
) -> None:
    doc = {
        "schema": ANSWERS_SCHEMA,
        "name_a": name_a,
        "name_b": name_b,
        "items": [
            {
                "domain": i.domain.value,
                "question": i.question,
                "answer_a": i.answer_a,
                "answer_b": i.answer_b,
            }
            for i in items
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_eval_items(path: str | Path) -> tuple[list[EvalItem], str, str]:
    doc = _read_document(path, ANSWERS_SCHEMA)
    items = []
    for i, raw in enumerate(doc.get("items", [])):
        try:
            items.append(
                EvalItem(
                    domain=Domain(raw["domain"]),
                    question=raw["question"],
                    answer_a=raw["answer_a"],
                    answer_b=raw["answer_b"],
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DocumentError(f"bad answer item {i} in {path}: {exc}") from exc
    try:
        return items, doc["name_a"], doc["name_b"]
    except KeyError as exc:
        raise DocumentError(f"answers document {path} lacks system names: {exc}") from exc


def save_results(table: WinRateTable, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(table.to_document(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_results(path: str | Path) -> WinRateTable:
    return WinRateTable.from_document(_read_document(path, RESULTS_SCHEMA))


def _read_document(path: str | Path, schema: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DocumentError(f"cannot read document {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema") != schema:
        raise DocumentError(
            f"document {path} must carry schema {schema!r}, got {doc.get('schema')!r}"
        )
    return doc
