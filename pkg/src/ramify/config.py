"""Run-level configuration knobs."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date

from .errors import InvalidInput

DEFAULT_MAX_LAYER = 3
DEFAULT_MAX_NODES = 15
DEFAULT_MAX_ASPECTS = 3
DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_PARSE_RETRIES = 2
DEFAULT_PLAN_RETRY_BUDGET = 3


@dataclass(frozen=True)
class RunConfig:
    """Budgets and sampling settings that shape a whole run.

    The root node sits at layer 1, so ``max_layer`` is the deepest layer a
    node may occupy, and ``max_nodes`` caps the total tree size including
    the root.  ``max_parse_retries`` bounds how often a malformed completion
    is re-requested before giving up, and ``plan_retry_budget`` caps the
    planning completions (first attempt included) spent on one node.
    ``run_date`` feeds date-sensitive prompts so a run can be replayed on a
    later day.
    """

    max_layer: int = DEFAULT_MAX_LAYER
    max_nodes: int = DEFAULT_MAX_NODES
    max_aspects: int = DEFAULT_MAX_ASPECTS
    temperature: float = DEFAULT_TEMPERATURE
    max_parse_retries: int = DEFAULT_MAX_PARSE_RETRIES
    plan_retry_budget: int = DEFAULT_PLAN_RETRY_BUDGET
    run_date: date = field(default_factory=date.today)

    def __post_init__(self) -> None:
        if self.max_layer < 1:
            raise InvalidInput(f"max_layer must be >= 1, got {self.max_layer}")
        if self.max_nodes < 1:
            raise InvalidInput(f"max_nodes must be >= 1, got {self.max_nodes}")
        if self.max_aspects < 1:
            raise InvalidInput(f"max_aspects must be >= 1, got {self.max_aspects}")
        if self.temperature < 0.0:
            raise InvalidInput(f"temperature must be >= 0, got {self.temperature}")
        if self.max_parse_retries < 0:
            raise InvalidInput(
                f"max_parse_retries must be >= 0, got {self.max_parse_retries}"
            )
        if self.plan_retry_budget < 1:
            raise InvalidInput(
                f"plan_retry_budget must be >= 1, got {self.plan_retry_budget}"
            )
        if not isinstance(self.run_date, date):
            raise InvalidInput("run_date must be a datetime.date")

    def to_dict(self) -> dict:
        return {
            "max_layer": self.max_layer,
            "max_nodes": self.max_nodes,
            "max_aspects": self.max_aspects,
            "temperature": self.temperature,
            "max_parse_retries": self.max_parse_retries,
            "plan_retry_budget": self.plan_retry_budget,
            "run_date": self.run_date.isoformat(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        try:
            return cls(
                max_layer=int(data["max_layer"]),
                max_nodes=int(data["max_nodes"]),
                max_aspects=int(data["max_aspects"]),
                temperature=float(data["temperature"]),
                max_parse_retries=int(data["max_parse_retries"]),
                plan_retry_budget=int(data["plan_retry_budget"]),
                run_date=date.fromisoformat(data["run_date"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInput(f"bad run config document: {exc}") from exc
