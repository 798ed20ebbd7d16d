"""Analysis tree: nodes, growth under budgets, termination, export."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Optional

from .config import RunConfig
from .errors import (
    BudgetExceeded,
    DocumentError,
    InvalidInput,
    ParentNotAnswered,
    UnknownParent,
)

if TYPE_CHECKING:  # pragma: no cover - import cycle guard for annotations only
    from .executor import ExecutionRecord, ExecutionSummary, ValidationReport

TREE_SCHEMA = "ramify/tree@1"


class NodeOrigin(str, Enum):
    """How a node came to exist."""

    ROOT = "root"
    BREADTH = "breadth"
    DEPTH = "depth"


class NodeStatus(str, Enum):
    PENDING = "pending"
    ANSWERED = "answered"
    EXPANDED = "expanded"
    TERMINAL = "terminal"
    FAILED = "failed"


class TerminationCause(str, Enum):
    MAX_NODES_REACHED = "max_nodes_reached"
    MAX_LAYER_REACHED = "max_layer_reached"
    FRONTIER_EXHAUSTED = "frontier_exhausted"


@dataclass(frozen=True)
class TerminationStatus:
    """Outcome of a termination check; ``cause`` is None while the run may go on."""

    cause: Optional[TerminationCause]

    @property
    def should_stop(self) -> bool:
        return self.cause is not None


@dataclass
class NodeAnswer:
    """Everything solving one node produced: summary, validation, task records."""

    summary: "ExecutionSummary"
    validation: "ValidationReport"
    records: list["ExecutionRecord"]

    @property
    def flagged(self) -> bool:
        """True when the summary validation still stands at INVALID."""
        return self.validation.summary_entry().status.value == "INVALID"

    def to_dict(self) -> dict:
        return {
            "summary": self.summary.to_dict(),
            "validation": self.validation.to_dict(),
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NodeAnswer":
        from .executor import ExecutionRecord, ExecutionSummary, ValidationReport

        try:
            return cls(
                summary=ExecutionSummary.from_dict(data["summary"]),
                validation=ValidationReport.from_dict(data["validation"]),
                records=[ExecutionRecord.from_dict(r) for r in data["records"]],
            )
        except (KeyError, TypeError) as exc:
            raise DocumentError(f"bad node answer document: {exc}") from exc


@dataclass
class AnalysisNode:
    id: str
    layer: int
    parent: Optional[str]
    origin: NodeOrigin
    query: str
    status: NodeStatus = NodeStatus.PENDING
    answer: Optional[NodeAnswer] = None
    error: Optional[str] = None
    children: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.layer < 1:
            raise InvalidInput(f"node layer must be >= 1, got {self.layer}")
        if not self.query or not self.query.strip():
            raise InvalidInput("node query must be non-empty")
        is_root = self.parent is None
        if is_root != (self.origin is NodeOrigin.ROOT):
            raise InvalidInput("exactly the parentless node carries the root origin")
        if is_root and self.layer != 1:
            raise InvalidInput("root node must sit at layer 1")


@dataclass
class ExpansionCounters:
    """Successful engine expansions recorded on the tree, not node counts."""

    breadth: int = 0
    depth: int = 0

    def to_dict(self) -> dict:
        return {"breadth_expansions": self.breadth, "depth_expansions": self.depth}


@dataclass
class AnalysisTree:
    nodes: dict[str, AnalysisNode]
    creation_order: list[str]
    root_id: str
    counters: ExpansionCounters = field(default_factory=ExpansionCounters)

    def node(self, node_id: str) -> AnalysisNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownParent(f"no node with id {node_id!r}") from None

    def __len__(self) -> int:
        return len(self.nodes)

    def in_creation_order(self) -> list[AnalysisNode]:
        return [self.nodes[node_id] for node_id in self.creation_order]

    def answered_nodes(self) -> list[AnalysisNode]:
        return [n for n in self.in_creation_order() if n.status is NodeStatus.ANSWERED]

    def max_depth(self) -> int:
        return max(n.layer for n in self.nodes.values())

    # -- status transitions -------------------------------------------------

    def set_answer(self, node_id: str, answer: NodeAnswer) -> None:
        node = self.node(node_id)
        if node.status is not NodeStatus.PENDING:
            raise InvalidInput(f"node {node_id} is {node.status.value}, not pending")
        node.answer = answer
        node.status = NodeStatus.ANSWERED

    def mark_failed(self, node_id: str, error: str) -> None:
        node = self.node(node_id)
        if node.status is not NodeStatus.PENDING:
            raise InvalidInput(f"node {node_id} is {node.status.value}, not pending")
        node.error = error
        node.status = NodeStatus.FAILED

    def mark_terminal(self, node_id: str) -> None:
        node = self.node(node_id)
        if node.status is not NodeStatus.ANSWERED:
            raise InvalidInput(f"node {node_id} is {node.status.value}, not answered")
        node.status = NodeStatus.TERMINAL

    def _next_id(self) -> str:
        return f"n{len(self.nodes) + 1}"


def new_tree(root_query: str) -> AnalysisTree:
    """Create a tree holding only the pending root node at layer 1."""
    if not root_query or not root_query.strip():
        raise InvalidInput("root query must be non-empty")
    root = AnalysisNode(id="n1", layer=1, parent=None, origin=NodeOrigin.ROOT, query=root_query)
    return AnalysisTree(nodes={root.id: root}, creation_order=[root.id], root_id=root.id)


def add_child(
    tree: AnalysisTree,
    parent_id: str,
    query: str,
    origin: NodeOrigin,
    config: RunConfig,
) -> str:
    """Attach one child under ``parent_id`` and return the new node id.

    The parent must already hold an answer (status answered or expanded) and
    the addition must fit both the node and the layer budget in ``config``.
    The parent is marked expanded.
    """
    if origin not in (NodeOrigin.BREADTH, NodeOrigin.DEPTH):
        raise InvalidInput(f"child origin must be breadth or depth, got {origin!r}")
    if not query or not query.strip():
        raise InvalidInput("child query must be non-empty")
    parent = tree.node(parent_id)
    if parent.status not in (NodeStatus.ANSWERED, NodeStatus.EXPANDED):
        raise ParentNotAnswered(
            f"parent {parent_id} is {parent.status.value}; children need an answered parent"
        )
    if len(tree.nodes) + 1 > config.max_nodes:
        raise BudgetExceeded(
            f"node budget: tree already holds {len(tree.nodes)} of {config.max_nodes} nodes"
        )
    child_layer = parent.layer + 1
    if child_layer > config.max_layer:
        raise BudgetExceeded(
            f"layer budget: child would sit at layer {child_layer}, max is {config.max_layer}"
        )
    child = AnalysisNode(
        id=tree._next_id(),
        layer=child_layer,
        parent=parent_id,
        origin=origin,
        query=query,
    )
    tree.nodes[child.id] = child
    tree.creation_order.append(child.id)
    parent.children.append(child.id)
    parent.status = NodeStatus.EXPANDED
    return child.id


def check_termination(
    tree: AnalysisTree, config: RunConfig, frontier_size: int
) -> TerminationStatus:
    """Decide whether the run must stop, with a fixed precedence of causes.

    Node budget wins over layer saturation, which wins over an empty
    frontier.  Layer saturation means the frontier is non-empty and every
    answered node sits at the maximum layer.
    """
    if frontier_size < 0:
        raise InvalidInput(f"frontier_size must be >= 0, got {frontier_size}")
    if len(tree.nodes) >= config.max_nodes:
        return TerminationStatus(TerminationCause.MAX_NODES_REACHED)
    answered = tree.answered_nodes()
    if frontier_size > 0 and answered and all(n.layer == config.max_layer for n in answered):
        return TerminationStatus(TerminationCause.MAX_LAYER_REACHED)
    if frontier_size == 0:
        return TerminationStatus(TerminationCause.FRONTIER_EXHAUSTED)
    return TerminationStatus(None)


# -- export / import ---------------------------------------------------------

GRAPH_FORMATS = ("dot", "doc")


def export_graph(tree: AnalysisTree, fmt: str) -> str:
    """Render the tree as Graphviz dot or as the structured JSON document."""
    if fmt == "dot":
        return _to_dot(tree)
    if fmt == "doc":
        return json.dumps(tree_to_document(tree), indent=2, sort_keys=True)
    raise InvalidInput(f"unknown graph format {fmt!r}; expected one of {GRAPH_FORMATS}")


def _to_dot(tree: AnalysisTree) -> str:
    lines = ["digraph analysis {"]
    for node in tree.in_creation_order():
        label = f"{node.id}\\nlayer {node.layer} | {node.origin.value}"
        lines.append(f'  "{node.id}" [label="{label}"];')
    for node in tree.in_creation_order():
        if node.parent is not None:
            lines.append(f'  "{node.parent}" -> "{node.id}";')
    lines.append("}")
    return "\n".join(lines) + "\n"


def tree_to_document(tree: AnalysisTree) -> dict:
    nodes = []
    for node in tree.in_creation_order():
        nodes.append(
            {
                "id": node.id,
                "layer": node.layer,
                "parent": node.parent,
                "origin": node.origin.value,
                "query": node.query,
                "status": node.status.value,
                "answer": node.answer.to_dict() if node.answer is not None else None,
                "error": node.error,
            }
        )
    return {
        "schema": TREE_SCHEMA,
        "nodes": nodes,
        "counters": tree.counters.to_dict(),
    }


def tree_from_document(doc: dict) -> AnalysisTree:
    """Rebuild a tree from its structured document; inverse of tree_to_document."""
    if not isinstance(doc, dict):
        raise DocumentError("tree document must be an object")
    if doc.get("schema") != TREE_SCHEMA:
        raise DocumentError(
            f"unsupported tree schema {doc.get('schema')!r}, expected {TREE_SCHEMA!r}"
        )
    raw_nodes = doc.get("nodes")
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise DocumentError("tree document needs a non-empty node list")
    nodes: dict[str, AnalysisNode] = {}
    order: list[str] = []
    for raw in raw_nodes:
        try:
            node = AnalysisNode(
                id=raw["id"],
                layer=int(raw["layer"]),
                parent=raw["parent"],
                origin=NodeOrigin(raw["origin"]),
                query=raw["query"],
                status=NodeStatus(raw["status"]),
                answer=NodeAnswer.from_dict(raw["answer"]) if raw.get("answer") else None,
                error=raw.get("error"),
            )
        except (KeyError, TypeError, ValueError, InvalidInput) as exc:
            raise DocumentError(f"bad tree node entry: {exc}") from exc
        nodes[node.id] = node
        order.append(node.id)
    for node in nodes.values():
        if node.parent is not None:
            if node.parent not in nodes:
                raise DocumentError(f"node {node.id} references unknown parent {node.parent}")
            nodes[node.parent].children.append(node.id)
    counters_raw = doc.get("counters") or {}
    counters = ExpansionCounters(
        breadth=int(counters_raw.get("breadth_expansions", 0)),
        depth=int(counters_raw.get("depth_expansions", 0)),
    )
    return AnalysisTree(nodes=nodes, creation_order=order, root_id=order[0], counters=counters)
