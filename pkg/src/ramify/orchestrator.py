"""Whole-run orchestration: solve nodes, grow the tree, synthesize the report."""

from __future__ import annotations

import hashlib
import json
import logging
import uuid
from collections import deque
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from .backend import BackendSet, CompletionRequest
from .config import RunConfig
from .engine import EngineChoice, EngineContext, decide, expand_breadth, expand_depth
from .errors import (
    BackendError,
    BudgetExceeded,
    DocumentError,
    MalformedModelOutput,
    NodeFailed,
    PlanRejected,
)
from .executor import (
    Confidence,
    ValidationStatus,
    execute,
    fact_check,
    render_results,
    summarize,
)
from .planner import decompose
from .prompter import OptimizedQuery, optimize_query
from .prompts import PromptLibrary, default_library
from .toolbox import ToolRegistry, default_registry
from .tree import (
    AnalysisTree,
    NodeAnswer,
    NodeOrigin,
    NodeStatus,
    TerminationCause,
    add_child,
    check_termination,
    new_tree,
    tree_from_document,
    tree_to_document,
)

logger = logging.getLogger(__name__)

RUN_SCHEMA = "ramify/run@1"
EPOCH_TIMESTAMP = "1970-01-01T00:00:00+00:00"


def solve_node(
    tree: AnalysisTree,
    node_id: str,
    backends: BackendSet,
    library: PromptLibrary,
    config: RunConfig,
    *,
    registry: ToolRegistry | None = None,
) -> None:
    """Plan, execute, summarize and fact-check one node; store the answer.

    A summary the fact checker rejects with high confidence is redone once
    with the reported issues appended; if it stays rejected the node keeps
    the answer but carries the flag.  Any unrecoverable step marks the node
    failed and raises NodeFailed.
    """
    registry = registry or default_registry()
    node = tree.node(node_id)
    try:
        plan = decompose(
            node.query,
            registry,
            backends.reasoning,
            library,
            temperature=config.temperature,
            plan_retry_budget=config.plan_retry_budget,
        )
        records = execute(
            plan, backends, library, registry=registry, temperature=config.temperature
        )
        summary = summarize(
            node.query,
            records,
            backends.reasoning,
            library,
            temperature=config.temperature,
            max_parse_retries=config.max_parse_retries,
        )
        content = render_results(records)
        validation = fact_check(
            node.query,
            content,
            summary.to_text(),
            config.run_date,
            backends.reasoning,
            library,
            temperature=config.temperature,
        )
        entry = validation.summary_entry()
        if entry.status is ValidationStatus.INVALID and entry.confidence is Confidence.HIGH:
            logger.warning("node %s summary rejected with high confidence; redoing", node_id)
            issues = "\n".join(f"- {issue}" for issue in entry.issues) or "- (none reported)"
            summary = summarize(
                node.query,
                records,
                backends.reasoning,
                library,
                temperature=config.temperature,
                max_parse_retries=config.max_parse_retries,
                extra_instructions=(
                    "A previous summary of these results was rejected by fact checking "
                    f"for the following issues:\n{issues}\n"
                    "Write a corrected summary that addresses every issue."
                ),
            )
            validation = fact_check(
                node.query,
                content,
                summary.to_text(),
                config.run_date,
                backends.reasoning,
                library,
                temperature=config.temperature,
            )
            if validation.summary_entry().status is ValidationStatus.INVALID:
                logger.warning("node %s summary still rejected; keeping it flagged", node_id)
    except (PlanRejected, MalformedModelOutput, BackendError) as exc:
        tree.mark_failed(node_id, str(exc))
        raise NodeFailed(f"node {node_id}: {exc}") from exc
    tree.set_answer(node_id, NodeAnswer(summary=summary, validation=validation, records=records))


def _expansion_context(tree: AnalysisTree, node_id: str, config: RunConfig) -> EngineContext:
    node = tree.node(node_id)
    assert node.answer is not None
    return EngineContext(
        original_query=tree.node(tree.root_id).query,
        further_query=node.query,
        current_layer=node.layer,
        max_layer=config.max_layer,
        content=node.answer.summary.to_text(),
    )


def _expand_node(
    tree: AnalysisTree,
    node_id: str,
    backends: BackendSet,
    library: PromptLibrary,
    config: RunConfig,
) -> list[str]:
    """Run the engines for one node and attach the children it earns.

    Returns the new child ids; an empty list means the engines failed and
    the node was parked as terminal.
    """
    ctx = _expansion_context(tree, node_id, config)
    try:
        decision = decide(
            ctx,
            backends.reasoning,
            library,
            temperature=config.temperature,
            max_parse_retries=config.max_parse_retries,
        )
        if decision.choice is EngineChoice.BREADTH:
            aspects = expand_breadth(
                ctx,
                backends.reasoning,
                library,
                max_aspects=config.max_aspects,
                temperature=config.temperature,
                max_parse_retries=config.max_parse_retries,
            )
            queries = [a.query for a in aspects]
            origin = NodeOrigin.BREADTH
        else:
            question = expand_depth(
                ctx,
                backends.reasoning,
                library,
                temperature=config.temperature,
                max_parse_retries=config.max_parse_retries,
            )
            queries = [question.question]
            origin = NodeOrigin.DEPTH
    except (MalformedModelOutput, BackendError) as exc:
        logger.warning("engines failed on node %s: %s; parking it", node_id, exc)
        tree.mark_terminal(node_id)
        return []
    added: list[str] = []
    for query in queries:
        try:
            added.append(add_child(tree, node_id, query, origin, config))
        except BudgetExceeded as exc:
            logger.warning("stopped adding children to %s: %s", node_id, exc)
            break
    if added:
        if origin is NodeOrigin.BREADTH:
            tree.counters.breadth += 1
        else:
            tree.counters.depth += 1
    return added


def node_summaries_text(tree: AnalysisTree) -> str:
    """One block per answered node, creation order, for the report prompt."""
    blocks = []
    for node in tree.in_creation_order():
        if node.answer is None:
            continue
        header = f"[{node.id} | layer {node.layer} | {node.origin.value}] {node.query}"
        blocks.append(f"{header}\n{node.answer.summary.to_text()}")
    return "\n\n".join(blocks)


def final_response(
    tree: AnalysisTree,
    backends: BackendSet,
    library: PromptLibrary,
    config: RunConfig,
) -> str:
    """Synthesize the run's final report from every node summary."""
    system, user = library.render(
        "response.final",
        {
            "original_query": tree.node(tree.root_id).query,
            "node_summaries": node_summaries_text(tree),
            "total_nodes": len(tree),
            "max_depth": tree.max_depth(),
            "breadth_analyses": tree.counters.breadth,
            "depth_analyses": tree.counters.depth,
        },
    )
    return backends.reasoning.complete(
        CompletionRequest(system, user, temperature=config.temperature, tag="response.final")
    )


# -- run record -----------------------------------------------------------------


def compute_metrics(tree: AnalysisTree) -> dict:
    answered = [n for n in tree.in_creation_order() if n.answer is not None]
    return {
        "total_nodes": len(tree),
        "max_depth": tree.max_depth(),
        "answered_nodes": len(answered),
        "failed_nodes": sum(
            1 for n in tree.in_creation_order() if n.status is NodeStatus.FAILED
        ),
        "flagged_nodes": sum(1 for n in answered if n.answer.flagged),
        "breadth_expansions": tree.counters.breadth,
        "depth_expansions": tree.counters.depth,
    }


@dataclass
class RunRecord:
    """Everything one run produced, ready to persist and reload."""

    run_id: str
    raw_query: str
    config: RunConfig
    optimized: OptimizedQuery
    tree: AnalysisTree
    final_report: str
    termination: TerminationCause
    metrics: dict
    started_at: str
    finished_at: str
    transcript_calls: Optional[int] = None

    def to_document(self) -> dict:
        return {
            "schema": RUN_SCHEMA,
            "run_id": self.run_id,
            "raw_query": self.raw_query,
            "config": self.config.to_dict(),
            "optimized": self.optimized.to_dict(),
            "tree": tree_to_document(self.tree),
            "final_report": self.final_report,
            "termination": self.termination.value,
            "metrics": self.metrics,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "transcript_calls": self.transcript_calls,
        }


def persist_run(record: RunRecord, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(record.to_document(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_run(path: str | Path) -> RunRecord:
    """Reload a persisted run; metrics are recomputed and must agree."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DocumentError(f"cannot read run record {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema") != RUN_SCHEMA:
        raise DocumentError(
            f"run record {path} must carry schema {RUN_SCHEMA!r}, got {doc.get('schema')!r}"
        )
    try:
        tree = tree_from_document(doc["tree"])
        record = RunRecord(
            run_id=doc["run_id"],
            raw_query=doc["raw_query"],
            config=RunConfig.from_dict(doc["config"]),
            optimized=OptimizedQuery.from_dict(doc["optimized"]),
            tree=tree,
            final_report=doc["final_report"],
            termination=TerminationCause(doc["termination"]),
            metrics=doc["metrics"],
            started_at=doc["started_at"],
            finished_at=doc["finished_at"],
            transcript_calls=doc.get("transcript_calls"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DocumentError(f"bad run record {path}: {exc}") from exc
    recomputed = compute_metrics(record.tree)
    if record.metrics != recomputed:
        raise DocumentError(
            f"run record {path} metrics disagree with its tree: "
            f"stored {record.metrics}, recomputed {recomputed}"
        )
    return record


def _make_run_id(raw_query: str, deterministic: bool) -> str:
    if deterministic:
        return "run-" + hashlib.sha256(raw_query.encode("utf-8")).hexdigest()[:12]
    return "run-" + uuid.uuid4().hex[:12]


def _timestamp(deterministic: bool) -> str:
    if deterministic:
        return EPOCH_TIMESTAMP
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _count_transcript_calls(backends: BackendSet) -> Optional[int]:
    seen: dict[int, int] = {}
    for backend in (backends.reasoning, backends.retrieval):
        transcript = getattr(backend, "transcript", None)
        if transcript is not None:
            seen[id(backend)] = len(transcript)
    if not seen:
        return None
    return sum(seen.values())


def run(
    raw_query: str,
    backends: BackendSet,
    *,
    config: RunConfig | None = None,
    library: PromptLibrary | None = None,
    registry: ToolRegistry | None = None,
    deterministic: bool = False,
) -> RunRecord:
    """Run the whole pipeline for one query and return the run record.

    The root node must solve; its failure aborts the run.  Failures further
    down mark single nodes and the run continues with whatever the tree
    still offers.
    """
    config = config or RunConfig()
    library = library or default_library()
    registry = registry or default_registry()
    started_at = _timestamp(deterministic)

    optimized = optimize_query(
        raw_query,
        backends.reasoning,
        library,
        temperature=config.temperature,
        max_parse_retries=config.max_parse_retries,
    )
    tree = new_tree(optimized.optimized_query)
    solve_node(tree, tree.root_id, backends, library, config, registry=registry)

    frontier: deque[str] = deque([tree.root_id])
    while True:
        status = check_termination(tree, config, frontier_size=len(frontier))
        if status.should_stop:
            termination = status.cause
            break
        # a below-max-layer answered node must exist here, or we would have stopped
        index = next(
            i
            for i, node_id in enumerate(frontier)
            if tree.node(node_id).layer < config.max_layer
        )
        node_id = frontier[index]
        del frontier[index]
        added = _expand_node(tree, node_id, backends, library, config)
        for child_id in added:
            try:
                solve_node(tree, child_id, backends, library, config, registry=registry)
            except NodeFailed as exc:
                logger.warning("child failed, run continues: %s", exc)
                continue
            frontier.append(child_id)

    for node_id in frontier:
        tree.mark_terminal(node_id)

    report = final_response(tree, backends, library, config)
    assert termination is not None
    return RunRecord(
        run_id=_make_run_id(raw_query, deterministic),
        raw_query=raw_query,
        config=config,
        optimized=optimized,
        tree=tree,
        final_report=report,
        termination=termination,
        metrics=compute_metrics(tree),
        started_at=started_at,
        finished_at=_timestamp(deterministic),
        transcript_calls=_count_transcript_calls(backends),
    )
