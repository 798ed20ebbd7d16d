"""Layered breadth/depth analysis of open-ended queries over pluggable backends.

A run refines the raw query, then grows a tree of analysis nodes: each node
is answered by planning tool tasks, executing them in dependency order,
summarizing, and fact-checking; a controller then chooses whether the node
spawns several sibling aspects or one deeper follow-up, until the layer,
node, or frontier budget ends the run.  A final report synthesizes every
node summary.  The evaluation harness turns news into questions and judges
paired answers in both presentation orders.
"""

from .backend import (
    Backend,
    BackendSet,
    CompletionRequest,
    HttpBackend,
    RetryingBackend,
    RetryPolicy,
    ScriptedBackend,
    ScriptEntry,
    load_script,
    with_retry,
)
from .config import RunConfig
from .engine import (
    BreadthAspect,
    ControllerDecision,
    DepthQuestion,
    EngineChoice,
    EngineContext,
    Priority,
    decide,
    expand_breadth,
    expand_depth,
)
from .errors import (
    BackendError,
    BudgetExceeded,
    BundleError,
    CyclicDependencies,
    DocumentError,
    EmptyCompletion,
    InvalidInput,
    MalformedModelOutput,
    MalformedToolInput,
    MissingPlaceholder,
    MissingTemplate,
    NodeFailed,
    ParentNotAnswered,
    PlanRejected,
    RamifyError,
    ScriptExhausted,
    TransportError,
    UnknownParent,
    UnknownPlaceholder,
    UnknownTool,
)
from .evalharness import (
    CRITERIA,
    Domain,
    EvalItem,
    N2QItem,
    Ordering,
    RoundVerdict,
    Side,
    WinRateTable,
    answer_question,
    build_n2q_items,
    dual_comparison,
    evaluate_questions,
    generate_question,
    judge_round,
    render_table,
)
from .executor import (
    ExecutionRecord,
    ExecutionStatus,
    ExecutionSummary,
    ValidationEntry,
    ValidationReport,
    ValidationStatus,
    execute,
    fact_check,
    parse_summary,
    parse_validation,
    render_results,
    schedule,
    summarize,
)
from .orchestrator import (
    RunRecord,
    compute_metrics,
    final_response,
    load_run,
    persist_run,
    run,
    solve_node,
)
from .planner import TaskPlan, TaskSpec, check_format, decompose, regenerate, validate_plan
from .prompter import OptimizedQuery, optimize_query, recover_query
from .prompts import PromptLibrary, PromptTemplate, default_library, load_bundle
from .toolbox import ToolDescriptor, ToolRegistry, default_registry, invoke, parse_news_input
from .tree import (
    AnalysisNode,
    AnalysisTree,
    NodeAnswer,
    NodeOrigin,
    NodeStatus,
    TerminationCause,
    add_child,
    check_termination,
    export_graph,
    new_tree,
    tree_from_document,
    tree_to_document,
)

__version__ = "0.1.0"
