"""Exception taxonomy shared across the package."""

from __future__ import annotations


class RamifyError(Exception):
    """Base class for every error this package raises on purpose."""


class InvalidInput(RamifyError):
    """Caller passed something that violates an operation's precondition."""


class BudgetExceeded(RamifyError):
    """Adding a node would break the node-count or layer budget."""


class UnknownParent(RamifyError):
    """Referenced parent node id does not exist in the tree."""


class ParentNotAnswered(RamifyError):
    """Children can only hang off nodes that already have an answer."""


class BackendError(RamifyError):
    """Base class for completion-backend failures."""


class TransportError(BackendError):
    """The request never produced a usable HTTP-level response."""


class EmptyCompletion(BackendError):
    """The backend answered with empty or whitespace-only text."""


class ScriptExhausted(BackendError):
    """No scripted entry (with calls remaining) matches the request."""


class MalformedModelOutput(RamifyError):
    """Completion text does not satisfy the expected output grammar."""


class BundleError(RamifyError):
    """Template bundle on disk is structurally broken."""


class MissingTemplate(BundleError):
    """A required template id is absent from the bundle."""

    def __init__(self, missing: list[str] | str):
        if isinstance(missing, str):
            missing = [missing]
        self.missing = sorted(missing)
        super().__init__("missing template ids: " + ", ".join(self.missing))


class MissingPlaceholder(RamifyError):
    """Rendering was asked to proceed without a value for a placeholder."""


class UnknownPlaceholder(RamifyError):
    """A binding name does not occur in the template."""


class PlanRejected(RamifyError):
    """Planning budget ran out without an acceptable task plan."""

    def __init__(self, feedback: str, attempts: int):
        self.feedback = feedback
        self.attempts = attempts
        super().__init__(f"no acceptable plan after {attempts} attempts: {feedback}")


class UnknownTool(RamifyError):
    """Task names a tool that is not registered."""


class MalformedToolInput(RamifyError):
    """Tool input does not satisfy the tool's input contract."""


class CyclicDependencies(RamifyError):
    """Task graph contains a cycle, so no execution order exists."""


class NodeFailed(RamifyError):
    """Solving a tree node failed past all recovery paths."""


class DocumentError(RamifyError):
    """A persisted document is malformed or has the wrong schema tag."""
