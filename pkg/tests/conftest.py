"""Shared fixtures: the packaged prompt library and the default tool registry."""

import pytest

import canon
from ramify.backend import BackendSet, ScriptedBackend
from ramify.executor import (
    ExecutionRecord,
    ExecutionStatus,
    parse_summary,
    parse_validation,
)
from ramify.prompts import default_library
from ramify.toolbox import default_registry
from ramify.tree import NodeAnswer


@pytest.fixture(scope="session")
def library():
    return default_library()


@pytest.fixture()
def registry():
    return default_registry()


def make_backends(entries) -> BackendSet:
    """One scripted backend serving both roles, as most scenarios need."""
    backend = ScriptedBackend(entries)
    return BackendSet(reasoning=backend, retrieval=backend)


def make_answer(summary_status: str = "VALID") -> NodeAnswer:
    """A well-formed node answer assembled through the real parsers."""
    return NodeAnswer(
        summary=parse_summary(canon.summary_block()),
        validation=parse_validation(canon.validation_text(summary_status=summary_status)),
        records=[
            ExecutionRecord(
                task_id="t1",
                tool="llm",
                status=ExecutionStatus.SUCCESS,
                result="tool output",
                started=1,
                finished=1,
            )
        ],
    )
