"""Shared fixtures and builders for the test suite."""

from __future__ import annotations

from pathlib import Path

import pytest

from lifegate import (
    Directive,
    EngineConfig,
    LayerReport,
    RuleSet,
    ThreatWarning,
    default_rules,
)

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def rules() -> RuleSet:
    return default_rules()


@pytest.fixture(scope="session")
def config() -> EngineConfig:
    return EngineConfig.defaults()


def make_report(layer_id: str, directive: Directive) -> LayerReport:
    """A minimal valid report around an arbitrary directive."""
    warnings = ()
    if directive.level.value > 0:
        warnings = (ThreatWarning("test-warning", "synthetic report"),)
    return LayerReport(layer_id=layer_id, directive=directive, warnings=warnings)


def prompt_record(session_id: str, seq: int, *, skills=None, config=None) -> dict:
    payload: dict = {"skills": skills if skills is not None else []}
    if config is not None:
        payload["config"] = config
    return {
        "session_id": session_id,
        "seq": seq,
        "hook": "before_prompt_build",
        "payload": payload,
    }


def message_record(
    session_id: str,
    seq: int,
    content: str,
    *,
    role: str = "user",
    origin: str | None = None,
    source_kind: str = "tool",
) -> dict:
    payload: dict = {"content": content}
    if origin is not None:
        payload["source"] = {"source": source_kind, "origin_label": origin}
    return {
        "session_id": session_id,
        "seq": seq,
        "hook": "before_message_write",
        "role": role,
        "payload": payload,
    }


def tool_record(
    session_id: str,
    seq: int,
    tool: str,
    *,
    args: dict | None = None,
    command: str | None = None,
    target_path: str | None = None,
) -> dict:
    payload: dict = {"tool": tool}
    if args is not None:
        payload["args"] = args
    if command is not None:
        payload["command"] = command
    if target_path is not None:
        payload["target_path"] = target_path
    return {
        "session_id": session_id,
        "seq": seq,
        "hook": "before_tool_call",
        "payload": payload,
    }
