"""Hook records and security events.

A hook record is the raw JSONL shape an embedding host emits at its three
interception points. Parsing is strict: unknown hooks, unknown fields,
missing required fields and bad types all raise, because a record the
engine half-understands is a record an attacker controls.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping

from .model import (
    Provenance,
    SchemaViolation,
    SequenceRegression,
    SourceKind,
    Stage,
    Trust,
    UnknownHook,
)


class HookKind(str, Enum):
    PROMPT_BUILD = "before_prompt_build"
    MESSAGE_WRITE = "before_message_write"
    TOOL_CALL = "before_tool_call"


_ROLES = frozenset({"user", "tool", "assistant", "system"})

#: Default trust assigned to content by the kind of its source.
_KIND_TRUST = {
    SourceKind.SYSTEM: Trust.TRUSTED,
    SourceKind.USER: Trust.TRUSTED,
    SourceKind.ASSISTANT: Trust.UNVERIFIED,
    SourceKind.TOOL: Trust.UNVERIFIED,
    SourceKind.SKILL: Trust.UNVERIFIED,
}


@dataclass(frozen=True)
class HookRecord:
    """One validated line of a trace, payload still raw."""

    session_id: str
    seq: int
    hook: HookKind
    role: str | None
    payload: Mapping[str, Any]
    ts: str | None  # accepted, preserved, never serialized into reports


@dataclass(frozen=True)
class MessageWritePayload:
    content: str
    source: Provenance


@dataclass(frozen=True)
class ToolCallPayload:
    tool: str
    args: Mapping[str, Any]
    command: str | None
    target_path: str | None


@dataclass(frozen=True)
class PromptBuildPayload:
    skills: tuple[Mapping[str, Any], ...]  # raw manifests; foundation parses them
    config: Mapping[str, Any] | None


@dataclass(frozen=True)
class SecurityEvent:
    """A hook record lifted into the engine's vocabulary."""

    session_id: str
    seq: int
    hook: HookKind
    role: str | None
    payload: PromptBuildPayload | MessageWritePayload | ToolCallPayload
    stage_targets: frozenset[Stage]
    provenance: Provenance
    ts: str | None = None


def parse_hook_record(raw: Any) -> HookRecord:
    """Schema-validate one raw record. Sequence ordering is the caller's check."""
    if not isinstance(raw, dict):
        raise SchemaViolation("hook record must be an object")
    allowed = {"session_id", "seq", "hook", "role", "payload", "ts"}
    extra = raw.keys() - allowed
    if extra:
        raise SchemaViolation(f"hook record: unknown fields {sorted(extra)}")
    for req in ("session_id", "seq", "hook", "payload"):
        if req not in raw:
            raise SchemaViolation(f"hook record: missing field {req!r}")
    if not isinstance(raw["session_id"], str) or not raw["session_id"]:
        raise SchemaViolation("hook record: session_id must be a non-empty string")
    if not isinstance(raw["seq"], int) or isinstance(raw["seq"], bool) or raw["seq"] < 0:
        raise SchemaViolation("hook record: seq must be a non-negative integer")
    hook_name = raw["hook"]
    try:
        hook = HookKind(hook_name)
    except ValueError:
        raise UnknownHook(f"unknown hook: {hook_name!r}") from None
    role = raw.get("role")
    if role is not None:
        if not isinstance(role, str) or role not in _ROLES:
            raise SchemaViolation(f"hook record: unknown role {role!r}")
    if hook is HookKind.MESSAGE_WRITE and role is None:
        raise SchemaViolation("hook record: message writes require a role")
    payload = raw["payload"]
    if not isinstance(payload, dict):
        raise SchemaViolation("hook record: payload must be an object")
    ts = raw.get("ts")
    if ts is not None and not isinstance(ts, str):
        raise SchemaViolation("hook record: ts must be a string")
    return HookRecord(
        session_id=raw["session_id"],
        seq=raw["seq"],
        hook=hook,
        role=role,
        payload=payload,
        ts=ts,
    )


def check_sequence(record: HookRecord, last_seq: int | None) -> None:
    if last_seq is not None and record.seq <= last_seq:
        raise SequenceRegression(
            f"session {record.session_id}: seq {record.seq} after {last_seq}"
        )


def parse_message_payload(record: HookRecord) -> MessageWritePayload:
    payload = record.payload
    allowed = {"content", "source"}
    extra = payload.keys() - allowed
    if extra:
        raise SchemaViolation(f"message payload: unknown fields {sorted(extra)}")
    content = payload.get("content")
    if not isinstance(content, str):
        raise SchemaViolation("message payload: content must be a string")
    source_raw = payload.get("source")
    if source_raw is None:
        # default the provenance from the message role
        kind = SourceKind(record.role)
        source = Provenance(kind, record.role or "", _KIND_TRUST[kind])
    else:
        if not isinstance(source_raw, dict):
            raise SchemaViolation("message payload: source must be an object")
        s_extra = source_raw.keys() - {"source", "origin_label", "trust"}
        if s_extra:
            raise SchemaViolation(f"message source: unknown fields {sorted(s_extra)}")
        try:
            kind = SourceKind(source_raw.get("source"))
        except ValueError:
            raise SchemaViolation(
                f"message source: unknown kind {source_raw.get('source')!r}"
            ) from None
        origin = source_raw.get("origin_label")
        if not isinstance(origin, str) or not origin:
            raise SchemaViolation("message source: origin_label must be a non-empty string")
        base = _KIND_TRUST[kind]
        declared = source_raw.get("trust")
        if declared is not None:
            base = max(base, Trust.from_label(str(declared)))
        source = Provenance(kind, origin, base)
    return MessageWritePayload(content=content, source=source)


def parse_tool_payload(record: HookRecord) -> ToolCallPayload:
    payload = record.payload
    allowed = {"tool", "args", "command", "target_path"}
    extra = payload.keys() - allowed
    if extra:
        raise SchemaViolation(f"tool payload: unknown fields {sorted(extra)}")
    tool = payload.get("tool")
    if not isinstance(tool, str) or not tool:
        raise SchemaViolation("tool payload: tool must be a non-empty string")
    args = payload.get("args", {})
    if not isinstance(args, dict):
        raise SchemaViolation("tool payload: args must be an object")
    command = payload.get("command")
    if command is not None and not isinstance(command, str):
        raise SchemaViolation("tool payload: command must be a string")
    target = payload.get("target_path")
    if target is not None and not isinstance(target, str):
        raise SchemaViolation("tool payload: target_path must be a string")
    return ToolCallPayload(tool=tool, args=args, command=command, target_path=target)


def parse_prompt_payload(record: HookRecord) -> PromptBuildPayload:
    payload = record.payload
    allowed = {"skills", "config"}
    extra = payload.keys() - allowed
    if extra:
        raise SchemaViolation(f"prompt payload: unknown fields {sorted(extra)}")
    skills = payload.get("skills", [])
    if not isinstance(skills, list) or not all(isinstance(s, dict) for s in skills):
        raise SchemaViolation("prompt payload: skills must be a list of objects")
    config = payload.get("config")
    if config is not None and not isinstance(config, dict):
        raise SchemaViolation("prompt payload: config must be an object")
    return PromptBuildPayload(skills=tuple(skills), config=config)
