"""Cognition protection: gate mutations of long-term memory files.

A tool call that targets a memory file is reduced to a line diff. Added or
changed lines are matched against a memory-specific library and checked
for taint: content that carries a suspect or quarantined excerpt from the
input layer must not be written into durable state, whatever else it says.
Blocked mutations keep a rollback payload equal to the prior content.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from difflib import SequenceMatcher

from ..events import SecurityEvent, ToolCallPayload
from ..model import (
    LAYER_COGNITION,
    Directive,
    DirectiveLevel,
    Evidence,
    LayerReport,
    RiskMarker,
    Stage,
    ThreatWarning,
    Trust,
    directive_max,
)
from ..paths import matches_any, normalize_path
from ..session import RollbackRecord, SessionState
from ..textnorm import normalize_text
from .base import LayerContext

log = logging.getLogger(__name__)

_PATH_ARG_KEYS = ("path", "file", "target", "filename")
_OPAQUE_WRITE = re.compile(r">>?|\btee\b|\bsed\s+-i\b")

PROPOSE_PERSIST = "persist"
PROPOSE_SHADOW = "shadow"
PROPOSE_REJECT = "reject"
PROPOSE_READ = "read"


def find_memory_path(payload: ToolCallPayload, globs: tuple[str, ...]) -> str | None:
    """The memory file a tool call touches, if any."""
    candidates: list[str] = []
    if payload.target_path:
        candidates.append(payload.target_path)
    for key in _PATH_ARG_KEYS:
        value = payload.args.get(key)
        if isinstance(value, str) and value:
            candidates.append(value)
    if payload.command:
        for token in payload.command.split():
            candidates.append(token.strip("\"'`;|&<>()"))
    for cand in candidates:
        if cand and matches_any(list(globs), cand):
            return normalize_path(cand)
    return None


def is_memory_target(payload: ToolCallPayload, globs: tuple[str, ...]) -> bool:
    return find_memory_path(payload, globs) is not None


@dataclass(frozen=True)
class MemoryMutation:
    path: str
    before: str | None  # None = file did not exist
    after: str


@dataclass(frozen=True)
class DiffOp:
    tag: str  # replace | delete | insert
    before_start: int
    before_end: int
    after_start: int
    after_end: int
    lines: tuple[str, ...]  # the after-side lines for insert/replace


@dataclass(frozen=True)
class StateDiff:
    ops: tuple[DiffOp, ...]

    @property
    def added_lines(self) -> tuple[str, ...]:
        return tuple(line for op in self.ops for line in op.lines)


def diff_state(before: str, after: str) -> StateDiff:
    a = before.split("\n")
    b = after.split("\n")
    ops = []
    for tag, i1, i2, j1, j2 in SequenceMatcher(a=a, b=b, autojunk=False).get_opcodes():
        if tag == "equal":
            continue
        ops.append(DiffOp(tag, i1, i2, j1, j2, tuple(b[j1:j2])))
    return StateDiff(tuple(ops))


def apply_diff(before: str, diff: StateDiff) -> str:
    """Reconstruct the after content; inverse of diff_state for its inputs."""
    a = before.split("\n")
    out: list[str] = []
    cursor = 0
    for op in diff.ops:
        out.extend(a[cursor : op.before_start])
        out.extend(op.lines)
        cursor = op.before_end
    out.extend(a[cursor:])
    return "\n".join(out)


def extract_mutation(
    payload: ToolCallPayload, path: str, current: str | None
) -> MemoryMutation | None:
    """The proposed mutation, or None when the call only reads.

    `content` carries the full new content; `append` is new trailing text.
    A shell-style redirection into the file is a mutation the engine cannot
    inspect; the caller treats that as unparseable.
    """
    content = payload.args.get("content")
    if isinstance(content, str):
        return MemoryMutation(path=path, before=current, after=content)
    append = payload.args.get("append")
    if isinstance(append, str):
        base = current if current is not None else ""
        joined = base + ("\n" if base and not base.endswith("\n") else "") + append
        return MemoryMutation(path=path, before=current, after=joined)
    return None


def taint_hits(
    added: tuple[str, ...], state: SessionState, min_chars: int
) -> list[tuple[str, str]]:
    """(line, excerpt) pairs where an added line carries flagged content."""
    hits = []
    for line in added:
        norm_line = normalize_text(line)
        if not norm_line:
            continue
        for flagged in state.flagged:
            if flagged.trust < Trust.SUSPECT:
                continue
            if len(flagged.excerpt) < min_chars:
                continue
            if flagged.excerpt in norm_line:
                hits.append((norm_line, flagged.excerpt))
                break
    return hits


class CognitionProtectionLayer:
    layer_id = LAYER_COGNITION

    def evaluate(
        self, event: SecurityEvent, state: SessionState, ctx: LayerContext
    ) -> LayerReport:
        payload = event.payload
        assert isinstance(payload, ToolCallPayload)
        cfg = ctx.config
        path = find_memory_path(payload, cfg.memory_globs)
        if path is None:
            # routed here by mistake; nothing to protect
            return LayerReport(layer_id=LAYER_COGNITION, directive=Directive.allow())

        current = state.shadow_memory.get(path, ctx.persisted.get(path))
        mutation = extract_mutation(payload, path, current)

        if mutation is None:
            if _looks_like_opaque_write(payload):
                return LayerReport(
                    layer_id=LAYER_COGNITION,
                    directive=Directive.restrict(frozenset({"memory-write"})),
                    warnings=(
                        ThreatWarning(
                            "opaque-mutation",
                            f"cannot inspect the content written to {path}",
                        ),
                    ),
                    evidence=(
                        Evidence("mutation-content-missing", payload.command or "", "command"),
                    ),
                    details={"mutation": {"path": path, "proposed": PROPOSE_REJECT}},
                )
            return self._check_read(path, current, event, state)

        return self._check_mutation(mutation, event, state, ctx)

    def _check_read(
        self, path: str, current: str | None, event: SecurityEvent, state: SessionState
    ) -> LayerReport:
        # allow-by-default; deny only content known to be poisoned
        if current:
            norm = normalize_text(current)
            for fl in state.flagged:
                if fl.trust is Trust.QUARANTINED and fl.excerpt and fl.excerpt in norm:
                    return LayerReport(
                        layer_id=LAYER_COGNITION,
                        directive=Directive.restrict(frozenset()),
                        warnings=(
                            ThreatWarning(
                                "poisoned-memory-read",
                                f"{path} holds quarantined content",
                            ),
                        ),
                        evidence=(Evidence("quarantine-deny", fl.excerpt, path),),
                        details={"mutation": {"path": path, "proposed": PROPOSE_READ}},
                    )
        return LayerReport(
            layer_id=LAYER_COGNITION,
            directive=Directive.allow(),
            details={"mutation": {"path": path, "proposed": PROPOSE_READ}},
        )

    def _check_mutation(
        self,
        mutation: MemoryMutation,
        event: SecurityEvent,
        state: SessionState,
        ctx: LayerContext,
    ) -> LayerReport:
        cfg = ctx.config
        before = mutation.before if mutation.before is not None else ""
        diff = diff_state(before, mutation.after)
        added = diff.added_lines

        warnings: list[ThreatWarning] = []
        evidence: list[Evidence] = []
        markers: list[RiskMarker] = []
        directive = Directive.allow()

        for line in added:
            norm_line = normalize_text(line)
            if not norm_line:
                continue
            for cr in ctx.rules.for_layer(LAYER_COGNITION):
                for m in cr.matches(norm_line):
                    rule = m.rule
                    warnings.append(
                        ThreatWarning("memory-pattern", rule.description or rule.id)
                    )
                    evidence.append(
                        Evidence(rule.id, m.excerpt, f"{mutation.path}:+line")
                    )
                    markers.append(
                        RiskMarker(
                            marker_id=f"memory:rule:{rule.id}",
                            stage=Stage.MEMORY,
                            score=rule.severity,
                            description=rule.description or f"rule {rule.id} in mutation",
                            source_event_seq=event.seq,
                            excerpt=m.excerpt,
                        )
                    )
                    if rule.action is DirectiveLevel.BLOCK:
                        contribution = Directive.block()
                    elif rule.action is DirectiveLevel.RESTRICT:
                        contribution = Directive.restrict(frozenset())
                    else:
                        contribution = Directive(rule.action)
                    directive = directive_max(directive, contribution)

        for norm_line, excerpt in taint_hits(added, state, cfg.memory.taint_min_chars):
            warnings.append(
                ThreatWarning(
                    "tainted-mutation",
                    "mutation carries content flagged as suspect or quarantined",
                )
            )
            evidence.append(Evidence("taint-containment", excerpt, f"{mutation.path}:+line"))
            markers.append(
                RiskMarker(
                    marker_id="memory:taint",
                    stage=Stage.MEMORY,
                    score=0.8,
                    description="flagged excerpt written toward durable memory",
                    source_event_seq=event.seq,
                    excerpt=excerpt,
                )
            )
            directive = directive_max(directive, Directive.block())

        if before and len(mutation.after) > cfg.memory.size_ratio * len(before):
            warnings.append(
                ThreatWarning(
                    "size-anomaly",
                    f"mutation grows {mutation.path} more than "
                    f"{cfg.memory.size_ratio:g}x",
                )
            )
            evidence.append(
                Evidence(
                    "size-ratio",
                    f"{len(before)} -> {len(mutation.after)} chars",
                    mutation.path,
                )
            )
            markers.append(
                RiskMarker(
                    marker_id="memory:size-anomaly",
                    stage=Stage.MEMORY,
                    score=0.4,
                    description=f"unusual growth of {mutation.path}",
                    source_event_seq=event.seq,
                )
            )
            directive = directive_max(directive, Directive.warn())

        if directive.level >= DirectiveLevel.BLOCK:
            proposed = PROPOSE_REJECT
            state.rollbacks.append(
                RollbackRecord(
                    path=mutation.path, payload=mutation.before, event_seq=event.seq
                )
            )
        elif directive.level >= DirectiveLevel.RESTRICT:
            proposed = PROPOSE_SHADOW
        else:
            proposed = PROPOSE_PERSIST

        return LayerReport(
            layer_id=LAYER_COGNITION,
            directive=directive,
            warnings=tuple(warnings),
            evidence=tuple(evidence),
            risk_markers=tuple(markers),
            details={
                "mutation": {
                    "path": mutation.path,
                    "proposed": proposed,
                    "after": mutation.after,
                    "added_lines": len(added),
                }
            },
        )


def _looks_like_opaque_write(payload: ToolCallPayload) -> bool:
    return bool(payload.command and _OPAQUE_WRITE.search(payload.command))
