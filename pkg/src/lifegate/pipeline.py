"""The event pipeline: normalize hook records, route them through the
protection layers, merge directives under zero trust.

Dispatch is fail-safe by construction: a layer that raises contributes a
synthetic restrict report instead of silently dropping out, an event no
enabled layer covers is restricted, and the merged directive can never be
weaker than any layer's directive or any unexpired standing block.
"""

from __future__ import annotations

import logging
from typing import Mapping, Sequence

from .config import EngineConfig
from .events import (
    HookKind,
    HookRecord,
    MessageWritePayload,
    PromptBuildPayload,
    SecurityEvent,
    ToolCallPayload,
    check_sequence,
    parse_hook_record,
    parse_message_payload,
    parse_prompt_payload,
    parse_tool_payload,
)
from .layers import (
    CognitionProtectionLayer,
    DecisionAlignmentLayer,
    ExecutionControlLayer,
    FoundationScanLayer,
    InputSanitizationLayer,
    LayerContext,
    ProtectionLayer,
)
from .layers.memory_gate import PROPOSE_PERSIST, PROPOSE_SHADOW, find_memory_path
from .model import (
    LAYER_COGNITION,
    LAYER_DECISION,
    LAYER_EXECUTION,
    LAYER_FOUNDATION,
    LAYER_INPUT,
    BlockScope,
    Directive,
    DirectiveLevel,
    EmptyMerge,
    Evidence,
    LayerReport,
    Provenance,
    SourceKind,
    Stage,
    ThreatWarning,
    Trust,
    Verdict,
    directive_max,
)
from .rules import RuleSet, default_rules
from .session import (
    IntentRecord,
    KnowledgeBase,
    SessionState,
    StandingBlock,
    active_blocks,
    record_marker,
    session_risk,
    trace_attack_path,
)
from .textnorm import normalize_text

log = logging.getLogger(__name__)


def normalize_hook(record: HookRecord, config: EngineConfig) -> SecurityEvent:
    """Lift a validated hook record into a SecurityEvent."""
    if record.hook is HookKind.PROMPT_BUILD:
        payload: object = parse_prompt_payload(record)
        provenance = Provenance(SourceKind.SYSTEM, "prompt-build", Trust.TRUSTED)
        targets = frozenset({Stage.INITIALIZATION})
    elif record.hook is HookKind.MESSAGE_WRITE:
        payload = parse_message_payload(record)
        assert isinstance(payload, MessageWritePayload)
        provenance = payload.source
        if record.role == "assistant":
            targets = frozenset({Stage.DECISION})
        else:
            targets = frozenset({Stage.INPUT})
    else:
        payload = parse_tool_payload(record)
        assert isinstance(payload, ToolCallPayload)
        provenance = Provenance(
            SourceKind.ASSISTANT, f"tool:{payload.tool}", Trust.UNVERIFIED
        )
        targets = frozenset({Stage.EXECUTION})
        if find_memory_path(payload, config.memory_globs) is not None:
            targets |= {Stage.MEMORY}
    return SecurityEvent(
        session_id=record.session_id,
        seq=record.seq,
        hook=record.hook,
        role=record.role,
        payload=payload,  # type: ignore[arg-type]
        stage_targets=targets,
        provenance=provenance,
        ts=record.ts,
    )


def table_route(event: SecurityEvent) -> list[str]:
    """The routing table, ignoring which layers are enabled."""
    if event.hook is HookKind.PROMPT_BUILD:
        return [LAYER_FOUNDATION]
    if event.hook is HookKind.MESSAGE_WRITE:
        if event.role == "assistant":
            return [LAYER_DECISION]
        return [LAYER_INPUT]
    layers = []
    if Stage.MEMORY in event.stage_targets:
        layers.append(LAYER_COGNITION)
    layers.append(LAYER_EXECUTION)
    return layers


def route(event: SecurityEvent, config: EngineConfig) -> list[str]:
    return [l for l in table_route(event) if l in config.enabled_layers]


def merge_directives(
    reports: Sequence[LayerReport], standing: Sequence[StandingBlock]
) -> Directive:
    """Zero-trust join: at least as strict as every input."""
    directives = [r.directive for r in reports]
    directives.extend(
        Directive(
            DirectiveLevel.BLOCK, block_scope=b.scope, block_expiry=b.expiry
        )
        for b in standing
    )
    if not directives:
        raise EmptyMerge("nothing to merge: no reports and no standing blocks")
    out = directives[0]
    for d in directives[1:]:
        out = directive_max(out, d)
    return out


def _failure_report(layer_id: str, exc: Exception, vocabulary: tuple[str, ...]) -> LayerReport:
    return LayerReport(
        layer_id=layer_id,
        directive=Directive.restrict(frozenset(vocabulary)),
        warnings=(
            ThreatWarning(
                "layer-failure",
                f"{layer_id} failed closed: {type(exc).__name__}: {exc}",
            ),
        ),
        evidence=(Evidence("layer-failure", str(exc)[:120], layer_id),),
    )


def _unavailable_report(layer_id: str, vocabulary: tuple[str, ...]) -> LayerReport:
    return LayerReport(
        layer_id=layer_id,
        directive=Directive.restrict(frozenset(vocabulary)),
        warnings=(
            ThreatWarning(
                "layer-unavailable",
                f"no enabled layer covers this event; {layer_id} would have",
            ),
        ),
        evidence=(Evidence("layer-unavailable", layer_id, "routing"),),
    )


def default_layers() -> dict[str, ProtectionLayer]:
    return {
        LAYER_FOUNDATION: FoundationScanLayer(),
        LAYER_INPUT: InputSanitizationLayer(),
        LAYER_COGNITION: CognitionProtectionLayer(),
        LAYER_DECISION: DecisionAlignmentLayer(),
        LAYER_EXECUTION: ExecutionControlLayer(),
    }


class Engine:
    """Process hook records for any number of sessions, in arrival order."""

    def __init__(
        self,
        *,
        rules: RuleSet | None = None,
        config: EngineConfig | None = None,
        kb: KnowledgeBase | None = None,
        layers: Mapping[str, ProtectionLayer] | None = None,
        persisted: dict[str, str] | None = None,
    ) -> None:
        self.config = config or EngineConfig.defaults()
        self.rules = rules or default_rules()
        # an empty KnowledgeBase is falsy; `or` would drop the caller's object
        self.kb = kb if kb is not None else KnowledgeBase()
        self.layers: dict[str, ProtectionLayer] = dict(layers or default_layers())
        self.ctx = LayerContext(
            config=self.config,
            rules=self.rules,
            kb=self.kb,
            persisted=persisted if persisted is not None else {},
        )
        self.sessions: dict[str, SessionState] = {}
        # (session_id, seq, record, newly_learned) in interception order
        self.attack_log: list[tuple[str, int, object, bool]] = []

    # -- sessions -----------------------------------------------------------

    def session(self, session_id: str) -> SessionState:
        state = self.sessions.get(session_id)
        if state is None:
            state = SessionState(session_id=session_id)
            self.sessions[session_id] = state
        return state

    def prime_session(
        self,
        session_id: str,
        *,
        intent: IntentRecord | None = None,
        approvals: frozenset[int] = frozenset(),
    ) -> SessionState:
        state = self.session(session_id)
        if intent is not None:
            state.intent = intent
        if approvals:
            state.approvals_granted = state.approvals_granted | approvals
        return state

    # -- processing ----------------------------------------------------------

    def process_raw(self, raw: object) -> Verdict:
        return self.process(parse_hook_record(raw))

    def process(self, record: HookRecord) -> Verdict:
        state = self.session(record.session_id)
        check_sequence(record, state.last_seq)
        state.last_seq = record.seq
        event = normalize_hook(record, self.config)

        if state.intent is None and event.hook is HookKind.MESSAGE_WRITE and event.role == "user":
            payload = event.payload
            assert isinstance(payload, MessageWritePayload)
            norm = normalize_text(payload.content)
            state.intent = IntentRecord(
                description=norm,
                capabilities=self.config.capability_map.implied(norm, normalized=True),
                origin="first-user-message",
            )

        return self.dispatch(event, state)

    def dispatch(self, event: SecurityEvent, state: SessionState) -> Verdict:
        table = table_route(event)
        enabled = [l for l in table if l in self.config.enabled_layers]
        reports: list[LayerReport] = []
        if not enabled:
            report = _unavailable_report(table[0], self.config.capability_vocabulary)
            reports.append(report)
            for marker in report.risk_markers:
                record_marker(state, marker)
        for layer_id in enabled:
            layer = self.layers.get(layer_id)
            if layer is None:
                report = _unavailable_report(layer_id, self.config.capability_vocabulary)
            else:
                try:
                    report = layer.evaluate(event, state, self.ctx)
                except Exception as exc:  # fail closed, never open
                    log.warning("layer %s failed on seq %d: %s", layer_id, event.seq, exc)
                    report = _failure_report(
                        layer_id, exc, self.config.capability_vocabulary
                    )
            reports.append(report)
            for marker in report.risk_markers:
                record_marker(state, marker)

        standing = active_blocks(state, event.seq)
        final = merge_directives(reports, standing)

        # session-scoped blocks issued by this event start standing now
        for report in reports:
            d = report.directive
            if (
                d.level is DirectiveLevel.BLOCK
                and d.block_scope is not None
                and d.block_scope >= BlockScope.SESSION
            ):
                reason = (
                    report.warnings[0].warning_type
                    if report.warnings
                    else (report.evidence[0].check if report.evidence else "block")
                )
                state.register_block(
                    StandingBlock(
                        scope=d.block_scope,
                        issued_seq=event.seq,
                        expiry=d.block_expiry,
                        layer_id=report.layer_id,
                        reason=reason,
                    )
                )

        self._apply_memory_effects(reports, final, state)
        self._record_attack_paths(reports, event, state)

        return Verdict(
            session_id=event.session_id,
            event_seq=event.seq,
            final=final,
            reports=tuple(reports),
            session_risk=session_risk(state),
        )

    def _apply_memory_effects(
        self, reports: Sequence[LayerReport], final: Directive, state: SessionState
    ) -> None:
        for report in reports:
            if report.layer_id != LAYER_COGNITION:
                continue
            mutation = report.details.get("mutation") if report.details else None
            if not isinstance(mutation, dict):
                continue
            proposed = mutation.get("proposed")
            path = mutation.get("path")
            after = mutation.get("after")
            if not isinstance(path, str) or not isinstance(after, str):
                continue
            if proposed == PROPOSE_PERSIST and final.level <= DirectiveLevel.WARN:
                self.ctx.persisted[path] = after
            elif proposed == PROPOSE_SHADOW and final.level <= DirectiveLevel.RESTRICT:
                state.shadow_memory[path] = after

    def _record_attack_paths(
        self, reports: Sequence[LayerReport], event: SecurityEvent, state: SessionState
    ) -> None:
        for report in reports:
            if report.directive.level < DirectiveLevel.RESTRICT:
                continue
            if not report.risk_markers:
                continue  # a failing layer is an outage, not an attack
            marker = max(report.risk_markers, key=lambda m: m.score)
            trigger = (
                report.evidence[0].check
                if report.evidence
                else (report.warnings[0].warning_type if report.warnings else "unspecified")
            )
            record = trace_attack_path(state, interception_marker=marker, trigger=trigger)
            new = self.kb.add(record)
            self.attack_log.append((event.session_id, event.seq, record, new))
