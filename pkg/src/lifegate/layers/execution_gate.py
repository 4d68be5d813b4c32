"""Execution control: the final gate in front of every tool call.

Three independent checks, any of which can block: least-privilege
permissions against the session's effective capability set, a dangerous
command library, and repeated-signature loop detection. A warn-level
match escalates to restrict when accumulated session risk is already high.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

from ..events import SecurityEvent, ToolCallPayload
from ..model import (
    LAYER_EXECUTION,
    Directive,
    DirectiveLevel,
    Evidence,
    LayerReport,
    RiskMarker,
    Stage,
    ThreatWarning,
    directive_max,
)
from ..paths import matches_any
from ..session import (
    SessionState,
    StandingRestriction,
    active_capabilities,
    session_risk,
)
from ..textnorm import normalize_text
from .base import LayerContext

log = logging.getLogger(__name__)

SIGNATURE_CHARS = 200


@dataclass(frozen=True)
class ActionRequest:
    tool: str
    text: str  # normalized tool + command + args
    command: str  # normalized command (or args fallback), signature source
    paths: tuple[str, ...]
    implied: frozenset[str]


def build_request(payload: ToolCallPayload, ctx: LayerContext) -> ActionRequest:
    parts = [payload.tool]
    if payload.command:
        parts.append(payload.command)
    if payload.args:
        parts.append(json.dumps(payload.args, sort_keys=True))
    if payload.target_path:
        parts.append(payload.target_path)
    text = normalize_text(" ".join(parts))
    command = normalize_text(payload.command or json.dumps(payload.args, sort_keys=True))
    paths = []
    if payload.target_path:
        paths.append(payload.target_path)
    for key in ("path", "file", "target", "filename"):
        v = payload.args.get(key)
        if isinstance(v, str) and v:
            paths.append(v)
    if payload.command:
        for token in payload.command.split():
            tok = token.strip("\"'`;|&<>()")
            if "/" in tok or tok.count(".") >= 1 and len(tok) > 2:
                paths.append(tok)
    return ActionRequest(
        tool=payload.tool,
        text=text,
        command=command,
        paths=tuple(dict.fromkeys(paths)),
        implied=ctx.config.capability_map.implied(text, normalized=True),
    )


def signature_of(request: ActionRequest) -> str:
    return (request.tool + " " + request.command)[:SIGNATURE_CHARS]


@dataclass(frozen=True)
class Denial:
    reason: str  # restricted-capability | tool-not-allowlisted | sensitive-path-restricted
    detail: str
    excerpt: str


def check_permission(
    request: ActionRequest, state: SessionState, ctx: LayerContext
) -> list[Denial]:
    cfg = ctx.config
    effective = active_capabilities(state, cfg.capability_vocabulary)
    denials: list[Denial] = []

    missing = request.implied - effective
    for cap in sorted(missing):
        denials.append(
            Denial(
                "restricted-capability",
                f"call implies {cap!r} which is outside the effective capability set",
                request.command[:120] or request.tool,
            )
        )

    allowlist = None
    if state.baseline is not None:
        allowlist = state.baseline.config_constraints.get("tool_allowlist")
    if isinstance(allowlist, list) and "*" not in allowlist:
        if request.tool not in allowlist:
            denials.append(
                Denial(
                    "tool-not-allowlisted",
                    f"tool {request.tool!r} is not in the configured allowlist",
                    request.tool,
                )
            )

    file_caps = {"file-read", "file-write"}
    if not file_caps <= effective:
        for path in request.paths:
            if matches_any(list(cfg.decision.sensitive_path_globs), path):
                denials.append(
                    Denial(
                        "sensitive-path-restricted",
                        f"sensitive path {path!r} with file capabilities restricted",
                        path,
                    )
                )
                break
    return denials


def detect_loop(
    state: SessionState, signature: str, *, count: int, window: int
) -> tuple[bool, int]:
    """Counts the signature in the last `window` tool calls, current included.

    The caller appends the current signature to the history first.
    """
    recent = state.signature_history[-window:]
    n = sum(1 for _, sig in recent if sig == signature)
    return n >= count, n


class ExecutionControlLayer:
    layer_id = LAYER_EXECUTION

    def evaluate(
        self, event: SecurityEvent, state: SessionState, ctx: LayerContext
    ) -> LayerReport:
        payload = event.payload
        assert isinstance(payload, ToolCallPayload)
        cfg = ctx.config
        request = build_request(payload, ctx)
        signature = signature_of(request)
        state.signature_history.append((event.seq, signature))
        risk_before = session_risk(state)

        warnings: list[ThreatWarning] = []
        evidence: list[Evidence] = []
        markers: list[RiskMarker] = []
        directive = Directive.allow()

        denials = check_permission(request, state, ctx)
        for d in denials:
            warnings.append(ThreatWarning(d.reason, d.detail))
            evidence.append(Evidence(d.reason, d.excerpt, "call"))
            markers.append(
                RiskMarker(
                    marker_id=f"execution:{d.reason}",
                    stage=Stage.EXECUTION,
                    score=0.8,
                    description=d.detail,
                    source_event_seq=event.seq,
                    excerpt=request.command[:SIGNATURE_CHARS] or request.tool,
                )
            )
        if denials:
            directive = directive_max(directive, Directive.block())

        for cr in ctx.rules.for_layer(LAYER_EXECUTION):
            for m in cr.matches(request.text):
                rule = m.rule
                warnings.append(
                    ThreatWarning("dangerous-command", rule.description or rule.id)
                )
                evidence.append(Evidence(rule.id, m.excerpt, f"call[{m.start}:{m.end}]"))
                markers.append(
                    RiskMarker(
                        marker_id=f"execution:rule:{rule.id}",
                        stage=Stage.EXECUTION,
                        score=rule.severity,
                        description=rule.description or f"rule {rule.id} matched",
                        source_event_seq=event.seq,
                        excerpt=request.command[:SIGNATURE_CHARS] or m.excerpt,
                    )
                )
                if rule.action is DirectiveLevel.BLOCK:
                    contribution = Directive.block()
                elif rule.action is DirectiveLevel.RESTRICT:
                    caps = ctx.config.capability_map.implied(m.excerpt, normalized=True)
                    contribution = Directive.restrict(caps)
                    if caps:
                        state.add_restriction(
                            StandingRestriction(
                                capabilities=caps,
                                layer_id=LAYER_EXECUTION,
                                event_seq=event.seq,
                                reason=f"dangerous pattern {rule.id}",
                            )
                        )
                else:
                    contribution = Directive(rule.action)
                    if (
                        rule.action is DirectiveLevel.WARN
                        and risk_before >= cfg.execution.risk_escalation
                    ):
                        caps = ctx.config.capability_map.implied(m.excerpt, normalized=True)
                        warnings.append(
                            ThreatWarning(
                                "risk-escalation",
                                f"warn-level match {rule.id} escalated at session risk "
                                f"{risk_before:.2f}",
                            )
                        )
                        state.add_restriction(
                            StandingRestriction(
                                capabilities=caps,
                                layer_id=LAYER_EXECUTION,
                                event_seq=event.seq,
                                reason=f"escalated warn {rule.id}",
                            )
                        )
                        contribution = Directive.restrict(caps)
                directive = directive_max(directive, contribution)

        looped, count = detect_loop(
            state,
            signature,
            count=cfg.execution.loop_count,
            window=cfg.execution.loop_window,
        )
        if looped:
            warnings.append(
                ThreatWarning(
                    "command-loop",
                    f"signature repeated {count} times within the last "
                    f"{cfg.execution.loop_window} tool calls",
                )
            )
            evidence.append(Evidence("command-loop", signature, "signature-window"))
            markers.append(
                RiskMarker(
                    marker_id="execution:command-loop",
                    stage=Stage.EXECUTION,
                    score=0.8,
                    description=f"command loop: {count} identical signatures",
                    source_event_seq=event.seq,
                    excerpt=signature,
                )
            )
            directive = directive_max(directive, Directive.block())

        return LayerReport(
            layer_id=LAYER_EXECUTION,
            directive=directive,
            warnings=tuple(warnings),
            evidence=tuple(evidence),
            risk_markers=tuple(markers),
            details={
                "signature": signature,
                "loop_count": count,
                "effective_capabilities": sorted(
                    active_capabilities(state, cfg.capability_vocabulary)
                ),
                "session_risk_before": round(risk_before, 12),
            },
        )
