"""Decision alignment: compare what the agent plans to do with what the
user authorized.

An assistant message is reduced to a proposed action: implied capabilities,
referenced paths, referenced destinations. Intent coverage and a judge
score combine (minimum wins), sensitive parameters and the session history
are audited, and the result lands in one of three concern tiers. High
concern restricts the drifted capabilities for the rest of the session.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Protocol

from ..capabilities import CapabilityMap
from ..config import DecisionPolicy
from ..events import MessageWritePayload, SecurityEvent
from ..model import (
    LAYER_DECISION,
    Directive,
    Evidence,
    LayerReport,
    RiskMarker,
    Stage,
    ThreatWarning,
)
from ..paths import matches_any
from ..rules import CompiledRule, RuleMatch, find_matches
from ..session import (
    IntentRecord,
    SessionState,
    StandingRestriction,
    active_blocks,
    session_risk,
)
from ..textnorm import normalize_text
from .base import LayerContext

log = logging.getLogger(__name__)

TIER_LOW = "low"
TIER_MEDIUM = "medium"
TIER_HIGH = "high"

_PATH_TOKEN = re.compile(
    r"(?:~/|\.{0,2}/)[\w.\-/]+"      # rooted, home or relative paths
    r"|\b[\w.\-]+(?:/[\w.\-]+)+"     # bare multi-segment paths
    r"|\b[\w\-]+\.(?:md|txt|json|yaml|yml|env|pem|key|cfg|ini)\b"
)
_URL = re.compile(r"https?://([^\s/'\"<>]+)[^\s'\"<>]*")


@dataclass(frozen=True)
class ProposedAction:
    content: str  # normalized
    implied: frozenset[str]
    paths: tuple[str, ...]
    destinations: tuple[str, ...]  # (host, full excerpt) folded to host
    destination_excerpts: tuple[str, ...]
    tools: tuple[str, ...]


def extract_action(
    content: str, cap_map: CapabilityMap, policy: DecisionPolicy, *, normalized: bool = False
) -> ProposedAction:
    norm = content if normalized else normalize_text(content)
    implied = cap_map.implied(norm, normalized=True)
    paths = tuple(dict.fromkeys(m.group(0) for m in _PATH_TOKEN.finditer(norm)))
    pairs: list[tuple[str, str]] = []
    for m in _URL.finditer(norm):
        host = m.group(1).rsplit(":", 1)[0] if ":" in m.group(1) else m.group(1)
        if (host, m.group(0)) not in pairs:
            pairs.append((host, m.group(0)))
    # paths that are really just the path part of a URL are not file paths
    url_spans = [(m.start(), m.end()) for m in _URL.finditer(norm)]
    if url_spans:
        kept = []
        for p in paths:
            idx = norm.find(p)
            inside = any(s <= idx and idx + len(p) <= e for s, e in url_spans)
            if not inside:
                kept.append(p)
        paths = tuple(kept)
    tools = tuple(t for t in policy.tool_names if re.search(rf"\b{re.escape(t)}\b", norm))
    return ProposedAction(
        content=norm,
        implied=implied,
        paths=paths,
        destinations=tuple(h for h, _ in pairs),
        destination_excerpts=tuple(e for _, e in pairs),
        tools=tools,
    )


def check_intent_consistency(action: ProposedAction, intent: IntentRecord) -> float:
    """Fraction of implied capabilities the intent authorizes; vacuous is 1.0."""
    if not action.implied:
        return 1.0
    covered = action.implied & intent.capabilities
    return len(covered) / len(action.implied)


@dataclass(frozen=True)
class Violation:
    kind: str  # sensitive-parameter | unlisted-destination
    excerpt: str
    capability: str


def validate_sensitive_params(action: ProposedAction, policy: DecisionPolicy) -> list[Violation]:
    out: list[Violation] = []
    for path in action.paths:
        if matches_any(list(policy.sensitive_path_globs), path):
            out.append(Violation("sensitive-parameter", path, "file-read"))
    allow = {h.lower() for h in policy.destination_allowlist}
    for host, excerpt in zip(action.destinations, action.destination_excerpts):
        if host not in allow:
            out.append(Violation("unlisted-destination", excerpt, "network"))
    return out


def audit_global(state: SessionState, action: ProposedAction, seq: int) -> list[Evidence]:
    """History relevant to this action: correlated ledger markers and
    unexpired standing blocks."""
    out: list[Evidence] = []
    for marker in state.ledger:
        if marker.excerpt and len(marker.excerpt) >= 12 and marker.excerpt in action.content:
            out.append(
                Evidence(
                    "ledger-correlation",
                    marker.excerpt,
                    f"marker:{marker.marker_id}@{marker.source_event_seq}",
                )
            )
    for block in active_blocks(state, seq):
        out.append(
            Evidence(
                "standing-block",
                block.reason,
                f"block:{block.layer_id}@{block.issued_seq}",
            )
        )
    return out


class Judge(Protocol):
    """Anything that can score a proposed action in [0, 1]; 1 is aligned."""

    def score(self, action: ProposedAction) -> tuple[float, list[RuleMatch]]: ...


class RuleJudge:
    """Deterministic default judge: a fixed penalty per decision-rule match."""

    def __init__(self, rules: tuple[CompiledRule, ...], penalty: float) -> None:
        self._rules = rules
        self._penalty = penalty

    def score(self, action: ProposedAction) -> tuple[float, list[RuleMatch]]:
        matches = find_matches(action.content, self._rules)
        return max(0.0, 1.0 - self._penalty * len(matches)), matches


class DecisionAlignmentLayer:
    layer_id = LAYER_DECISION

    def __init__(self, judge: Judge | None = None) -> None:
        self._judge = judge

    def evaluate(
        self, event: SecurityEvent, state: SessionState, ctx: LayerContext
    ) -> LayerReport:
        payload = event.payload
        assert isinstance(payload, MessageWritePayload)
        policy = ctx.config.decision
        action = extract_action(payload.content, ctx.config.capability_map, policy)

        if state.intent is None:
            return LayerReport(
                layer_id=LAYER_DECISION,
                directive=Directive.restrict(action.implied),
                warnings=(
                    ThreatWarning(
                        "no-authorized-intent",
                        "no user intent on record to align this decision against",
                    ),
                ),
                evidence=(Evidence("intent-missing", action.content[:80], "session"),),
                risk_markers=(
                    RiskMarker(
                        marker_id="decision:no-intent",
                        stage=Stage.DECISION,
                        score=policy.coverage_marker_score,
                        description="decision evaluated without an intent record",
                        source_event_seq=event.seq,
                    ),
                ),
                details={"tier": TIER_HIGH, "score": 0.0},
            )

        coverage = check_intent_consistency(action, state.intent)
        judge = self._judge or RuleJudge(
            ctx.rules.for_layer(LAYER_DECISION), policy.judge_penalty
        )
        judge_score, judge_findings = judge.score(action)
        combined = min(coverage, judge_score)
        violations = validate_sensitive_params(action, policy)
        audit = audit_global(state, action, event.seq)

        if combined < policy.tier_high or (violations and audit):
            tier = TIER_HIGH
        elif combined < policy.tier_low or violations:
            tier = TIER_MEDIUM
        else:
            tier = TIER_LOW

        warnings: list[ThreatWarning] = []
        evidence: list[Evidence] = list(audit)
        markers: list[RiskMarker] = []

        uncovered = action.implied - state.intent.capabilities
        if uncovered:
            warnings.append(
                ThreatWarning(
                    "intent-drift",
                    "decision implies capabilities the intent does not cover: "
                    + ", ".join(sorted(uncovered)),
                )
            )
            evidence.append(
                Evidence("intent-coverage", ", ".join(sorted(uncovered)), "content")
            )
        for v in violations:
            warnings.append(
                ThreatWarning(v.kind, f"{v.kind.replace('-', ' ')}: {v.excerpt}")
            )
            evidence.append(Evidence(v.kind, v.excerpt, "content"))
            markers.append(
                RiskMarker(
                    marker_id=f"decision:{v.kind}",
                    stage=Stage.DECISION,
                    score=policy.violation_marker_score,
                    description=f"{v.kind} in proposed action",
                    source_event_seq=event.seq,
                    excerpt=v.excerpt,
                )
            )
        for jm in judge_findings:
            evidence.append(
                Evidence(jm.rule.id, jm.excerpt, f"content[{jm.start}:{jm.end}]")
            )
        if tier != TIER_LOW and coverage < 1.0:
            markers.append(
                RiskMarker(
                    marker_id="decision:coverage-gap",
                    stage=Stage.DECISION,
                    score=policy.coverage_marker_score,
                    description=f"intent coverage {coverage:.2f} on proposed action",
                    source_event_seq=event.seq,
                )
            )

        restricted = frozenset(uncovered) | frozenset(v.capability for v in violations)
        details: dict[str, object] = {
            "tier": tier,
            "coverage": round(coverage, 12),
            "judge_score": round(judge_score, 12),
            "score": round(combined, 12),
            "session_risk_before": round(session_risk(state), 12),
        }

        if tier == TIER_HIGH:
            if restricted:
                state.add_restriction(
                    StandingRestriction(
                        capabilities=restricted,
                        layer_id=LAYER_DECISION,
                        event_seq=event.seq,
                        reason="high-concern decision drift",
                    )
                )
            details["standing_restriction"] = sorted(restricted)
            if not warnings:
                warnings.append(
                    ThreatWarning("intent-drift", f"combined alignment score {combined:.2f}")
                )
            return LayerReport(
                layer_id=LAYER_DECISION,
                directive=Directive.restrict(restricted),
                warnings=tuple(warnings),
                evidence=tuple(evidence),
                risk_markers=tuple(markers),
                details=details,
            )
        if tier == TIER_MEDIUM:
            details["approval_required"] = True
            details["approval_granted"] = event.seq in state.approvals_granted
            if not warnings:
                warnings.append(
                    ThreatWarning("intent-drift", f"combined alignment score {combined:.2f}")
                )
            return LayerReport(
                layer_id=LAYER_DECISION,
                directive=Directive.warn(),
                warnings=tuple(warnings),
                evidence=tuple(evidence),
                risk_markers=tuple(markers),
                details=details,
            )
        return LayerReport(
            layer_id=LAYER_DECISION,
            directive=Directive.allow(),
            evidence=tuple(evidence),
            risk_markers=tuple(markers),
            details=details,
        )
