"""Input sanitization: examine external content before it enters context.

Every message write is normalized and matched against the input rule
library twice: the segment alone, and a windowed per-origin concatenation
that catches payloads an attacker split across several tool results. The
severity of what matched picks the outcome: redact, quarantine, or block.
In detection-only mode everything is still detected and recorded, but the
directive is capped at warn.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from ..events import MessageWritePayload, SecurityEvent
from ..model import (
    LAYER_INPUT,
    Directive,
    DirectiveLevel,
    Evidence,
    LayerReport,
    RiskMarker,
    Stage,
    ThreatWarning,
    Trust,
)
from ..rules import CompiledRule, RuleMatch, RuleSet, find_matches
from ..session import FlaggedExcerpt, QuarantineRecord, SessionState
from ..textnorm import normalize_text
from .base import LayerContext

log = logging.getLogger(__name__)

REDACTION_TEMPLATE = "[REDACTED:%s]"


@dataclass(frozen=True)
class FragmentMatch:
    """A rule match on the joined window that spans more than one segment."""

    match: RuleMatch
    segment_seqs: tuple[int, ...]  # seqs of the window segments the span touches
    current_span: tuple[int, int] | None  # portion inside the newest segment


def detect_injection(normalized: str, rules: tuple[CompiledRule, ...]) -> list[RuleMatch]:
    return find_matches(normalized, rules)


def update_window(
    state: SessionState, origin: str, seq: int, normalized: str, window_size: int
) -> list[tuple[int, str]]:
    window = state.fragment_windows.setdefault(origin, [])
    window.append((seq, normalized))
    del window[:-window_size]
    return window


def detect_fragmented(
    window: list[tuple[int, str]], rules: tuple[CompiledRule, ...]
) -> list[FragmentMatch]:
    """Match the space-joined window, keeping only true cross-segment spans.

    Literal rules additionally match whitespace-elastically, so a fragment
    boundary that fell mid-word is still caught. Only matches touching the
    newest segment are reported; older combinations were reported when
    their own segment arrived.
    """
    if len(window) < 2:
        return []
    texts = [t for _, t in window]
    joined = " ".join(texts)
    bounds: list[tuple[int, int]] = []
    pos = 0
    for t in texts:
        bounds.append((pos, pos + len(t)))
        pos += len(t) + 1
    cur_start, cur_end = bounds[-1]

    raw: dict[tuple[str, int, int], RuleMatch] = {}
    for cr in rules:
        for m in cr.matches(joined):
            raw.setdefault((m.rule.id, m.start, m.end), m)
        for m in cr.matches_elastic(joined):
            raw.setdefault((m.rule.id, m.start, m.end), m)

    out: list[FragmentMatch] = []
    for m in sorted(raw.values(), key=lambda m: (m.start, m.end, m.rule.id)):
        touched = [
            i for i, (s, e) in enumerate(bounds) if m.start < e and m.end > s
        ]
        if len(touched) < 2:
            continue  # single-segment: detect_injection territory
        if touched[-1] != len(window) - 1:
            continue
        overlap_start = max(m.start, cur_start)
        overlap_end = min(m.end, cur_end)
        current_span = None
        if overlap_start < overlap_end:
            current_span = (overlap_start - cur_start, overlap_end - cur_start)
        out.append(
            FragmentMatch(
                match=m,
                segment_seqs=tuple(window[i][0] for i in touched),
                current_span=current_span,
            )
        )
    return out


@dataclass(frozen=True)
class SanitizeOutcome:
    directive: Directive
    tagged_content: str  # normalized; redacted or emptied as directed
    quarantine_label: str | None


def _redact(normalized: str, spans: list[tuple[int, int]], rule_ids: list[str]) -> str:
    """Replace matched spans, merging overlaps, right to left."""
    paired = sorted(zip(spans, rule_ids), key=lambda p: (p[0][0], p[0][1]))
    merged: list[tuple[int, int, str]] = []
    for (s, e), rid in paired:
        if merged and s <= merged[-1][1]:
            ps, pe, prid = merged[-1]
            merged[-1] = (ps, max(pe, e), prid)
        else:
            merged.append((s, e, rid))
    out = normalized
    for s, e, rid in reversed(merged):
        out = out[:s] + (REDACTION_TEMPLATE % rid) + out[e:]
    return out


def sanitize(
    normalized: str,
    single: list[RuleMatch],
    fragmented: list[FragmentMatch],
    *,
    session_id: str,
    seq: int,
    quarantine_threshold: float,
    block_threshold: float,
    detection_only: bool,
) -> SanitizeOutcome:
    all_matches = [m for m in single] + [f.match for f in fragmented]
    if not all_matches:
        return SanitizeOutcome(Directive.allow(), normalized, None)
    max_severity = max(m.rule.severity for m in all_matches)
    if detection_only:
        return SanitizeOutcome(Directive.warn(), normalized, None)
    if max_severity >= block_threshold:
        return SanitizeOutcome(Directive.block(), "", None)
    if max_severity >= quarantine_threshold:
        label = f"quarantine:{session_id}:{seq}"
        return SanitizeOutcome(Directive.quarantine(), "", label)
    spans = [(m.start, m.end) for m in single]
    rule_ids = [m.rule.id for m in single]
    for f in fragmented:
        if f.current_span is not None:
            spans.append(f.current_span)
            rule_ids.append(f.match.rule.id)
    tagged = _redact(normalized, spans, rule_ids) if spans else normalized
    return SanitizeOutcome(Directive.rewrite(tagged), tagged, None)


class InputSanitizationLayer:
    layer_id = LAYER_INPUT

    def evaluate(
        self, event: SecurityEvent, state: SessionState, ctx: LayerContext
    ) -> LayerReport:
        payload = event.payload
        assert isinstance(payload, MessageWritePayload)
        cfg = ctx.config
        origin = payload.source.origin_label
        trust = state.effective_trust(origin, payload.source.trust)
        normalized = normalize_text(payload.content)
        layer_rules = ctx.rules.for_layer(LAYER_INPUT)

        single = detect_injection(normalized, layer_rules)
        window = update_window(
            state, origin, event.seq, normalized, cfg.input.fragment_window
        )
        fragmented = detect_fragmented(window, layer_rules)

        detection_only = cfg.detection_only_input
        outcome = sanitize(
            normalized,
            single,
            fragmented,
            session_id=event.session_id,
            seq=event.seq,
            quarantine_threshold=cfg.input.quarantine_threshold,
            block_threshold=cfg.input.block_threshold,
            detection_only=detection_only,
        )

        warnings: list[ThreatWarning] = []
        evidence: list[Evidence] = []
        markers: list[RiskMarker] = []
        for m in single:
            rule = m.rule
            warnings.append(ThreatWarning("injection-pattern", rule.description or rule.id))
            evidence.append(Evidence(rule.id, m.excerpt, f"content[{m.start}:{m.end}]"))
            markers.append(
                RiskMarker(
                    marker_id=f"input:rule:{rule.id}",
                    stage=Stage.INPUT,
                    score=rule.severity,
                    description=rule.description or f"rule {rule.id} matched",
                    source_event_seq=event.seq,
                    origin_label=origin,
                    excerpt=m.excerpt,
                )
            )
        for f in fragmented:
            rule = f.match.rule
            seq_lo, seq_hi = f.segment_seqs[0], f.segment_seqs[-1]
            warnings.append(
                ThreatWarning(
                    "fragmented-injection",
                    f"{rule.description or rule.id} (assembled across events "
                    f"{seq_lo}-{seq_hi} from {origin})",
                )
            )
            evidence.append(
                Evidence(rule.id, f.match.excerpt, f"window[{seq_lo}:{seq_hi}]")
            )
            markers.append(
                RiskMarker(
                    marker_id=f"input:fragmented:{rule.id}",
                    stage=Stage.INPUT,
                    score=rule.severity,
                    description=f"fragmented match of {rule.id} across {origin} segments",
                    source_event_seq=event.seq,
                    origin_label=origin,
                    excerpt=f.match.excerpt,
                )
            )

        # provenance and taint bookkeeping happen in both modes
        if fragmented:
            state.downgrade_trust(origin, Trust.SUSPECT)
            trust = state.effective_trust(origin, trust)
            for f in fragmented:
                state.flagged.append(
                    FlaggedExcerpt(
                        excerpt=f.match.excerpt,
                        origin_label=origin,
                        trust=Trust.SUSPECT,
                        event_seq=event.seq,
                    )
                )
        if outcome.directive.level in (DirectiveLevel.QUARANTINE, DirectiveLevel.BLOCK):
            state.downgrade_trust(origin, Trust.QUARANTINED)
            trust = state.effective_trust(origin, trust)
            for m in single:
                state.flagged.append(
                    FlaggedExcerpt(
                        excerpt=m.excerpt,
                        origin_label=origin,
                        trust=Trust.QUARANTINED,
                        event_seq=event.seq,
                    )
                )
        if outcome.quarantine_label is not None:
            state.quarantined.append(
                QuarantineRecord(
                    label=outcome.quarantine_label,
                    origin_label=origin,
                    content=normalized,
                    event_seq=event.seq,
                )
            )

        details: dict[str, object] = {
            "origin": origin,
            "trust": trust.label,
            "mode": "detection-only" if detection_only else "standard",
        }
        if outcome.directive.level in (DirectiveLevel.REWRITE, DirectiveLevel.ALLOW):
            details["tagged_content"] = outcome.tagged_content
        if outcome.quarantine_label is not None:
            details["quarantine_label"] = outcome.quarantine_label

        return LayerReport(
            layer_id=LAYER_INPUT,
            directive=outcome.directive,
            warnings=tuple(warnings),
            evidence=tuple(evidence),
            risk_markers=tuple(markers),
            details=details,
        )
