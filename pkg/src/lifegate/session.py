"""Cross-layer coordination state.

One SessionState per agent session: the risk ledger, standing restrictions
and blocks, capability baseline, provenance trust, fragment and signature
windows, shadow memory, and quarantine records. Layers read and append;
nothing here is ever weakened once recorded.

The attack-path knowledge base also lives here: interceptions become
records, records become derived detection rules at the entry layer, so the
next occurrence of the same payload is caught earlier.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .model import (
    LAYER_IDS,
    STAGE_LAYER,
    BlockScope,
    DirectiveLevel,
    RiskMarker,
    Rule,
    RuleKind,
    SchemaViolation,
    Stage,
    Trust,
)

log = logging.getLogger(__name__)

#: Shortest excerpt considered specific enough to correlate or to learn from.
MIN_EXCERPT_CHARS = 12

DERIVED_RULE_SEVERITY = 0.6


@dataclass(frozen=True)
class StandingRestriction:
    capabilities: frozenset[str]
    layer_id: str
    event_seq: int
    reason: str

    def to_dict(self) -> dict:
        return {
            "capabilities": sorted(self.capabilities),
            "layer_id": self.layer_id,
            "event_seq": self.event_seq,
            "reason": self.reason,
        }


@dataclass(frozen=True)
class StandingBlock:
    scope: BlockScope
    issued_seq: int
    expiry: int | None  # events the block lasts; None = rest of scope
    layer_id: str
    reason: str

    def active_at(self, seq: int) -> bool:
        if self.expiry is None:
            return True
        return seq <= self.issued_seq + self.expiry

    def to_dict(self) -> dict:
        return {
            "scope": self.scope.label,
            "issued_seq": self.issued_seq,
            "expiry": self.expiry,
            "layer_id": self.layer_id,
            "reason": self.reason,
        }


@dataclass(frozen=True)
class SkillApproval:
    name: str
    status: str  # trusted | flagged | rejected
    declared: frozenset[str]
    approved: frozenset[str]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "status": self.status,
            "declared": sorted(self.declared),
            "approved": sorted(self.approved),
        }


@dataclass(frozen=True)
class CapabilityBaseline:
    skills: dict[str, SkillApproval]
    config_constraints: dict
    event_seq: int

    def to_dict(self) -> dict:
        return {
            "skills": {k: v.to_dict() for k, v in sorted(self.skills.items())},
            "config_constraints": self.config_constraints,
            "event_seq": self.event_seq,
        }


@dataclass(frozen=True)
class IntentRecord:
    description: str
    capabilities: frozenset[str]
    origin: str  # metadata | first-user-message

    def to_dict(self) -> dict:
        return {
            "description": self.description,
            "capabilities": sorted(self.capabilities),
            "origin": self.origin,
        }


@dataclass(frozen=True)
class FlaggedExcerpt:
    """Normalized content marked suspect/quarantined, used for taint checks."""

    excerpt: str
    origin_label: str
    trust: Trust
    event_seq: int

    def to_dict(self) -> dict:
        return {
            "excerpt": self.excerpt,
            "origin_label": self.origin_label,
            "trust": self.trust.label,
            "event_seq": self.event_seq,
        }


@dataclass(frozen=True)
class QuarantineRecord:
    label: str
    origin_label: str
    content: str
    event_seq: int

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "origin_label": self.origin_label,
            "content": self.content,
            "event_seq": self.event_seq,
        }


@dataclass(frozen=True)
class RollbackRecord:
    path: str
    payload: str | None  # prior content; None = file did not exist
    event_seq: int

    def to_dict(self) -> dict:
        return {"path": self.path, "payload": self.payload, "event_seq": self.event_seq}


@dataclass
class SessionState:
    """Mutable per-session record shared by all layers."""

    session_id: str
    last_seq: int | None = None
    ledger: list[RiskMarker] = field(default_factory=list)
    restrictions: list[StandingRestriction] = field(default_factory=list)
    blocks: list[StandingBlock] = field(default_factory=list)
    baseline: CapabilityBaseline | None = None
    intent: IntentRecord | None = None
    origin_trust: dict[str, Trust] = field(default_factory=dict)
    fragment_windows: dict[str, list[tuple[int, str]]] = field(default_factory=dict)
    signature_history: list[tuple[int, str]] = field(default_factory=list)
    flagged: list[FlaggedExcerpt] = field(default_factory=list)
    quarantined: list[QuarantineRecord] = field(default_factory=list)
    shadow_memory: dict[str, str] = field(default_factory=dict)
    rollbacks: list[RollbackRecord] = field(default_factory=list)
    approvals_granted: frozenset[int] = frozenset()

    # -- trust ------------------------------------------------------------

    def effective_trust(self, origin_label: str, declared: Trust) -> Trust:
        recorded = self.origin_trust.get(origin_label, Trust.TRUSTED)
        return max(declared, recorded)

    def downgrade_trust(self, origin_label: str, trust: Trust) -> None:
        current = self.origin_trust.get(origin_label, Trust.TRUSTED)
        self.origin_trust[origin_label] = max(current, trust)

    # -- constraints -------------------------------------------------------

    def add_restriction(self, restriction: StandingRestriction) -> None:
        self.restrictions.append(restriction)

    def register_block(self, block: StandingBlock) -> None:
        self.blocks.append(block)

    def restricted_capabilities(self) -> frozenset[str]:
        out: frozenset[str] = frozenset()
        for r in self.restrictions:
            out |= r.capabilities
        return out


def record_marker(state: SessionState, marker: RiskMarker) -> None:
    """Append to the ledger. Scores are validated by the marker itself;
    duplicates are kept, the ledger is history, not a set."""
    state.ledger.append(marker)


def session_risk(state: SessionState) -> float:
    """Noisy-OR accumulation: 1 - prod(1 - s_i). Empty ledger is 0."""
    if not state.ledger:
        return 0.0
    return 1.0 - math.prod(1.0 - m.score for m in state.ledger)


def active_blocks(state: SessionState, seq: int) -> tuple[StandingBlock, ...]:
    return tuple(b for b in state.blocks if b.active_at(seq))


def active_capabilities(state: SessionState, vocabulary: Sequence[str]) -> frozenset[str]:
    """Baseline-approved capabilities minus every standing restriction.

    Skills only narrow what skills introduced: with no scanned skills (or
    no initialization stage at all) the base set is the full vocabulary.
    """
    if state.baseline is not None and state.baseline.skills:
        base: frozenset[str] = frozenset()
        for approval in state.baseline.skills.values():
            base |= approval.approved
    else:
        base = frozenset(vocabulary)
    return base - state.restricted_capabilities()


# -- attack paths -----------------------------------------------------------


@dataclass(frozen=True)
class AttackPathRecord:
    """One intercepted attack chain, reduced to its stage trajectory."""

    entry_stage: Stage
    propagation: tuple[Stage, ...]
    interception_stage: Stage
    trigger: str  # rule id or check name that intercepted
    excerpt: str | None  # normalized, >= MIN_EXCERPT_CHARS when present

    def __post_init__(self) -> None:
        if not self.propagation:
            raise SchemaViolation("attack path: empty propagation")
        if self.propagation[-1] is not self.interception_stage:
            raise SchemaViolation("attack path: interception must end the propagation")
        if self.propagation[0] is not self.entry_stage:
            raise SchemaViolation("attack path: entry must start the propagation")
        if self.excerpt is not None and len(self.excerpt) < MIN_EXCERPT_CHARS:
            raise SchemaViolation("attack path: excerpt shorter than the minimum")

    def to_dict(self) -> dict:
        return {
            "entry_stage": self.entry_stage.value,
            "propagation": [s.value for s in self.propagation],
            "interception_stage": self.interception_stage.value,
            "trigger": self.trigger,
            "excerpt": self.excerpt,
        }

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    @staticmethod
    def from_dict(raw: dict) -> "AttackPathRecord":
        required = {"entry_stage", "propagation", "interception_stage", "trigger", "excerpt"}
        if not isinstance(raw, dict) or not required <= raw.keys():
            raise SchemaViolation(f"attack path record needs {sorted(required)}")
        return AttackPathRecord(
            entry_stage=Stage(raw["entry_stage"]),
            propagation=tuple(Stage(s) for s in raw["propagation"]),
            interception_stage=Stage(raw["interception_stage"]),
            trigger=str(raw["trigger"]),
            excerpt=None if raw["excerpt"] is None else str(raw["excerpt"]),
        )


def _markers_correlate(a: RiskMarker, b: RiskMarker) -> bool:
    if a.source_event_seq == b.source_event_seq:
        return True
    if a.origin_label is not None and a.origin_label == b.origin_label:
        return True
    ea, eb = a.excerpt, b.excerpt
    if ea and eb and min(len(ea), len(eb)) >= MIN_EXCERPT_CHARS:
        if ea in eb or eb in ea:
            return True
    return False


def trace_attack_path(
    state: SessionState,
    *,
    interception_marker: RiskMarker,
    trigger: str,
) -> AttackPathRecord:
    """Reconstruct the stage trajectory that led to an interception.

    Walks the ledger backwards collecting markers that share provenance
    (same origin, overlapping excerpts, or same source event) with the
    chain so far. Markers at stages after the interception stage are not
    part of the path that led here and are skipped.
    """
    cap = interception_marker.stage.order
    chain = [interception_marker]
    for marker in reversed(state.ledger):
        if marker is interception_marker:
            continue
        if marker.stage.order > cap:
            continue
        if any(_markers_correlate(marker, m) for m in chain):
            chain.append(marker)
    stages = sorted({m.stage for m in chain}, key=lambda s: s.order)
    excerpt = interception_marker.excerpt
    if excerpt is not None and len(excerpt) < MIN_EXCERPT_CHARS:
        excerpt = None
    if excerpt is None:
        # fall back to the longest qualifying excerpt on the chain
        candidates = [m.excerpt for m in chain if m.excerpt and len(m.excerpt) >= MIN_EXCERPT_CHARS]
        excerpt = max(candidates, key=len) if candidates else None
    return AttackPathRecord(
        entry_stage=stages[0],
        propagation=tuple(stages),
        interception_stage=interception_marker.stage,
        trigger=trigger,
        excerpt=excerpt,
    )


class KnowledgeBase:
    """Attack-path records, deduplicated by content hash.

    Persistence is JSONL, one record per line; writes are batched (save()
    rewrites the whole file) so a replay only touches disk at session end.
    """

    def __init__(self, records: Iterable[AttackPathRecord] = ()) -> None:
        self._records: list[AttackPathRecord] = []
        self._hashes: set[str] = set()
        for r in records:
            self.add(r)

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> tuple[AttackPathRecord, ...]:
        return tuple(self._records)

    def add(self, record: AttackPathRecord) -> bool:
        """True if the record was new."""
        h = record.content_hash()
        if h in self._hashes:
            return False
        self._hashes.add(h)
        self._records.append(record)
        return True

    @staticmethod
    def load(path: str | Path) -> "KnowledgeBase":
        kb = KnowledgeBase()
        p = Path(path)
        if not p.exists():
            return kb
        for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"{p}:{lineno}: bad knowledge-base line: {exc}") from exc
            kb.add(AttackPathRecord.from_dict(raw))
        return kb

    def save(self, path: str | Path) -> None:
        lines = [
            json.dumps(r.to_dict(), sort_keys=True, separators=(",", ":"))
            for r in self._records
        ]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def propagate_knowledge(kb: KnowledgeBase) -> list[Rule]:
    """Derive detection rules at each record's entry layer.

    Only records whose interception happened at a later stage than entry
    teach us anything (the entry layer missed what a later layer caught).
    Derived rules warn, never block: severity is fixed in the quarantine
    band, below the block threshold, so a recurring payload is held for
    review but a bad generalization cannot brick a session on its own.
    """
    out: list[Rule] = []
    seen: set[str] = set()
    for record in kb.records:
        if record.excerpt is None:
            continue
        if record.interception_stage.order <= record.entry_stage.order:
            continue
        h = record.content_hash()[:12]
        rule_id = f"kb-{h}"
        if rule_id in seen:
            continue
        seen.add(rule_id)
        layer = STAGE_LAYER[record.entry_stage]
        if layer not in LAYER_IDS:  # defensive; STAGE_LAYER is total
            continue
        out.append(
            Rule(
                id=rule_id,
                layer=layer,
                kind=RuleKind.LITERAL,
                pattern=record.excerpt,
                severity=DERIVED_RULE_SEVERITY,
                action=DirectiveLevel.WARN,
                description=(
                    f"learned: payload intercepted by {record.trigger} "
                    f"at {record.interception_stage.value}"
                ),
            )
        )
    return out
