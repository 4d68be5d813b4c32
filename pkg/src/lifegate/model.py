"""Core vocabulary shared by every protection layer.

Lifecycle stages, provenance, the directive lattice, risk markers, rules,
and the report types that layers hand back to the pipeline. Everything here
is a plain immutable value; behaviour lives in the layers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Mapping, Sequence


class EngineError(Exception):
    """Base class for engine-raised errors."""


class SchemaViolation(EngineError):
    """A record or document does not match its declared shape."""


class UnknownHook(EngineError):
    """Hook name outside the supported set."""


class SequenceRegression(EngineError):
    """Per-session sequence number went backwards or repeated."""


class InvalidScore(EngineError):
    """Risk score outside [0, 1]."""


class EmptyMerge(EngineError):
    """Directive merge invoked with nothing to merge."""


class Stage(str, Enum):
    """Lifecycle stages, in order of progression."""

    INITIALIZATION = "initialization"
    INPUT = "input"
    MEMORY = "memory"
    DECISION = "decision"
    EXECUTION = "execution"

    @property
    def order(self) -> int:
        return _STAGE_ORDER[self]


_STAGE_ORDER = {s: i for i, s in enumerate(Stage)}

LAYER_FOUNDATION = "foundation-scan"
LAYER_INPUT = "input-sanitization"
LAYER_COGNITION = "cognition-protection"
LAYER_DECISION = "decision-alignment"
LAYER_EXECUTION = "execution-control"

LAYER_IDS = (
    LAYER_FOUNDATION,
    LAYER_INPUT,
    LAYER_COGNITION,
    LAYER_DECISION,
    LAYER_EXECUTION,
)

#: Which lifecycle stage each layer guards.
LAYER_STAGE: Mapping[str, Stage] = {
    LAYER_FOUNDATION: Stage.INITIALIZATION,
    LAYER_INPUT: Stage.INPUT,
    LAYER_COGNITION: Stage.MEMORY,
    LAYER_DECISION: Stage.DECISION,
    LAYER_EXECUTION: Stage.EXECUTION,
}

STAGE_LAYER: Mapping[Stage, str] = {v: k for k, v in LAYER_STAGE.items()}


class Trust(IntEnum):
    """Provenance trust. Higher value = less trusted; downgrades are monotone."""

    TRUSTED = 0
    UNVERIFIED = 1
    SUSPECT = 2
    QUARANTINED = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "Trust":
        try:
            return cls[label.upper()]
        except KeyError:
            raise SchemaViolation(f"unknown trust level: {label!r}") from None


class SourceKind(str, Enum):
    USER = "user"
    TOOL = "tool"
    SKILL = "skill"
    SYSTEM = "system"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class Provenance:
    """Where a piece of content came from and how far it is trusted."""

    source: SourceKind
    origin_label: str
    trust: Trust

    def downgraded(self, trust: Trust) -> "Provenance":
        # Trust only ever moves toward less trusted.
        return Provenance(self.source, self.origin_label, max(self.trust, trust))

    def to_dict(self) -> dict:
        return {
            "source": self.source.value,
            "origin_label": self.origin_label,
            "trust": self.trust.label,
        }


class DirectiveLevel(IntEnum):
    """Severity-ordered intervention levels. The order is the lattice."""

    ALLOW = 0
    WARN = 1
    REWRITE = 2
    RESTRICT = 3
    QUARANTINE = 4
    BLOCK = 5

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "DirectiveLevel":
        try:
            return cls[label.upper()]
        except KeyError:
            raise SchemaViolation(f"unknown directive level: {label!r}") from None


class BlockScope(IntEnum):
    """How long a block stands. Wider scope wins on merge."""

    EVENT = 0
    SESSION = 1
    SESSION_PERMANENT = 2

    @property
    def label(self) -> str:
        return self.name.lower().replace("_", "-")


@dataclass(frozen=True)
class Directive:
    """A level plus the payload that level needs.

    rewritten: replacement content, rewrite only.
    restrictions: capability names to strip, restrict only.
    block_scope/block_expiry: block only; expiry counts events, None means
    the block stands until its scope ends.
    """

    level: DirectiveLevel
    rewritten: str | None = None
    restrictions: frozenset[str] = frozenset()
    block_scope: BlockScope | None = None
    block_expiry: int | None = None

    @staticmethod
    def allow() -> "Directive":
        return Directive(DirectiveLevel.ALLOW)

    @staticmethod
    def warn() -> "Directive":
        return Directive(DirectiveLevel.WARN)

    @staticmethod
    def rewrite(content: str) -> "Directive":
        return Directive(DirectiveLevel.REWRITE, rewritten=content)

    @staticmethod
    def restrict(capabilities: Sequence[str] | frozenset[str]) -> "Directive":
        return Directive(DirectiveLevel.RESTRICT, restrictions=frozenset(capabilities))

    @staticmethod
    def quarantine() -> "Directive":
        return Directive(DirectiveLevel.QUARANTINE)

    @staticmethod
    def block(scope: BlockScope = BlockScope.EVENT, expiry: int | None = None) -> "Directive":
        return Directive(DirectiveLevel.BLOCK, block_scope=scope, block_expiry=expiry)

    def to_dict(self) -> dict:
        out: dict = {"level": self.level.label}
        if self.rewritten is not None:
            out["rewritten"] = self.rewritten
        if self.restrictions:
            out["restrictions"] = sorted(self.restrictions)
        if self.block_scope is not None:
            out["block_scope"] = self.block_scope.label
        if self.block_expiry is not None:
            out["block_expiry"] = self.block_expiry
        return out


def directive_max(a: Directive, b: Directive) -> Directive:
    """Join two directives on the severity lattice.

    Higher level wins outright. On a level tie the payloads merge:
    restriction sets union, rewrite keeps the later argument, block keeps
    the wider scope and the longer expiry (None = lasts the whole scope,
    which beats any count).
    """
    if a.level > b.level:
        return a
    if b.level > a.level:
        return b
    level = a.level
    if level is DirectiveLevel.RESTRICT:
        return Directive(level, restrictions=a.restrictions | b.restrictions)
    if level is DirectiveLevel.REWRITE:
        return b
    if level is DirectiveLevel.BLOCK:
        scope = max(
            a.block_scope or BlockScope.EVENT,
            b.block_scope or BlockScope.EVENT,
        )
        if a.block_expiry is None or b.block_expiry is None:
            expiry = None
        else:
            expiry = max(a.block_expiry, b.block_expiry)
        return Directive(level, block_scope=scope, block_expiry=expiry)
    return a


def merge_all(directives: Sequence[Directive]) -> Directive:
    if not directives:
        raise EmptyMerge("no directives to merge")
    out = directives[0]
    for d in directives[1:]:
        out = directive_max(out, d)
    return out


@dataclass(frozen=True)
class RiskMarker:
    """One scored observation appended to the session ledger.

    origin_label/excerpt are optional correlation handles used when attack
    paths are reconstructed; excerpt is stored in normalized form.
    """

    marker_id: str
    stage: Stage
    score: float
    description: str
    source_event_seq: int
    origin_label: str | None = None
    excerpt: str | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise InvalidScore(f"marker score {self.score!r} outside [0, 1]")

    def to_dict(self) -> dict:
        out = {
            "marker_id": self.marker_id,
            "stage": self.stage.value,
            "score": round(self.score, 12),
            "description": self.description,
            "source_event_seq": self.source_event_seq,
        }
        if self.origin_label is not None:
            out["origin_label"] = self.origin_label
        if self.excerpt is not None:
            out["excerpt"] = self.excerpt
        return out


class RuleKind(str, Enum):
    LITERAL = "literal"
    REGEX = "regex"


@dataclass(frozen=True)
class Rule:
    """One detection rule. Patterns are matched against normalized text."""

    id: str
    layer: str
    kind: RuleKind
    pattern: str
    severity: float
    action: DirectiveLevel
    description: str = ""

    def __post_init__(self) -> None:
        if self.layer not in LAYER_IDS:
            raise SchemaViolation(f"rule {self.id}: unknown layer {self.layer!r}")
        if not (0.0 <= self.severity <= 1.0):
            raise SchemaViolation(f"rule {self.id}: severity {self.severity!r} outside [0, 1]")
        if not self.pattern:
            raise SchemaViolation(f"rule {self.id}: empty pattern")
        if self.kind is RuleKind.REGEX:
            try:
                re.compile(self.pattern)
            except re.error as exc:
                raise SchemaViolation(f"rule {self.id}: bad regex: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "layer": self.layer,
            "kind": self.kind.value,
            "pattern": self.pattern,
            "severity": round(self.severity, 12),
            "action": self.action.label,
            "description": self.description,
        }

    @staticmethod
    def from_dict(raw: Mapping) -> "Rule":
        required = {"id", "layer", "kind", "pattern", "severity", "action"}
        missing = required - raw.keys()
        if missing:
            raise SchemaViolation(f"rule missing fields: {sorted(missing)}")
        extra = raw.keys() - (required | {"description"})
        if extra:
            raise SchemaViolation(f"rule {raw.get('id')}: unknown fields {sorted(extra)}")
        return Rule(
            id=str(raw["id"]),
            layer=str(raw["layer"]),
            kind=RuleKind(raw["kind"]),
            pattern=str(raw["pattern"]),
            severity=float(raw["severity"]),
            action=DirectiveLevel.from_label(str(raw["action"])),
            description=str(raw.get("description", "")),
        )


@dataclass(frozen=True)
class ThreatWarning:
    """A typed warning attached to a layer report."""

    warning_type: str
    threat_description: str

    def to_dict(self) -> dict:
        return {
            "warning_type": self.warning_type,
            "threat_description": self.threat_description,
        }


@dataclass(frozen=True)
class Evidence:
    """What fired and where: a rule id or check name plus the matched span."""

    check: str
    excerpt: str
    location: str

    def to_dict(self) -> dict:
        return {"check": self.check, "excerpt": self.excerpt, "location": self.location}


@dataclass(frozen=True)
class LayerReport:
    """One layer's judgement of one event."""

    layer_id: str
    directive: Directive
    warnings: tuple[ThreatWarning, ...] = ()
    evidence: tuple[Evidence, ...] = ()
    risk_markers: tuple[RiskMarker, ...] = ()
    details: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.layer_id not in LAYER_IDS:
            raise SchemaViolation(f"unknown layer id {self.layer_id!r}")
        if self.directive.level is not DirectiveLevel.ALLOW:
            if not self.warnings and not self.evidence:
                raise SchemaViolation(
                    f"{self.layer_id}: directive {self.directive.level.label} "
                    "requires at least one warning or evidence entry"
                )

    def to_dict(self) -> dict:
        out: dict = {
            "layer_id": self.layer_id,
            "directive": self.directive.to_dict(),
            "warnings": [w.to_dict() for w in self.warnings],
            "evidence": [e.to_dict() for e in self.evidence],
            "risk_markers": [m.to_dict() for m in self.risk_markers],
        }
        if self.details:
            out["details"] = _plain(self.details)
        return out


@dataclass(frozen=True)
class Verdict:
    """The pipeline's merged outcome for one event."""

    session_id: str
    event_seq: int
    final: Directive
    reports: tuple[LayerReport, ...]
    session_risk: float

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "event_seq": self.event_seq,
            "final": self.final.to_dict(),
            "reports": [r.to_dict() for r in self.reports],
            "session_risk": round(self.session_risk, 12),
        }


def _plain(value: object) -> object:
    """Reduce nested mappings/sequences to plain JSON-ready structures."""
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, frozenset | set):
        return sorted(str(v) for v in value)
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, float):
        return round(value, 12)
    return value
