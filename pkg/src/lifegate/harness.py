"""Deterministic trace replay.

A trace is a JSONL file of hook records, optionally preceded by one
metadata header line carrying the authorized intent and pre-declared
approvals. replay() drives every record through the engine in order and
assembles a ReplayReport whose canonical JSON form is the input to a
stable content hash: two runs over the same inputs produce byte-identical
reports. Timestamps never enter the report, so wall clocks cannot break
determinism.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .config import EngineConfig
from .events import (
    HookKind,
    HookRecord,
    parse_hook_record,
    parse_message_payload,
    parse_prompt_payload,
    parse_tool_payload,
)
from .model import (
    LAYER_STAGE,
    DirectiveLevel,
    EngineError,
    SchemaViolation,
    Stage,
    Verdict,
)
from .pipeline import Engine, ProtectionLayer
from .rules import RuleSet, default_rules
from .session import (
    IntentRecord,
    KnowledgeBase,
    SessionState,
    active_blocks,
    propagate_knowledge,
    session_risk,
)
from .textnorm import normalize_text

EXIT_CLEAN = 0
EXIT_INTERCEPTED = 1
EXIT_ERROR = 2


class ParseError(EngineError):
    """A trace line failed to parse; carries the file and line number."""

    def __init__(self, path: str | Path, line: int, reason: str) -> None:
        super().__init__(f"{path}:{line}: {reason}")
        self.path = str(path)
        self.line = line
        self.reason = reason


class InvariantError(EngineError):
    """A trace violated an ordering invariant; carries the offending line."""

    def __init__(self, path: str | Path, line: int, reason: str) -> None:
        super().__init__(f"{path}:{line}: {reason}")
        self.path = str(path)
        self.line = line
        self.reason = reason


# -- trace files --------------------------------------------------------------


@dataclass(frozen=True)
class SessionSeed:
    """Pre-declared session context from the trace header."""

    intent_description: str | None = None
    intent_capabilities: frozenset[str] | None = None  # None = infer
    approvals: frozenset[int] = frozenset()


@dataclass(frozen=True)
class TraceMeta:
    note: str | None = None
    default_seed: SessionSeed | None = None
    session_seeds: Mapping[str, SessionSeed] = field(default_factory=dict)

    def seed_for(self, session_id: str) -> SessionSeed | None:
        return self.session_seeds.get(session_id, self.default_seed)


@dataclass(frozen=True)
class TraceFile:
    path: str
    meta: TraceMeta
    records: tuple[HookRecord, ...]

    @property
    def session_order(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(r.session_id for r in self.records))


def _parse_seed(raw: Any, where: str) -> SessionSeed:
    if not isinstance(raw, dict):
        raise SchemaViolation(f"{where}: must be an object")
    extra = raw.keys() - {"intent", "approvals"}
    if extra:
        raise SchemaViolation(f"{where}: unknown fields {sorted(extra)}")
    description: str | None = None
    capabilities: frozenset[str] | None = None
    intent = raw.get("intent")
    if intent is not None:
        if isinstance(intent, str):
            description = intent
        elif isinstance(intent, dict):
            i_extra = intent.keys() - {"description", "capabilities"}
            if i_extra:
                raise SchemaViolation(f"{where}: unknown intent fields {sorted(i_extra)}")
            desc = intent.get("description")
            if not isinstance(desc, str) or not desc:
                raise SchemaViolation(f"{where}: intent description must be a non-empty string")
            description = desc
            caps = intent.get("capabilities")
            if caps is not None:
                if not isinstance(caps, list) or not all(isinstance(c, str) for c in caps):
                    raise SchemaViolation(f"{where}: intent capabilities must be a string list")
                capabilities = frozenset(caps)
        else:
            raise SchemaViolation(f"{where}: intent must be a string or object")
    approvals_raw = raw.get("approvals", [])
    if not isinstance(approvals_raw, list):
        raise SchemaViolation(f"{where}: approvals must be a list of seqs")
    approvals: set[int] = set()
    for item in approvals_raw:
        if not isinstance(item, int) or isinstance(item, bool) or item < 0:
            raise SchemaViolation(f"{where}: approvals must be non-negative integers")
        approvals.add(item)
    return SessionSeed(
        intent_description=description,
        intent_capabilities=capabilities,
        approvals=frozenset(approvals),
    )


def parse_trace_meta(raw: Mapping[str, Any]) -> TraceMeta:
    extra = raw.keys() - {"note", "intent", "approvals", "sessions"}
    if extra:
        raise SchemaViolation(f"trace header: unknown fields {sorted(extra)}")
    note = raw.get("note")
    if note is not None and not isinstance(note, str):
        raise SchemaViolation("trace header: note must be a string")
    default_seed: SessionSeed | None = None
    if "intent" in raw or "approvals" in raw:
        default_seed = _parse_seed(
            {k: raw[k] for k in ("intent", "approvals") if k in raw}, "trace header"
        )
    seeds: dict[str, SessionSeed] = {}
    sessions = raw.get("sessions", {})
    if not isinstance(sessions, dict):
        raise SchemaViolation("trace header: sessions must be an object")
    for sid, seed_raw in sessions.items():
        seeds[str(sid)] = _parse_seed(seed_raw, f"trace header session {sid!r}")
    return TraceMeta(note=note, default_seed=default_seed, session_seeds=seeds)


def _validate_payload(record: HookRecord) -> None:
    if record.hook is HookKind.PROMPT_BUILD:
        parse_prompt_payload(record)
    elif record.hook is HookKind.MESSAGE_WRITE:
        parse_message_payload(record)
    else:
        parse_tool_payload(record)


def load_trace(path: str | Path) -> TraceFile:
    """Parse and validate a JSONL trace; errors carry the offending line."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(p, 0, f"cannot read trace: {exc}") from exc
    meta = TraceMeta()
    records: list[HookRecord] = []
    last_seq: dict[str, int] = {}
    saw_any = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(p, lineno, f"column {exc.colno}: {exc.msg}") from exc
        if not isinstance(raw, dict):
            raise ParseError(p, lineno, "every trace line must be a JSON object")
        if not saw_any and "hook" not in raw:
            saw_any = True
            try:
                meta = parse_trace_meta(raw)
            except SchemaViolation as exc:
                raise ParseError(p, lineno, str(exc)) from exc
            continue
        saw_any = True
        try:
            record = parse_hook_record(raw)
            _validate_payload(record)
        except EngineError as exc:
            raise ParseError(p, lineno, str(exc)) from exc
        prev = last_seq.get(record.session_id)
        if prev is not None and record.seq <= prev:
            raise InvariantError(
                p, lineno, f"session {record.session_id}: seq {record.seq} after {prev}"
            )
        last_seq[record.session_id] = record.seq
        records.append(record)
    return TraceFile(path=str(p), meta=meta, records=tuple(records))


# -- replay --------------------------------------------------------------------


@dataclass(frozen=True)
class Interception:
    """One layer finding above allow, or a standing block carrying an event."""

    session_id: str
    event_seq: int
    stage: Stage
    layer_id: str
    trigger: str
    level: DirectiveLevel

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "event_seq": self.event_seq,
            "stage": self.stage.value,
            "layer_id": self.layer_id,
            "trigger": self.trigger,
            "directive": self.level.label,
        }


@dataclass(frozen=True)
class ReplayReport:
    trace_name: str
    event_count: int
    derived_rules_loaded: int
    verdicts: tuple[Verdict, ...]
    interceptions: tuple[Interception, ...]
    sessions: Mapping[str, dict]
    attack_paths: tuple[dict, ...]
    persisted: Mapping[str, str]

    def to_dict(self) -> dict:
        return {
            "trace": self.trace_name,
            "event_count": self.event_count,
            "derived_rules_loaded": self.derived_rules_loaded,
            "verdicts": [v.to_dict() for v in self.verdicts],
            "interceptions": [i.to_dict() for i in self.interceptions],
            "sessions": {k: self.sessions[k] for k in sorted(self.sessions)},
            "attack_paths": list(self.attack_paths),
            "persisted": {k: self.persisted[k] for k in sorted(self.persisted)},
        }

    def interceptions_at_least(self, level: DirectiveLevel) -> tuple[Interception, ...]:
        return tuple(i for i in self.interceptions if i.level >= level)

    def earliest_interception_stage(
        self, min_level: DirectiveLevel = DirectiveLevel.RESTRICT
    ) -> Stage | None:
        hits = self.interceptions_at_least(min_level)
        if not hits:
            return None
        return min((i.stage for i in hits), key=lambda s: s.order)


def canonical_json(report: ReplayReport) -> str:
    return json.dumps(
        report.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=True
    )


def report_hash(report: ReplayReport) -> str:
    return hashlib.sha256(canonical_json(report).encode("utf-8")).hexdigest()


def _intent_from_seed(seed: SessionSeed, config: EngineConfig) -> IntentRecord | None:
    if seed.intent_description is None:
        return None
    norm = normalize_text(seed.intent_description)
    caps = seed.intent_capabilities
    if caps is None:
        caps = config.capability_map.implied(norm, normalized=True)
    return IntentRecord(description=norm, capabilities=frozenset(caps), origin="metadata")


def _interceptions_of(verdict: Verdict, state: SessionState) -> list[Interception]:
    out: list[Interception] = []
    top = DirectiveLevel.ALLOW
    for report in verdict.reports:
        level = report.directive.level
        top = max(top, level)
        if level is DirectiveLevel.ALLOW:
            continue
        if report.evidence:
            trigger = report.evidence[0].check
        elif report.warnings:
            trigger = report.warnings[0].warning_type
        else:
            trigger = level.label
        out.append(
            Interception(
                session_id=verdict.session_id,
                event_seq=verdict.event_seq,
                stage=LAYER_STAGE[report.layer_id],
                layer_id=report.layer_id,
                trigger=trigger,
                level=level,
            )
        )
    if verdict.final.level > top:
        # only a standing block can lift the merge above every report
        for block in active_blocks(state, verdict.event_seq):
            out.append(
                Interception(
                    session_id=verdict.session_id,
                    event_seq=verdict.event_seq,
                    stage=LAYER_STAGE[block.layer_id],
                    layer_id=block.layer_id,
                    trigger=f"standing-block:{block.reason}",
                    level=DirectiveLevel.BLOCK,
                )
            )
    return out


def _session_summary(state: SessionState) -> dict:
    return {
        "final_risk": round(session_risk(state), 12),
        "events": 0 if state.last_seq is None else state.last_seq + 1,
        "intent_origin": state.intent.origin if state.intent else None,
        "ledger_size": len(state.ledger),
        "restrictions": [r.to_dict() for r in state.restrictions],
        "blocks": [b.to_dict() for b in state.blocks],
        "flagged_excerpts": len(state.flagged),
        "quarantined": [q.label for q in state.quarantined],
        "shadow_memory": sorted(state.shadow_memory),
        "rollbacks": [r.to_dict() for r in state.rollbacks],
    }


def replay(
    trace: TraceFile,
    *,
    rules: RuleSet | None = None,
    config: EngineConfig | None = None,
    kb: KnowledgeBase | None = None,
    layers: Mapping[str, ProtectionLayer] | None = None,
) -> ReplayReport:
    """Run every record through a fresh engine, in file order.

    A provided knowledge base contributes derived early-warning rules to
    the rule set before the first event, and collects any new attack-path
    records intercepted during this replay.
    """
    cfg = config or EngineConfig.defaults()
    ruleset = rules or default_rules()
    derived = propagate_knowledge(kb) if kb is not None else []
    if derived:
        ruleset = ruleset.merged_with(derived)
    engine = Engine(rules=ruleset, config=cfg, kb=kb, layers=layers)

    primed: set[str] = set()
    verdicts: list[Verdict] = []
    interceptions: list[Interception] = []
    for record in trace.records:
        if record.session_id not in primed:
            primed.add(record.session_id)
            seed = trace.meta.seed_for(record.session_id)
            if seed is not None:
                engine.prime_session(
                    record.session_id,
                    intent=_intent_from_seed(seed, cfg),
                    approvals=seed.approvals,
                )
        verdict = engine.process(record)
        verdicts.append(verdict)
        interceptions.extend(_interceptions_of(verdict, engine.sessions[record.session_id]))

    sessions = {
        sid: _session_summary(state) for sid, state in sorted(engine.sessions.items())
    }
    attack_paths = tuple(
        {
            "session_id": sid,
            "event_seq": seq,
            "record": rec.to_dict(),  # type: ignore[attr-defined]
            "newly_learned": new,
        }
        for sid, seq, rec, new in engine.attack_log
    )
    return ReplayReport(
        trace_name=Path(trace.path).name,
        event_count=len(trace.records),
        derived_rules_loaded=len(derived),
        verdicts=tuple(verdicts),
        interceptions=tuple(interceptions),
        sessions=sessions,
        attack_paths=attack_paths,
        persisted=dict(engine.ctx.persisted),
    )


def exit_code_for(report: ReplayReport) -> int:
    if report.interceptions_at_least(DirectiveLevel.RESTRICT):
        return EXIT_INTERCEPTED
    return EXIT_CLEAN


# -- rendering -------------------------------------------------------------------


def render_report(report: ReplayReport, format: str = "text") -> str:
    """json: canonical form, the hash input. text: human summary."""
    if format == "json":
        return canonical_json(report)
    if format != "text":
        raise SchemaViolation(f"unknown report format {format!r}")
    return _render_text(report)


def _render_text(report: ReplayReport) -> str:
    lines = [
        f"trace: {report.trace_name}",
        f"events: {report.event_count}   sessions: {len(report.sessions)}"
        f"   derived rules loaded: {report.derived_rules_loaded}",
    ]
    for sid in sorted(report.sessions):
        s = report.sessions[sid]
        lines.append(
            f"session {sid}: final risk {s['final_risk']:.6f}"
            f"   restrictions {len(s['restrictions'])}"
            f"   blocks {len(s['blocks'])}"
            f"   rollbacks {len(s['rollbacks'])}"
        )
    lines.append(f"interceptions: {len(report.interceptions)}")
    if report.interceptions:
        lines.append(
            f"  {'seq':>5}  {'stage':<15} {'layer':<21} {'directive':<10} trigger"
        )
        for i in report.interceptions:
            lines.append(
                f"  {i.event_seq:>5}  {i.stage.value:<15} {i.layer_id:<21}"
                f" {i.level.label:<10} {i.trigger}"
            )
    new_paths = sum(1 for p in report.attack_paths if p.get("newly_learned"))
    lines.append(f"attack paths: {len(report.attack_paths)} ({new_paths} new)")
    lines.append(f"persisted memory paths: {len(report.persisted)}")
    lines.append(f"report hash: {report_hash(report)}")
    return "\n".join(lines)
