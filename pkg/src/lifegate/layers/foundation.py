"""Foundation scan: vet skills and configuration before the prompt is built.

Runs once per initialization event. Each skill manifest is scanned for
dangerous patterns, capability mismatches (body implies more than the
manifest declares) and obfuscation; the agent configuration is checked
against an unsafe-setting policy. The result is a capability baseline the
rest of the session is held to.
"""

from __future__ import annotations

import logging
import re
import unicodedata
from dataclasses import dataclass
from typing import Any, Mapping

from ..config import EngineConfig, flatten_document, parse_agent_config
from ..events import PromptBuildPayload, SecurityEvent
from ..model import (
    LAYER_FOUNDATION,
    BlockScope,
    Directive,
    DirectiveLevel,
    Evidence,
    LayerReport,
    RiskMarker,
    SchemaViolation,
    Stage,
    ThreatWarning,
    Trust,
    directive_max,
)
from ..rules import RuleSet
from ..session import CapabilityBaseline, SessionState, SkillApproval
from ..textnorm import normalize_text
from .base import LayerContext

log = logging.getLogger(__name__)

_ZERO_WIDTH = ("​", "‌", "‍", "⁠", "﻿")
_BASE64_RUN_TEMPLATE = r"[A-Za-z0-9+/=]{%d,}"
_WORD = re.compile(r"\w+", re.UNICODE)

STATUS_TRUSTED = "trusted"
STATUS_FLAGGED = "flagged"
STATUS_REJECTED = "rejected"


@dataclass(frozen=True)
class SkillManifest:
    name: str
    version: str
    body: str
    declared: frozenset[str]


def parse_manifest(raw: Mapping[str, Any], vocabulary: tuple[str, ...]) -> SkillManifest:
    allowed = {"name", "version", "body", "capabilities"}
    extra = raw.keys() - allowed
    if extra:
        raise SchemaViolation(f"skill manifest: unknown fields {sorted(extra)}")
    name = raw.get("name")
    if not isinstance(name, str) or not name:
        raise SchemaViolation("skill manifest: name must be a non-empty string")
    body = raw.get("body")
    if not isinstance(body, str):
        raise SchemaViolation(f"skill manifest {name}: body must be a string")
    caps_raw = raw.get("capabilities")
    if not isinstance(caps_raw, list) or not all(isinstance(c, str) for c in caps_raw):
        raise SchemaViolation(f"skill manifest {name}: capabilities must be a string list")
    unknown = set(caps_raw) - set(vocabulary)
    if unknown:
        raise SchemaViolation(f"skill manifest {name}: unknown capabilities {sorted(unknown)}")
    return SkillManifest(
        name=name,
        version=str(raw.get("version", "0")),
        body=body,
        declared=frozenset(caps_raw),
    )


def _scripts_of(word: str) -> set[str]:
    scripts = set()
    for ch in word:
        if not ch.isalpha():
            continue
        try:
            name = unicodedata.name(ch)
        except ValueError:
            continue
        scripts.add(name.split(" ", 1)[0])
    return scripts


def obfuscation_findings(body: str, *, base64_run: int) -> list[tuple[str, str]]:
    """(kind, excerpt) pairs found in the RAW body.

    Raw, not normalized: normalization strips the very characters two of
    these detectors look for.
    """
    findings: list[tuple[str, str]] = []
    for zw in _ZERO_WIDTH:
        idx = body.find(zw)
        if idx >= 0:
            window = normalize_text(body[max(0, idx - 16) : idx + 16])
            findings.append(("zero-width-characters", window))
            break
    run_rx = re.compile(_BASE64_RUN_TEMPLATE % base64_run)
    for m in run_rx.finditer(body):
        run = m.group(0)
        # letters-only runs are just long words; demand base64-ish content
        if any(c.isdigit() or c in "+/=" for c in run):
            findings.append(("encoded-blob", run[:48]))
            break
    for word in _WORD.findall(body):
        scripts = _scripts_of(word)
        if "LATIN" in scripts and scripts & {"CYRILLIC", "GREEK"}:
            findings.append(("mixed-script-token", normalize_text(word)))
            break
    return findings


def scan_skill(
    raw_manifest: Mapping[str, Any],
    *,
    rules: RuleSet,
    config: EngineConfig,
    seq: int = 0,
) -> tuple[LayerReport, SkillApproval]:
    """Scan one manifest. Pure: same manifest and rules give the same report."""
    name = str(raw_manifest.get("name", "<unnamed>"))
    origin = f"skill:{name}"
    try:
        manifest = parse_manifest(raw_manifest, config.capability_vocabulary)
    except SchemaViolation as exc:
        report = LayerReport(
            layer_id=LAYER_FOUNDATION,
            directive=Directive.restrict(frozenset(config.capability_vocabulary)),
            warnings=(ThreatWarning("unscannable-skill", str(exc)),),
            evidence=(Evidence("manifest-parse", str(exc)[:120], f"{origin}:manifest"),),
            risk_markers=(
                RiskMarker(
                    marker_id=f"foundation:unscannable:{name}",
                    stage=Stage.INITIALIZATION,
                    score=0.5,
                    description=f"skill {name}: manifest could not be parsed",
                    source_event_seq=seq,
                    origin_label=origin,
                ),
            ),
        )
        approval = SkillApproval(name, STATUS_REJECTED, frozenset(), frozenset())
        return report, approval

    body_norm = normalize_text(manifest.body)
    warnings: list[ThreatWarning] = []
    evidence: list[Evidence] = []
    markers: list[RiskMarker] = []
    directive = Directive.allow()

    for cr in rules.for_layer(LAYER_FOUNDATION):
        for m in cr.matches(body_norm):
            rule = cr.rule
            warnings.append(
                ThreatWarning("dangerous-skill-pattern", rule.description or rule.id)
            )
            evidence.append(Evidence(rule.id, m.excerpt, f"{origin}:body[{m.start}:{m.end}]"))
            markers.append(
                RiskMarker(
                    marker_id=f"foundation:rule:{rule.id}",
                    stage=Stage.INITIALIZATION,
                    score=rule.severity,
                    description=rule.description or f"rule {rule.id} matched in skill body",
                    source_event_seq=seq,
                    origin_label=origin,
                    excerpt=m.excerpt,
                )
            )
            if rule.action is DirectiveLevel.BLOCK:
                contribution = Directive.block(BlockScope.SESSION, config.block_expiry)
            elif rule.action is DirectiveLevel.RESTRICT:
                contribution = Directive.restrict(manifest.declared)
            else:
                contribution = Directive(rule.action)
            directive = directive_max(directive, contribution)

    hits = config.capability_map.infer(body_norm, normalized=True)
    evidenced: dict[str, str] = {}
    for hit in hits:
        prev = evidenced.get(hit.capability, "")
        if len(hit.excerpt) > len(prev):
            evidenced[hit.capability] = hit.excerpt
    mismatched = frozenset(evidenced) - manifest.declared
    for cap in sorted(mismatched):
        excerpt = evidenced[cap]
        warnings.append(
            ThreatWarning(
                "capability-mismatch",
                f"skill {name} body implies {cap!r} which the manifest does not declare",
            )
        )
        evidence.append(Evidence(f"capability:{cap}", excerpt, f"{origin}:body"))
        markers.append(
            RiskMarker(
                marker_id=f"foundation:capability-mismatch:{cap}",
                stage=Stage.INITIALIZATION,
                score=config.foundation.heuristic_score,
                description=f"skill {name}: undeclared capability {cap}",
                source_event_seq=seq,
                origin_label=origin,
                excerpt=excerpt,
            )
        )

    obfuscation = obfuscation_findings(manifest.body, base64_run=config.foundation.base64_run)
    for kind, excerpt in obfuscation:
        warnings.append(
            ThreatWarning("obfuscation", f"skill {name}: {kind.replace('-', ' ')} in body")
        )
        evidence.append(Evidence(f"obfuscation:{kind}", excerpt, f"{origin}:body"))
        markers.append(
            RiskMarker(
                marker_id=f"foundation:obfuscation:{kind}",
                stage=Stage.INITIALIZATION,
                score=config.foundation.heuristic_score,
                description=f"skill {name}: {kind}",
                source_event_seq=seq,
                origin_label=origin,
                excerpt=excerpt,
            )
        )

    if mismatched and obfuscation:
        directive = directive_max(directive, Directive.restrict(mismatched))
    elif mismatched or obfuscation:
        directive = directive_max(directive, Directive.warn())

    if directive.level is DirectiveLevel.BLOCK:
        status = STATUS_REJECTED
        approved: frozenset[str] = frozenset()
    elif directive.level is DirectiveLevel.ALLOW:
        status = STATUS_TRUSTED
        approved = manifest.declared
    else:
        status = STATUS_FLAGGED
        approved = manifest.declared - mismatched

    report = LayerReport(
        layer_id=LAYER_FOUNDATION,
        directive=directive,
        warnings=tuple(warnings),
        evidence=tuple(evidence),
        risk_markers=tuple(markers),
        details={"skill": name, "status": status},
    )
    return report, SkillApproval(name, status, manifest.declared, approved)


@dataclass(frozen=True)
class ConfigFinding:
    predicate_id: str
    key: str
    value_repr: str
    description: str


def validate_config(
    raw_doc: Any,
    *,
    config: EngineConfig,
    seq: int = 0,
) -> tuple[LayerReport, dict]:
    """Check an agent configuration document against the unsafe-setting policy.

    Returns the report and the permission constraints recorded into the
    baseline. 1-2 findings warn; 3 or more restrict.
    """
    try:
        doc = parse_agent_config(raw_doc)
    except SchemaViolation as exc:
        report = LayerReport(
            layer_id=LAYER_FOUNDATION,
            directive=Directive.restrict(frozenset(config.capability_vocabulary)),
            warnings=(ThreatWarning("config-parse-failure", str(exc)),),
            evidence=(Evidence("config-parse", str(exc)[:120], "config"),),
            risk_markers=(
                RiskMarker(
                    marker_id="foundation:config-parse-failure",
                    stage=Stage.INITIALIZATION,
                    score=0.5,
                    description="agent configuration could not be parsed",
                    source_event_seq=seq,
                    origin_label="config",
                ),
            ),
        )
        return report, {}

    findings: list[ConfigFinding] = []
    for key, value_repr in flatten_document(doc):
        for pred in config.config_policy:
            if pred.matches(key, value_repr):
                findings.append(ConfigFinding(pred.id, key, value_repr, pred.description))

    warnings = []
    evidence = []
    markers = []
    for f in findings:
        warnings.append(ThreatWarning("config-unsafe", f"{f.description} ({f.key})"))
        evidence.append(Evidence(f.predicate_id, f.value_repr[:80], f"config:{f.key}"))
        markers.append(
            RiskMarker(
                marker_id=f"foundation:config:{f.predicate_id}",
                stage=Stage.INITIALIZATION,
                score=config.foundation.heuristic_score,
                description=f.description,
                source_event_seq=seq,
                origin_label="config",
            )
        )
    if not findings:
        directive = Directive.allow()
    elif len(findings) >= 3:
        directive = Directive.restrict(frozenset(config.capability_vocabulary))
    else:
        directive = Directive.warn()

    permissions = doc.get("permissions", {})
    constraints = {
        "tool_allowlist": permissions.get("tools"),
        "path_allowlist": permissions.get("paths"),
        "network_policy": permissions.get("network"),
    }
    report = LayerReport(
        layer_id=LAYER_FOUNDATION,
        directive=directive,
        warnings=tuple(warnings),
        evidence=tuple(evidence),
        risk_markers=tuple(markers),
        details={"config_findings": len(findings)},
    )
    return report, constraints


def approve_baseline(
    approvals: list[SkillApproval], constraints: dict, seq: int
) -> CapabilityBaseline:
    return CapabilityBaseline(
        skills={a.name: a for a in approvals},
        config_constraints=constraints,
        event_seq=seq,
    )


class FoundationScanLayer:
    layer_id = LAYER_FOUNDATION

    def evaluate(
        self, event: SecurityEvent, state: SessionState, ctx: LayerContext
    ) -> LayerReport:
        payload = event.payload
        assert isinstance(payload, PromptBuildPayload)
        reports: list[LayerReport] = []
        approvals: list[SkillApproval] = []
        for raw_manifest in payload.skills:
            report, approval = scan_skill(
                raw_manifest, rules=ctx.rules, config=ctx.config, seq=event.seq
            )
            reports.append(report)
            approvals.append(approval)
        constraints: dict = {}
        if payload.config is not None:
            report, constraints = validate_config(
                payload.config, config=ctx.config, seq=event.seq
            )
            reports.append(report)

        state.baseline = approve_baseline(approvals, constraints, event.seq)
        for approval in approvals:
            if approval.status != STATUS_TRUSTED:
                state.downgrade_trust(f"skill:{approval.name}", _status_trust(approval.status))

        if not reports:
            return LayerReport(layer_id=LAYER_FOUNDATION, directive=Directive.allow())
        directive = reports[0].directive
        for r in reports[1:]:
            directive = directive_max(directive, r.directive)
        return LayerReport(
            layer_id=LAYER_FOUNDATION,
            directive=directive,
            warnings=tuple(w for r in reports for w in r.warnings),
            evidence=tuple(e for r in reports for e in r.evidence),
            risk_markers=tuple(m for r in reports for m in r.risk_markers),
            details={
                "skills": {a.name: a.status for a in approvals},
                "config_findings": next(
                    (r.details.get("config_findings", 0) for r in reports if "config_findings" in r.details),
                    0,
                ),
            },
        )


def _status_trust(status: str) -> Trust:
    return Trust.QUARANTINED if status == STATUS_REJECTED else Trust.SUSPECT
