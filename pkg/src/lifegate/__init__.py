"""lifegate: an embeddable lifecycle security engine for autonomous agents.

Hook records from an agent runtime are normalized into security events,
routed through five protection layers (one per lifecycle stage), and merged
into a single directive that is never weaker than any layer's judgement.
Sessions accumulate risk on an append-only ledger; intercepted attack
chains become records that teach earlier layers to catch the same payload
sooner next time.
"""

from .capabilities import (
    DEFAULT_VOCABULARY,
    CapabilityHit,
    CapabilityMap,
    default_capability_map,
    load_capability_map,
)
from .config import (
    ConfigPredicate,
    DecisionPolicy,
    EngineConfig,
    ExecutionConfig,
    FoundationConfig,
    InputConfig,
    MemoryConfig,
    default_config_policy,
    load_config_policy,
)
from .events import (
    HookKind,
    HookRecord,
    MessageWritePayload,
    PromptBuildPayload,
    SecurityEvent,
    ToolCallPayload,
    parse_hook_record,
)
from .harness import (
    EXIT_CLEAN,
    EXIT_ERROR,
    EXIT_INTERCEPTED,
    Interception,
    InvariantError,
    ParseError,
    ReplayReport,
    TraceFile,
    TraceMeta,
    canonical_json,
    exit_code_for,
    load_trace,
    render_report,
    replay,
    report_hash,
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
from .model import (
    LAYER_COGNITION,
    LAYER_DECISION,
    LAYER_EXECUTION,
    LAYER_FOUNDATION,
    LAYER_IDS,
    LAYER_INPUT,
    LAYER_STAGE,
    STAGE_LAYER,
    BlockScope,
    Directive,
    DirectiveLevel,
    EmptyMerge,
    EngineError,
    Evidence,
    InvalidScore,
    LayerReport,
    Provenance,
    RiskMarker,
    Rule,
    RuleKind,
    SchemaViolation,
    SequenceRegression,
    SourceKind,
    Stage,
    ThreatWarning,
    Trust,
    UnknownHook,
    Verdict,
    directive_max,
    merge_all,
)
from .pipeline import Engine, default_layers, merge_directives, normalize_hook, route, table_route
from .rules import RuleSet, default_rules, find_matches, load_rules_dir
from .session import (
    AttackPathRecord,
    CapabilityBaseline,
    IntentRecord,
    KnowledgeBase,
    SessionState,
    SkillApproval,
    StandingBlock,
    StandingRestriction,
    active_capabilities,
    propagate_knowledge,
    session_risk,
    trace_attack_path,
)
from .textnorm import normalize_text

__version__ = "0.1.0"

__all__ = [
    "AttackPathRecord",
    "BlockScope",
    "CapabilityBaseline",
    "CapabilityHit",
    "CapabilityMap",
    "CognitionProtectionLayer",
    "ConfigPredicate",
    "DecisionAlignmentLayer",
    "DecisionPolicy",
    "DEFAULT_VOCABULARY",
    "Directive",
    "DirectiveLevel",
    "EmptyMerge",
    "Engine",
    "EngineConfig",
    "EngineError",
    "Evidence",
    "ExecutionConfig",
    "ExecutionControlLayer",
    "EXIT_CLEAN",
    "EXIT_ERROR",
    "EXIT_INTERCEPTED",
    "FoundationConfig",
    "FoundationScanLayer",
    "HookKind",
    "HookRecord",
    "InputConfig",
    "InputSanitizationLayer",
    "Interception",
    "IntentRecord",
    "InvalidScore",
    "InvariantError",
    "KnowledgeBase",
    "LAYER_COGNITION",
    "LAYER_DECISION",
    "LAYER_EXECUTION",
    "LAYER_FOUNDATION",
    "LAYER_IDS",
    "LAYER_INPUT",
    "LAYER_STAGE",
    "LayerContext",
    "LayerReport",
    "MemoryConfig",
    "MessageWritePayload",
    "ParseError",
    "PromptBuildPayload",
    "ProtectionLayer",
    "Provenance",
    "ReplayReport",
    "RiskMarker",
    "Rule",
    "RuleKind",
    "RuleSet",
    "STAGE_LAYER",
    "SchemaViolation",
    "SecurityEvent",
    "SequenceRegression",
    "SessionState",
    "SkillApproval",
    "SourceKind",
    "Stage",
    "StandingBlock",
    "StandingRestriction",
    "ThreatWarning",
    "ToolCallPayload",
    "TraceFile",
    "TraceMeta",
    "Trust",
    "UnknownHook",
    "Verdict",
    "active_capabilities",
    "canonical_json",
    "default_capability_map",
    "default_config_policy",
    "default_layers",
    "default_rules",
    "directive_max",
    "exit_code_for",
    "find_matches",
    "load_capability_map",
    "load_config_policy",
    "load_rules_dir",
    "load_trace",
    "merge_all",
    "merge_directives",
    "normalize_hook",
    "normalize_text",
    "parse_hook_record",
    "propagate_knowledge",
    "render_report",
    "replay",
    "report_hash",
    "route",
    "session_risk",
    "table_route",
    "trace_attack_path",
]
