"""Engine configuration, agent-config parsing, and policy documents.

Everything is explicit: defaults live here as frozen dataclasses, a JSON
config file may override any subset, unknown keys are rejected so a typo
cannot silently weaken a control.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .capabilities import DEFAULT_VOCABULARY, CapabilityMap, default_capability_map
from .model import LAYER_IDS, SchemaViolation

DEFAULT_MEMORY_GLOBS = ("MEMORY.md", "AGENTS.md", "USER.md", "memory/**")

DEFAULT_SENSITIVE_GLOBS = (
    "**/.ssh/**",
    "**/id_rsa*",
    "**/.aws/**",
    "**/credentials*",
    "**/.env",
    "**/.env.*",
    "**/secrets*",
)


def load_json(path: str | Path, what: str) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaViolation(f"{path}: cannot load {what}: {exc}") from exc


@dataclass(frozen=True)
class FoundationConfig:
    base64_run: int = 40          # min run of base64 alphabet chars to flag
    heuristic_score: float = 0.4  # marker score for mismatch/obfuscation findings


@dataclass(frozen=True)
class InputConfig:
    quarantine_threshold: float = 0.60  # max severity below this rewrites
    block_threshold: float = 0.85       # at or above this blocks
    fragment_window: int = 8            # per-origin segments kept for joining


@dataclass(frozen=True)
class MemoryConfig:
    taint_min_chars: int = 12  # shortest flagged excerpt considered for taint
    size_ratio: float = 10.0   # growth beyond this ratio is a size anomaly


@dataclass(frozen=True)
class DecisionPolicy:
    sensitive_path_globs: tuple[str, ...] = DEFAULT_SENSITIVE_GLOBS
    destination_allowlist: tuple[str, ...] = ()
    tier_high: float = 0.5   # combined score below this is high concern
    tier_low: float = 0.8    # combined score at or above this is low concern
    judge_penalty: float = 0.3
    tool_names: tuple[str, ...] = ()
    violation_marker_score: float = 0.6
    coverage_marker_score: float = 0.4


@dataclass(frozen=True)
class ExecutionConfig:
    loop_count: int = 5        # identical signatures that make a loop
    loop_window: int = 30      # tool-call events the signature window spans
    risk_escalation: float = 0.7  # session risk that escalates warn outcomes


@dataclass(frozen=True)
class ConfigPredicate:
    """One unsafe-setting pattern for agent-config validation."""

    id: str
    key_pattern: str
    value_pattern: str
    description: str

    def __post_init__(self) -> None:
        for pat in (self.key_pattern, self.value_pattern):
            try:
                re.compile(pat)
            except re.error as exc:
                raise SchemaViolation(f"config predicate {self.id}: bad regex: {exc}") from exc

    def matches(self, key: str, value_repr: str) -> bool:
        return bool(re.search(self.key_pattern, key)) and bool(
            re.search(self.value_pattern, value_repr)
        )


@dataclass(frozen=True)
class EngineConfig:
    enabled_layers: frozenset[str] = frozenset(LAYER_IDS)
    detection_only_input: bool = False
    memory_globs: tuple[str, ...] = DEFAULT_MEMORY_GLOBS
    capability_vocabulary: tuple[str, ...] = DEFAULT_VOCABULARY
    block_expiry: int = 50  # standing-block lifetime, in events
    foundation: FoundationConfig = FoundationConfig()
    input: InputConfig = InputConfig()
    memory: MemoryConfig = MemoryConfig()
    decision: DecisionPolicy = DecisionPolicy()
    execution: ExecutionConfig = ExecutionConfig()
    config_policy: tuple[ConfigPredicate, ...] = ()
    capability_map: CapabilityMap = field(default_factory=default_capability_map)

    @staticmethod
    def defaults() -> "EngineConfig":
        return EngineConfig(config_policy=default_config_policy())

    @staticmethod
    def from_file(path: str | Path) -> "EngineConfig":
        raw = load_json(path, "engine config")
        if not isinstance(raw, dict):
            raise SchemaViolation(f"{path}: engine config must be an object")
        return EngineConfig.from_dict(raw)

    @staticmethod
    def from_dict(raw: Mapping[str, Any]) -> "EngineConfig":
        cfg = EngineConfig.defaults()
        known = {
            "enabled_layers",
            "detection_only_input",
            "memory_globs",
            "capability_vocabulary",
            "block_expiry",
            "foundation",
            "input",
            "memory",
            "decision",
            "execution",
            "config_policy",
            "capability_map",
        }
        extra = raw.keys() - known
        if extra:
            raise SchemaViolation(f"engine config: unknown keys {sorted(extra)}")
        if "enabled_layers" in raw:
            layers = frozenset(raw["enabled_layers"])
            bad = layers - set(LAYER_IDS)
            if bad:
                raise SchemaViolation(f"engine config: unknown layers {sorted(bad)}")
            cfg = replace(cfg, enabled_layers=layers)
        if "detection_only_input" in raw:
            cfg = replace(cfg, detection_only_input=bool(raw["detection_only_input"]))
        if "memory_globs" in raw:
            cfg = replace(cfg, memory_globs=tuple(str(g) for g in raw["memory_globs"]))
        if "capability_vocabulary" in raw:
            cfg = replace(
                cfg, capability_vocabulary=tuple(str(c) for c in raw["capability_vocabulary"])
            )
        if "block_expiry" in raw:
            cfg = replace(cfg, block_expiry=int(raw["block_expiry"]))
        if "foundation" in raw:
            cfg = replace(cfg, foundation=_section(FoundationConfig, raw["foundation"]))
        if "input" in raw:
            cfg = replace(cfg, input=_section(InputConfig, raw["input"]))
        if "memory" in raw:
            cfg = replace(cfg, memory=_section(MemoryConfig, raw["memory"]))
        if "decision" in raw:
            cfg = replace(cfg, decision=_decision_section(raw["decision"]))
        if "execution" in raw:
            cfg = replace(cfg, execution=_section(ExecutionConfig, raw["execution"]))
        if "config_policy" in raw:
            cfg = replace(cfg, config_policy=parse_config_policy(raw["config_policy"]))
        if "capability_map" in raw:
            if not isinstance(raw["capability_map"], dict):
                raise SchemaViolation("engine config: capability_map must be an object")
            cfg = replace(cfg, capability_map=CapabilityMap(raw["capability_map"]))
        return cfg


def _section(cls: type, raw: Any):
    if not isinstance(raw, dict):
        raise SchemaViolation(f"engine config: {cls.__name__} section must be an object")
    fields = {f for f in cls.__dataclass_fields__}  # type: ignore[attr-defined]
    extra = raw.keys() - fields
    if extra:
        raise SchemaViolation(f"engine config: unknown {cls.__name__} keys {sorted(extra)}")
    return cls(**raw)


def _decision_section(raw: Any) -> DecisionPolicy:
    if not isinstance(raw, dict):
        raise SchemaViolation("engine config: decision section must be an object")
    fields = set(DecisionPolicy.__dataclass_fields__)
    extra = raw.keys() - fields
    if extra:
        raise SchemaViolation(f"engine config: unknown decision keys {sorted(extra)}")
    kw = dict(raw)
    for key in ("sensitive_path_globs", "destination_allowlist", "tool_names"):
        if key in kw:
            kw[key] = tuple(str(v) for v in kw[key])
    return DecisionPolicy(**kw)


def parse_config_policy(raw: Any) -> tuple[ConfigPredicate, ...]:
    if isinstance(raw, dict):
        if set(raw.keys()) != {"predicates"}:
            raise SchemaViolation("config policy: expected a 'predicates' list")
        raw = raw["predicates"]
    if not isinstance(raw, list):
        raise SchemaViolation("config policy: expected a list of predicates")
    out = []
    for item in raw:
        required = {"id", "key_pattern", "value_pattern", "description"}
        if not isinstance(item, dict) or set(item.keys()) != required:
            raise SchemaViolation(f"config policy: predicate needs exactly {sorted(required)}")
        out.append(
            ConfigPredicate(
                id=str(item["id"]),
                key_pattern=str(item["key_pattern"]),
                value_pattern=str(item["value_pattern"]),
                description=str(item["description"]),
            )
        )
    return tuple(out)


def default_config_policy() -> tuple[ConfigPredicate, ...]:
    raw = json.loads(
        resources.files("lifegate.packs").joinpath("config_policy.json").read_text("utf-8")
    )
    return parse_config_policy(raw)


def load_config_policy(path: str | Path) -> tuple[ConfigPredicate, ...]:
    return parse_config_policy(load_json(path, "config policy"))


def flatten_document(doc: Mapping[str, Any], prefix: str = "") -> list[tuple[str, str]]:
    """Dotted key paths with JSON-rendered leaf values; lists are leaves."""
    out: list[tuple[str, str]] = []
    for key in doc:
        dotted = f"{prefix}.{key}" if prefix else str(key)
        value = doc[key]
        if isinstance(value, Mapping):
            out.extend(flatten_document(value, dotted))
        else:
            out.append((dotted, json.dumps(value, sort_keys=True)))
    return out


def parse_agent_config(raw: Any, where: str = "agent config") -> dict:
    """Validate the agent configuration document shape.

    The document is free-form apart from one requirement: a 'permissions'
    object must be present (possibly empty), because the baseline records
    its tool/path/network constraints from there.
    """
    if not isinstance(raw, dict):
        raise SchemaViolation(f"{where}: must be an object")
    if "permissions" not in raw or not isinstance(raw["permissions"], dict):
        raise SchemaViolation(f"{where}: missing 'permissions' object")
    return raw
