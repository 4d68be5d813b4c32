"""Shared plumbing for protection layers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

from ..config import EngineConfig
from ..events import SecurityEvent
from ..model import LayerReport
from ..rules import RuleSet
from ..session import KnowledgeBase, SessionState


@dataclass
class LayerContext:
    """What a layer may consult besides the event and session state."""

    config: EngineConfig
    rules: RuleSet
    kb: KnowledgeBase = field(default_factory=KnowledgeBase)
    persisted: dict[str, str] = field(default_factory=dict)


@runtime_checkable
class ProtectionLayer(Protocol):
    layer_id: str

    def evaluate(
        self, event: SecurityEvent, state: SessionState, ctx: LayerContext
    ) -> LayerReport: ...
