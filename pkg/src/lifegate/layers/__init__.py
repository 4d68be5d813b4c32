"""The five protection layers and their shared context."""

from .base import LayerContext, ProtectionLayer
from .decision_gate import DecisionAlignmentLayer
from .execution_gate import ExecutionControlLayer
from .foundation import FoundationScanLayer
from .input_gate import InputSanitizationLayer
from .memory_gate import CognitionProtectionLayer

__all__ = [
    "LayerContext",
    "ProtectionLayer",
    "FoundationScanLayer",
    "InputSanitizationLayer",
    "CognitionProtectionLayer",
    "DecisionAlignmentLayer",
    "ExecutionControlLayer",
]
