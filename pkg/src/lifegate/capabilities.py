"""Capability inference: map free text to the capability tags it implies.

One shared map serves skill scanning (declared vs evidenced capabilities),
intent coverage and execution permission checks, so the three layers can
never disagree about what a piece of text implies. Patterns run against
normalized text and are configured as regex lists per capability tag.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .model import SchemaViolation
from .textnorm import normalize_text

CAP_FILE_READ = "file-read"
CAP_FILE_WRITE = "file-write"
CAP_SHELL = "shell"
CAP_NETWORK = "network"
CAP_MEMORY_WRITE = "memory-write"

DEFAULT_VOCABULARY = (
    CAP_FILE_READ,
    CAP_FILE_WRITE,
    CAP_SHELL,
    CAP_NETWORK,
    CAP_MEMORY_WRITE,
)


@dataclass(frozen=True)
class CapabilityHit:
    capability: str
    excerpt: str
    start: int
    end: int


class CapabilityMap:
    """Compiled capability -> pattern-list mapping."""

    def __init__(self, table: Mapping[str, Iterable[str]]) -> None:
        self._patterns: dict[str, tuple[re.Pattern[str], ...]] = {}
        for cap, patterns in table.items():
            compiled = []
            for pat in patterns:
                try:
                    compiled.append(re.compile(pat))
                except re.error as exc:
                    raise SchemaViolation(
                        f"capability map {cap!r}: bad regex {pat!r}: {exc}"
                    ) from exc
            self._patterns[str(cap)] = tuple(compiled)

    @property
    def vocabulary(self) -> tuple[str, ...]:
        return tuple(self._patterns)

    def infer(self, text: str, *, normalized: bool = False) -> list[CapabilityHit]:
        """Every capability the text implies, with one hit per pattern match."""
        if not normalized:
            text = normalize_text(text)
        hits: list[CapabilityHit] = []
        for cap in sorted(self._patterns):
            for rx in self._patterns[cap]:
                for m in rx.finditer(text):
                    if m.end() == m.start():
                        continue
                    hits.append(CapabilityHit(cap, m.group(0), m.start(), m.end()))
        return hits

    def implied(self, text: str, *, normalized: bool = False) -> frozenset[str]:
        return frozenset(h.capability for h in self.infer(text, normalized=normalized))


def load_capability_map(path: str | Path) -> CapabilityMap:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaViolation(f"{path}: cannot load capability map: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaViolation(f"{path}: capability map must be an object")
    return CapabilityMap(raw)


def default_capability_map() -> CapabilityMap:
    raw = json.loads(
        resources.files("lifegate.packs").joinpath("capability_map.json").read_text("utf-8")
    )
    return CapabilityMap(raw)
