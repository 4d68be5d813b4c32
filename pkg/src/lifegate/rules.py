"""Rule loading, compilation and matching.

Rules are declarative: a literal phrase or a regex, a severity in [0, 1]
and a suggested action level. Matching always runs against normalized text
(see textnorm). Literal rules additionally compile a whitespace-elastic
regex so fragmented payloads are caught even when a split lands mid-word.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .model import Rule, RuleKind, SchemaViolation
from .textnorm import normalize_text

log = logging.getLogger(__name__)

_PACK_FILES = (
    "foundation.json",
    "input.json",
    "memory.json",
    "decision.json",
    "execution.json",
)


@dataclass(frozen=True)
class RuleMatch:
    """One place a rule fired, with the span in the searched text."""

    rule: Rule
    start: int
    end: int
    excerpt: str


class CompiledRule:
    """A rule plus its matchers, built once at load time."""

    __slots__ = ("rule", "_literal", "_regex", "_elastic")

    def __init__(self, rule: Rule) -> None:
        self.rule = rule
        if rule.kind is RuleKind.LITERAL:
            self._literal = normalize_text(rule.pattern)
            if not self._literal:
                raise SchemaViolation(f"rule {rule.id}: pattern normalizes to empty")
            self._regex = None
            self._elastic = _elastic_regex(self._literal)
        else:
            self._literal = None
            self._regex = re.compile(rule.pattern)
            self._elastic = None

    def matches(self, text: str) -> list[RuleMatch]:
        """All non-overlapping matches in `text` (already normalized)."""
        found: list[RuleMatch] = []
        if self._literal is not None:
            start = 0
            while True:
                idx = text.find(self._literal, start)
                if idx < 0:
                    break
                end = idx + len(self._literal)
                found.append(RuleMatch(self.rule, idx, end, text[idx:end]))
                start = end
        else:
            assert self._regex is not None
            for m in self._regex.finditer(text):
                if m.end() == m.start():
                    continue
                found.append(RuleMatch(self.rule, m.start(), m.end(), m.group(0)))
        return found

    def matches_elastic(self, text: str) -> list[RuleMatch]:
        """Literal match tolerant of arbitrary whitespace between characters.

        Used only for cross-segment windows, where a fragment boundary may
        have introduced whitespace anywhere, including inside a word.
        Regex rules fall back to their ordinary matcher.
        """
        if self._elastic is None:
            return self.matches(text)
        found = []
        for m in self._elastic.finditer(text):
            if m.end() == m.start():
                continue
            found.append(RuleMatch(self.rule, m.start(), m.end(), m.group(0)))
        return found


def _elastic_regex(normalized_pattern: str) -> re.Pattern[str]:
    parts = [re.escape(ch) for ch in normalized_pattern if not ch.isspace()]
    return re.compile(r"\s*".join(parts))


def find_matches(text: str, rules: Sequence[CompiledRule]) -> list[RuleMatch]:
    out: list[RuleMatch] = []
    for cr in rules:
        out.extend(cr.matches(text))
    out.sort(key=lambda m: (m.start, m.end, m.rule.id))
    return out


class RuleSet:
    """An id-unique collection of compiled rules, grouped by layer."""

    def __init__(self, rules: Iterable[Rule]) -> None:
        self._compiled: dict[str, CompiledRule] = {}
        for rule in rules:
            if rule.id in self._compiled:
                raise SchemaViolation(f"duplicate rule id: {rule.id}")
            self._compiled[rule.id] = CompiledRule(rule)
        self._by_layer: dict[str, tuple[CompiledRule, ...]] = {}
        for cr in self._compiled.values():
            self._by_layer.setdefault(cr.rule.layer, ())
        for layer in self._by_layer:
            self._by_layer[layer] = tuple(
                cr for cr in self._compiled.values() if cr.rule.layer == layer
            )

    def __len__(self) -> int:
        return len(self._compiled)

    @property
    def rules(self) -> tuple[Rule, ...]:
        return tuple(cr.rule for cr in self._compiled.values())

    def get(self, rule_id: str) -> Rule | None:
        cr = self._compiled.get(rule_id)
        return cr.rule if cr else None

    def for_layer(self, layer: str) -> tuple[CompiledRule, ...]:
        return self._by_layer.get(layer, ())

    def merged_with(self, extra: Iterable[Rule]) -> "RuleSet":
        """New set with `extra` added; an extra rule replaces any same-id rule."""
        by_id = {r.id: r for r in self.rules}
        for rule in extra:
            by_id[rule.id] = rule
        return RuleSet(by_id.values())


def _parse_rule_file(path: Path) -> list[Rule]:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaViolation(f"{path}: cannot load rule file: {exc}") from exc
    return _parse_rule_doc(raw, str(path))


def _parse_rule_doc(raw: object, where: str) -> list[Rule]:
    if isinstance(raw, dict):
        if set(raw.keys()) != {"rules"}:
            raise SchemaViolation(f"{where}: expected a 'rules' list")
        raw = raw["rules"]
    if not isinstance(raw, list):
        raise SchemaViolation(f"{where}: expected a list of rules")
    return [Rule.from_dict(item) for item in raw]


def load_rules_dir(path: str | Path) -> RuleSet:
    """Load every *.json rule file under a directory (sorted, non-recursive)."""
    base = Path(path)
    if not base.is_dir():
        raise SchemaViolation(f"rule directory not found: {base}")
    rules: list[Rule] = []
    for file in sorted(base.glob("*.json")):
        rules.extend(_parse_rule_file(file))
    log.debug("loaded %d rules from %s", len(rules), base)
    return RuleSet(rules)


def default_rules() -> RuleSet:
    """The built-in packs shipped with the package."""
    rules: list[Rule] = []
    pack_root = resources.files("lifegate.packs")
    for name in _PACK_FILES:
        raw = json.loads(pack_root.joinpath(name).read_text(encoding="utf-8"))
        rules.extend(_parse_rule_doc(raw, f"packs/{name}"))
    return RuleSet(rules)
