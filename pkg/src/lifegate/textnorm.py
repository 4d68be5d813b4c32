"""Canonical text normalization used by every matcher.

All rule matching, capability inference, taint containment and excerpt
bookkeeping happen in this normalized space so that the same content can
never evade one layer and trip another.
"""

from __future__ import annotations

import re
import unicodedata

_WS = re.compile(r"\s+")

# Zero-width and format characters stripped outright. Cf covers ZWSP/ZWJ/
# ZWNJ/BOM/word-joiner and friends; a few BMP oddballs are kept explicit in
# case a narrow build classifies them differently.
_EXPLICIT_STRIP = frozenset("​‌‍⁠﻿­")

_MAX_PASSES = 8


def _strip_invisible(text: str) -> str:
    out = []
    for ch in text:
        if ch in _EXPLICIT_STRIP:
            continue
        cat = unicodedata.category(ch)
        if cat == "Cf":
            continue
        if cat == "Cc" and ch not in ("\n", "\t", " "):
            continue
        out.append(ch)
    return "".join(out)


def _one_pass(text: str) -> str:
    text = unicodedata.normalize("NFKC", text)
    text = text.casefold()
    text = _strip_invisible(text)
    text = _WS.sub(" ", text)
    return text.strip()


def normalize_text(text: str) -> str:
    """NFKC, casefold, strip invisibles, collapse whitespace; idempotent.

    Iterated to a fixpoint: removing a zero-width joiner can expose a new
    composition opportunity for the next NFKC pass, so a single pass is not
    enough to guarantee normalize(normalize(x)) == normalize(x).
    """
    current = text
    for _ in range(_MAX_PASSES):
        nxt = _one_pass(current)
        if nxt == current:
            return current
        current = nxt
    return current
