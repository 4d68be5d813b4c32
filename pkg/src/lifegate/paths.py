"""Path normalization and glob matching with `**` support.

stdlib fnmatch has no cross-directory `**`, so the translation is done
here. Matching is purely lexical; nothing touches the filesystem.
"""

from __future__ import annotations

import re

_GLOB_CACHE: dict[str, re.Pattern[str]] = {}


def normalize_path(path: str) -> str:
    """Lexical cleanup: unify separators, drop '.' segments, fold '..'."""
    path = path.strip().replace("\\", "/")
    rooted = path.startswith("/")
    parts: list[str] = []
    for seg in path.split("/"):
        if seg in ("", "."):
            continue
        if seg == ".." and parts and parts[-1] not in ("..", "~"):
            parts.pop()
            continue
        parts.append(seg)
    out = "/".join(parts)
    return "/" + out if rooted else out


def glob_to_regex(pattern: str) -> re.Pattern[str]:
    cached = _GLOB_CACHE.get(pattern)
    if cached is not None:
        return cached
    out: list[str] = ["^"]
    i = 0
    n = len(pattern)
    while i < n:
        ch = pattern[i]
        if ch == "*":
            if pattern[i : i + 2] == "**":
                if pattern[i : i + 3] == "**/":
                    out.append(r"(?:.*/)?")
                    i += 3
                else:
                    out.append(r".*")
                    i += 2
            else:
                out.append(r"[^/]*")
                i += 1
        elif ch == "?":
            out.append(r"[^/]")
            i += 1
        else:
            out.append(re.escape(ch))
            i += 1
    out.append("$")
    compiled = re.compile("".join(out))
    _GLOB_CACHE[pattern] = compiled
    return compiled


def glob_match(pattern: str, path: str) -> bool:
    """Match a normalized path against one glob.

    A pattern without '/' also matches on the final path segment, so a
    plain filename pattern covers the file at any depth.
    """
    path = normalize_path(path)
    rx = glob_to_regex(pattern)
    if rx.match(path):
        return True
    if "/" not in pattern and "/" in path:
        return bool(rx.match(path.rsplit("/", 1)[1]))
    return False


def matches_any(patterns: list[str] | tuple[str, ...], path: str) -> bool:
    return any(glob_match(p, path) for p in patterns)
