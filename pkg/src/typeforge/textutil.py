"""Helpers for digging structured payloads out of chatty model output."""

from __future__ import annotations

import json
import re

_FENCE_RE = re.compile(r"```[ \t]*([A-Za-z0-9_+-]*)[ \t]*\n(.*?)```", re.DOTALL)


def fenced_blocks(text: str) -> list[tuple[str, str]]:
    """All fenced blocks in order, as (language tag, body) pairs."""
    return [(m.group(1).lower(), m.group(2)) for m in _FENCE_RE.finditer(text)]


def extract_code_block(text: str) -> str | None:
    """Last fenced code block in the response.

    Agents often restate their inputs before answering, so the last block is
    the one that matters. Falls back to the last fence of any language.
    """
    blocks = fenced_blocks(text)
    if not blocks:
        return None
    python_blocks = [body for tag, body in blocks if tag in ("python", "py")]
    if python_blocks:
        return python_blocks[-1]
    return blocks[-1][1]


def extract_json_object(text: str) -> dict | None:
    """Parse a JSON object from a response: last fenced block, whole text,
    or the first balanced ``{...}`` region, in that order. None if nothing parses."""
    blocks = fenced_blocks(text)
    for tag, body in reversed(blocks):
        if tag in ("json", ""):
            try:
                value = json.loads(body)
            except json.JSONDecodeError:
                continue
            if isinstance(value, dict):
                return value
    stripped = text.strip()
    if stripped:
        try:
            value = json.loads(stripped)
            if isinstance(value, dict):
                return value
        except json.JSONDecodeError:
            pass
    region = _balanced_object(text)
    if region is not None:
        try:
            value = json.loads(region)
            if isinstance(value, dict):
                return value
        except json.JSONDecodeError:
            pass
    return None


def surrounding_prose(text: str) -> str:
    """The response text with fenced blocks removed, for use as a rationale."""
    return _FENCE_RE.sub(" ", text).strip()


def _balanced_object(text: str) -> str | None:
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escape = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escape:
                    escape = False
                elif ch == "\\":
                    escape = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return text[start : i + 1]
        start = text.find("{", start + 1)
    return None


def canonical_json(payload) -> str:
    """Stable serialization used for digests and persisted artifacts."""
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def slugify(name: str) -> str:
    """Filesystem-safe slug for qualified names and ids."""
    return re.sub(r"[^A-Za-z0-9_]+", "_", name)
