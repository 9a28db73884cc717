"""Flat ``key=value`` text files and content hashing for provenance."""

from __future__ import annotations

import hashlib
from pathlib import Path


def format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(format_value(x) for x in v)
    return str(v)


def dumps_kv(data: dict, comment: str | None = None) -> str:
    lines = [f"# {line}" for line in comment.splitlines()] if comment else []
    for key, value in data.items():
        if "=" in key or "\n" in key:
            raise ValueError(f"invalid key {key!r}")
        lines.append(f"{key}={format_value(value)}")
    return "\n".join(lines) + "\n"


def write_kv(path, data: dict, comment: str | None = None) -> Path:
    path = Path(path)
    path.write_text(dumps_kv(data, comment))
    return path


def parse_kv(text: str, source: str = "<string>") -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def read_kv(path) -> dict:
    path = Path(path)
    return parse_kv(path.read_text(), str(path))


def config_hash(data: dict) -> str:
    """Short SHA-256 over the canonical (sorted) rendering of ``data``."""
    canon = dumps_kv(dict(sorted((str(k), v) for k, v in data.items())))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
