"""Deterministic report emission: identical config + seed gives identical bytes.

JSON is dumped with sorted keys and repr-roundtrip floats (Python's
default), text files always end with a newline and use LF endings.  No
timestamps or environment-dependent data enter a report.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

TOOL_VERSION = "0.1.0"


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


def config_hash(config: dict) -> str:
    compact = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(compact.encode("utf-8")).hexdigest()


def write_json(path, data) -> None:
    Path(path).write_text(canonical_json(data), encoding="utf-8", newline="\n")


def write_text(path, text: str) -> None:
    if not text.endswith("\n"):
        text += "\n"
    Path(path).write_text(text, encoding="utf-8", newline="\n")
