"""Config parsing, canonical digests, and run manifests.

Configs are INI files (key = value under [sections]). Every
artifact-producing command hashes its effective configuration into a
canonical digest and writes exactly one manifest next to its outputs,
so a result file can always be traced back to the knobs and seeds that
produced it.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from datetime import datetime, timezone
from pathlib import Path

from .errors import ParameterError, ParseError

TOOL_VERSION = "0.1.0"

__all__ = [
    "TOOL_VERSION",
    "read_config",
    "get_str",
    "get_int",
    "get_float",
    "get_bool",
    "get_int_list",
    "get_float_list",
    "canonical_json",
    "config_digest",
    "manifest_path_for",
    "write_manifest",
    "worker_count",
]


def read_config(path) -> dict[str, dict[str, str]]:
    """Parse an INI config into nested plain dicts."""
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as handle:
            parser.read_file(handle)
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return {name: dict(parser[name]) for name in parser.sections()}


def _raw(section: dict[str, str], key: str, default, section_name: str):
    if key in section:
        return section[key]
    if default is _REQUIRED:
        raise ParseError(f"missing key {key!r} in section [{section_name}]")
    return default


_REQUIRED = object()


def get_str(section, key, default=_REQUIRED, section_name=""):
    value = _raw(section, key, default, section_name)
    return value if isinstance(value, str) else value


def get_int(section, key, default=_REQUIRED, section_name=""):
    value = _raw(section, key, default, section_name)
    if not isinstance(value, str):
        return value
    try:
        return int(value)
    except ValueError as exc:
        raise ParseError(f"[{section_name}] {key} = {value!r} is not an integer") from exc


def get_float(section, key, default=_REQUIRED, section_name=""):
    value = _raw(section, key, default, section_name)
    if not isinstance(value, str):
        return value
    try:
        return float(value)
    except ValueError as exc:
        raise ParseError(f"[{section_name}] {key} = {value!r} is not a number") from exc


def get_bool(section, key, default=_REQUIRED, section_name=""):
    value = _raw(section, key, default, section_name)
    if not isinstance(value, str):
        return value
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ParseError(f"[{section_name}] {key} = {value!r} is not a boolean")


def _split_list(value: str) -> list[str]:
    return [part.strip() for part in value.split(",") if part.strip()]


def get_int_list(section, key, default=_REQUIRED, section_name=""):
    value = _raw(section, key, default, section_name)
    if not isinstance(value, str):
        return value
    try:
        return [int(part) for part in _split_list(value)]
    except ValueError as exc:
        raise ParseError(f"[{section_name}] {key} = {value!r} is not a list of integers") from exc


def get_float_list(section, key, default=_REQUIRED, section_name=""):
    value = _raw(section, key, default, section_name)
    if not isinstance(value, str):
        return value
    try:
        return [float(part) for part in _split_list(value)]
    except ValueError as exc:
        raise ParseError(f"[{section_name}] {key} = {value!r} is not a list of numbers") from exc


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, compact separators, UTF-8 text."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_digest(obj) -> str:
    """sha256 of the canonical JSON form of an effective configuration."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def manifest_path_for(out) -> Path:
    """Manifest location next to an output file or inside an output directory."""
    out = Path(out)
    if out.is_dir():
        return out / "manifest.json"
    return out.with_name(out.stem + ".manifest.json")


def write_manifest(out, command: str, digest: str, seeds, inputs, outputs) -> Path:
    doc = {
        "command": command,
        "config_digest": digest,
        "seeds": list(seeds),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "created": datetime.now(timezone.utc).isoformat(),
        "tool_version": TOOL_VERSION,
    }
    path = manifest_path_for(out)
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path


def worker_count() -> int:
    """Parallelism cap from MERKIT_THREADS; defaults to serial execution."""
    raw = os.environ.get("MERKIT_THREADS", "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise ParameterError(f"MERKIT_THREADS must be an integer, got {raw!r}") from exc
    return max(1, value)
