"""Small shared utilities."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os

from .errors import ConfigError


def as_jsonable(obj):
    """Recursively convert dataclasses/tuples to plain JSON-able values."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: as_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {k: as_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [as_jsonable(v) for v in obj]
    return obj


def canonical_json(obj) -> str:
    return json.dumps(as_jsonable(obj), sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    """Stable hex digest of a configuration object."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def resolve_threads(cli_value: int | None) -> int:
    """Worker cap: CLI flag wins, then PANORECT_THREADS, then 1."""
    if cli_value is not None:
        n = cli_value
    else:
        env = os.environ.get("PANORECT_THREADS", "")
        if not env:
            return 1
        try:
            n = int(env)
        except ValueError as e:
            raise ConfigError(f"PANORECT_THREADS must be an integer, got {env!r}") from e
    if n < 1:
        raise ConfigError(f"thread count must be >= 1, got {n}")
    return n
