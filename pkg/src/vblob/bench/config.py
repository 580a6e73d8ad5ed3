"""``key = value`` configuration files with ``VBLOB_*`` environment overrides.

Precedence, highest first: command-line flag, environment variable
(``VBLOB_<KEY>``, upper-cased, dashes as underscores), config file, default.
"""

from __future__ import annotations

import os
from pathlib import Path

ENV_PREFIX = "VBLOB_"


def load_file(path) -> dict[str, str]:
    values = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{n}: expected key=value, got {raw!r}")
        values[key.strip().replace("-", "_").lower()] = value.strip()
    return values


def env_overrides(environ=None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    return {k[len(ENV_PREFIX):].lower(): v for k, v in environ.items() if k.startswith(ENV_PREFIX)}


def resolve(cli: dict, path=None, environ=None) -> dict:
    """Merge file, environment and explicit (non-None) CLI values."""
    merged: dict = {}
    if path:
        merged.update(load_file(path))
    merged.update(env_overrides(environ))
    merged.update({k: v for k, v in cli.items() if v is not None})
    return merged
