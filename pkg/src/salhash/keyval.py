"""Flat ``key = value`` text format with ``#`` comments.

Used both for run configs and dataset manifests; writing is deterministic
(insertion order, canonical value formatting) so files round-trip bytewise.
"""

from .errors import ConfigError


def parse_keyval(text, source="<config>"):
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_keyval(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_keyval(fh.read(), source=str(path))


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_keyval(path, items, header=None):
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        for key, value in items:
            fh.write(f"{key} = {format_value(value)}\n")
