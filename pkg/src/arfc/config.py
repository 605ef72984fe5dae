"""Plain-text ``key = value`` configuration files mapped onto dataclasses."""

from __future__ import annotations

from dataclasses import MISSING, fields

from .tensor import ConfigError

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def parse_pairs(text: str) -> list:
    """(line number, key, value) triples; ``#`` starts a comment."""
    pairs = []
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {ln}: empty key")
        pairs.append((ln, key, value))
    return pairs


def _default(f):
    if f.default is not MISSING:
        return f.default
    if f.default_factory is not MISSING:
        return f.default_factory()
    return None


def coerce(value: str, like, where: str):
    """Convert ``value`` to the type of the example ``like``."""
    try:
        if isinstance(like, bool):
            low = value.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(value)
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
        if isinstance(like, (tuple, list)):
            items = [v.strip() for v in value.strip("()[]").split(",") if v.strip()]
            proto = like[0] if len(like) else 0.0
            return tuple(coerce(v, proto, where) for v in items)
        return value
    except ValueError:
        raise ConfigError(f"{where}: cannot read {value!r} as {type(like).__name__}") from None


def parse_config(text: str, *classes, shared=("seed",)):
    """Build one instance per dataclass from a single key = value file.

    Every key must belong to at least one of ``classes``; keys listed in
    ``shared`` are applied to each class that has them. Unknown keys are
    an error so that a typo never silently falls back to a default.
    """
    known = [{f.name: f for f in fields(cls)} for cls in classes]
    kwargs = [{} for _ in classes]
    seen = {}
    for ln, key, value in parse_pairs(text):
        if key in seen:
            raise ConfigError(f"line {ln}: duplicate key {key!r} (first on line {seen[key]})")
        seen[key] = ln
        owners = [i for i, k in enumerate(known) if key in k]
        if not owners:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        if len(owners) > 1 and key not in shared:
            raise ConfigError(f"line {ln}: ambiguous key {key!r}")
        for i in owners:
            kwargs[i][key] = coerce(value, _default(known[i][key]), f"line {ln}")
    out = [cls(**kw) for cls, kw in zip(classes, kwargs)]
    return out[0] if len(out) == 1 else tuple(out)
