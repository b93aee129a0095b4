"""Plain-text key=value config parsing shared by the generator, training
and the CLI. Unknown keys are rejected so typos fail loudly."""

from __future__ import annotations


class ConfigError(ValueError):
    """Raised for malformed config files or unknown/invalid keys."""


def parse_kv_file(path):
    """Parse a key=value file into a string dict; '#' starts a comment."""
    out = {}
    with open(path) as f:
        for ln, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected key=value, got {raw!r}")
            key, val = line.split("=", 1)
            key, val = key.strip(), val.strip()
            if not key:
                raise ConfigError(f"{path}:{ln}: empty key")
            if key in out:
                raise ConfigError(f"{path}:{ln}: duplicate key {key!r}")
            out[key] = val
    return out


_BOOL = {"true": True, "1": True, "yes": True,
         "false": False, "0": False, "no": False}


def coerce(value, target_type, key):
    if target_type is bool:
        try:
            return _BOOL[value.lower()]
        except KeyError:
            raise ConfigError(f"{key}: expected a boolean, got {value!r}") from None
    try:
        return target_type(value)
    except ValueError:
        raise ConfigError(
            f"{key}: expected {target_type.__name__}, got {value!r}"
        ) from None


def apply_overrides(obj, values):
    """Set dataclass fields from a string dict, coercing by field type.

    Unknown keys raise ConfigError.
    """
    fields = {f: type(getattr(obj, f)) for f in obj.__dataclass_fields__}
    for key, val in values.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(obj, key, coerce(val, fields[key], key))
    return obj
