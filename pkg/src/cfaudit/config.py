"""Dataset profiles and declarative TOML configuration."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import ConfigError, TriageScale


@dataclass(frozen=True)
class Profile:
    """Preset for one dataset family.

    ``raw_scale`` is the scale records arrive on; ``audit_scale`` is what
    remains after label exclusions and what predictors emit.
    """

    name: str
    language: str
    raw_scale: TriageScale
    audit_scale: TriageScale
    excluded_labels: frozenset
    min_date: str | None
    pct_decimals: int

    @property
    def nmdf_decimals(self) -> int:
        return self.pct_decimals + 2

    def filter_defaults(self) -> dict:
        out = {
            "language": self.language,
            "scale": self.raw_scale.to_dict(),
            "excluded_labels": sorted(self.excluded_labels),
        }
        if self.min_date:
            out["min_date"] = self.min_date
        return out


PROFILES = {
    "bordeaux": Profile("bordeaux", "fr", TriageScale(1, 5), TriageScale(2, 5), frozenset({1}), "2016-01-01", 1),
    "mimic": Profile("mimic", "en", TriageScale(1, 5), TriageScale(1, 4), frozenset({5}), None, 2),
}


def get_profile(name: str) -> Profile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None


def load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"), default=str)


def config_hash(config: Mapping) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(Path(path), "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def section(config: Mapping, name: str) -> dict:
    value = config.get(name, {})
    if not isinstance(value, Mapping):
        raise ConfigError(f"[{name}] must be a table")
    return dict(value)
