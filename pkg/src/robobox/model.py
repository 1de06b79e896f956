"""Shared domain types: timestamps, variable names, flat telemetry records.

Everything here is an immutable value; instances can be shared freely
between threads. The canonical wire encoding of a record is one JSON
object per line (NDJSON) with the exact field names ``source``,
``timestamp`` and ``values``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Union

Scalar = Union[bool, int, float, str]

_TOKEN_RE = re.compile(r"^[a-z0-9_]+$")


class ModelError(ValueError):
    """Base class for invalid domain values."""


class EmptySegment(ModelError):
    """A variable path contains an empty segment."""


class IllegalCharacter(ModelError):
    """A token or path segment contains a character outside its alphabet."""


class InvalidTimestamp(ModelError):
    """Timestamp is not a finite, non-negative number."""


class NotFlat(ModelError):
    """A record value is not a scalar."""


def validate_timestamp(seconds: float) -> float:
    """UNIX epoch seconds with fractional part; must be finite and >= 0."""
    if isinstance(seconds, bool) or not isinstance(seconds, (int, float)):
        raise InvalidTimestamp(f"timestamp must be a number, got {type(seconds).__name__}")
    value = float(seconds)
    if not math.isfinite(value) or value < 0.0:
        raise InvalidTimestamp(f"timestamp must be finite and non-negative, got {value!r}")
    return value


def compare_timestamps(a: float, b: float) -> int:
    """Total order on timestamps: -1, 0 or 1, consistent with numeric order."""
    a = validate_timestamp(a)
    b = validate_timestamp(b)
    if a < b:
        return -1
    if a > b:
        return 1
    return 0


def validate_source_id(name: str) -> str:
    """Source identifiers are non-empty lowercase tokens: ``[a-z0-9_]+``."""
    if not isinstance(name, str) or not name:
        raise EmptySegment("source id must be a non-empty string")
    if not _TOKEN_RE.match(name):
        raise IllegalCharacter(f"source id {name!r} must match [a-z0-9_]+")
    return name


def validate_component_id(name: str) -> str:
    """Component identifiers use the same token alphabet as source ids."""
    return validate_source_id(name)


def validate_variable_name(path: str) -> str:
    """Validate a ``/``-separated variable path and return it unchanged.

    A variable name denotes exactly one scalar leaf: segments are
    non-empty and contain no whitespace or ``/``.
    """
    if not isinstance(path, str) or not path:
        raise EmptySegment("variable name must be a non-empty string")
    for segment in path.split("/"):
        if not segment:
            raise EmptySegment(f"variable name {path!r} contains an empty segment")
        if any(ch.isspace() for ch in segment):
            raise IllegalCharacter(f"variable name {path!r} contains whitespace")
    return path


def validate_scalar(value: Scalar) -> Scalar:
    """Accept bool/int/float/str leaves; floats must be finite."""
    if isinstance(value, bool) or isinstance(value, (int, str)):
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            raise NotFlat(f"non-finite float {value!r} is not storable")
        return value
    raise NotFlat(f"value of type {type(value).__name__} is not a scalar")


@dataclass(frozen=True)
class FlatRecord:
    """One flattened, timestamped telemetry observation.

    ``values`` maps full variable names to scalar leaves; every name
    shares the record's source prefix (its first path segment equals
    ``source``).
    """

    source: str
    timestamp: float
    values: dict = field(hash=False)

    def __post_init__(self):
        validate_source_id(self.source)
        object.__setattr__(self, "timestamp", validate_timestamp(self.timestamp))
        if not isinstance(self.values, dict) or not self.values:
            raise NotFlat("record values must be a non-empty map")
        for name, value in self.values.items():
            validate_variable_name(name)
            if name.split("/", 1)[0] != self.source:
                raise ModelError(
                    f"variable {name!r} does not carry the record's source prefix {self.source!r}"
                )
            validate_scalar(value)

    def to_json(self) -> str:
        """Canonical one-line NDJSON encoding."""
        return json.dumps(
            {"source": self.source, "timestamp": self.timestamp, "values": self.values},
            allow_nan=False,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "FlatRecord":
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ModelError(f"malformed record line: {exc}") from exc
        if not isinstance(doc, dict):
            raise ModelError("record line must be a JSON object")
        missing = {"source", "timestamp", "values"} - set(doc)
        if missing:
            raise ModelError(f"record line missing fields: {sorted(missing)}")
        return cls(source=doc["source"], timestamp=doc["timestamp"], values=doc["values"])
