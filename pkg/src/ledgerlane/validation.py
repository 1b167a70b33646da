"""The validation contract every validator runs on a submission.

Checks run in a fixed order: source authentication, metadata schema, then
payload hash integrity. The first failure decides the verdict.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from calendar import timegm
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from . import encoding as enc
from .encoding import is_hex_digest
from .errors import BadSignature, ParseError, SchemaError, UnknownPrincipal
from .identity import SOURCE_ROLES, KeyPair, Registry, SignedEnvelope

TOP_LEVEL_KEYS = ("label", "confidence", "bounding_box", "timestamp", "color", "location")
BOX_KEYS = ("x1", "y1", "x2", "y2")
LOCATION_KEYS = ("latitude", "longitude")

_TIMESTAMP = re.compile(
    r"^(\d{4})-(\d{2})-(\d{2})T(\d{2}):(\d{2}):(\d{2})(?:\.(\d{1,9}))?Z$"
)


@dataclass(frozen=True)
class SchemaIssue:
    field: str
    kind: str  # "type", "missing", "unknown" or "range"
    message: str


def parse_timestamp_ns(value: str) -> int:
    """Nanoseconds since the epoch for an ISO-8601 UTC (``Z``) string, up to 9 fractional digits."""
    m = _TIMESTAMP.match(value)
    if m is None:
        raise ValueError(f"timestamp {value!r} is not ISO-8601 UTC ending in Z")
    year, month, day, hour, minute, second = (int(g) for g in m.groups()[:6])
    # datetime() rejects impossible dates such as Feb 30.
    datetime(year, month, day, hour, minute, second)
    whole = timegm((year, month, day, hour, minute, second, 0, 0, 0))
    fraction = int((m.group(7) or "").ljust(9, "0"))
    return whole * 1_000_000_000 + fraction


def _is_int(v: object) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v: object) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool))


def _check_closed_object(value: Any, name: str, keys: tuple[str, ...], issues: list[SchemaIssue]) -> bool:
    if not isinstance(value, Mapping):
        issues.append(SchemaIssue(name, "type", f"{name} must be an object"))
        return False
    for key in sorted(set(value) - set(keys)):
        issues.append(SchemaIssue(f"{name}.{key}", "unknown", f"unexpected field {name}.{key}"))
    for key in keys:
        if key not in value:
            issues.append(SchemaIssue(f"{name}.{key}", "missing", f"missing field {name}.{key}"))
    return True


def verify_schema(candidate: Any) -> list[SchemaIssue]:
    """Every schema violation in ``candidate``; an empty list means it is valid."""
    if isinstance(candidate, MetadataRecord):
        candidate = candidate.to_dict()
    issues: list[SchemaIssue] = []
    if not isinstance(candidate, Mapping):
        return [SchemaIssue("metadata", "type", "metadata must be a JSON object")]

    for key in sorted(set(candidate) - set(TOP_LEVEL_KEYS)):
        issues.append(SchemaIssue(key, "unknown", f"unexpected field {key}"))
    for key in TOP_LEVEL_KEYS:
        if key not in candidate:
            issues.append(SchemaIssue(key, "missing", f"missing field {key}"))

    for key in ("label", "color"):
        if key in candidate:
            v = candidate[key]
            if not isinstance(v, str):
                issues.append(SchemaIssue(key, "type", f"{key} must be a string"))
            elif not v:
                issues.append(SchemaIssue(key, "range", f"{key} must not be empty"))

    if "confidence" in candidate:
        v = candidate["confidence"]
        if not _is_number(v):
            issues.append(SchemaIssue("confidence", "type", "confidence must be a number"))
        elif not (math.isfinite(v) and 0.0 <= v <= 1.0):
            issues.append(SchemaIssue("confidence", "range", f"confidence {v!r} outside [0, 1]"))

    if "bounding_box" in candidate:
        box = candidate["bounding_box"]
        if _check_closed_object(box, "bounding_box", BOX_KEYS, issues):
            ok = True
            for key in BOX_KEYS:
                if key not in box:
                    ok = False
                elif not _is_int(box[key]):
                    issues.append(SchemaIssue(f"bounding_box.{key}", "type", f"bounding_box.{key} must be an integer"))
                    ok = False
                elif box[key] < 0:
                    issues.append(SchemaIssue(f"bounding_box.{key}", "range", f"bounding_box.{key} is negative"))
                    ok = False
            if ok:
                if box["x1"] >= box["x2"]:
                    issues.append(SchemaIssue("bounding_box.x2", "range", "bounding box needs x1 < x2"))
                if box["y1"] >= box["y2"]:
                    issues.append(SchemaIssue("bounding_box.y2", "range", "bounding box needs y1 < y2"))

    if "timestamp" in candidate:
        v = candidate["timestamp"]
        if not isinstance(v, str):
            issues.append(SchemaIssue("timestamp", "type", "timestamp must be a string"))
        else:
            try:
                parse_timestamp_ns(v)
            except ValueError as exc:
                issues.append(SchemaIssue("timestamp", "range", str(exc)))

    if "location" in candidate:
        loc = candidate["location"]
        if _check_closed_object(loc, "location", LOCATION_KEYS, issues):
            for key, bound in (("latitude", 90.0), ("longitude", 180.0)):
                if key not in loc:
                    continue
                v = loc[key]
                if not _is_number(v):
                    issues.append(SchemaIssue(f"location.{key}", "type", f"location.{key} must be a number"))
                elif not (math.isfinite(v) and -bound <= v <= bound):
                    issues.append(SchemaIssue(f"location.{key}", "range", f"location.{key} {v!r} out of range"))
    return issues


@dataclass(frozen=True)
class BoundingBox:
    x1: int
    y1: int
    x2: int
    y2: int


@dataclass(frozen=True)
class Location:
    latitude: float
    longitude: float


@dataclass(frozen=True)
class MetadataRecord:
    """One detection record; construct through :meth:`from_mapping` to validate."""

    label: str
    confidence: float
    bounding_box: BoundingBox
    timestamp: str
    color: str
    location: Location

    @property
    def instant_ns(self) -> int:
        return parse_timestamp_ns(self.timestamp)

    @classmethod
    def from_mapping(cls, candidate: Mapping[str, Any]) -> "MetadataRecord":
        issues = verify_schema(candidate)
        if issues:
            raise SchemaError(issues)
        box = candidate["bounding_box"]
        loc = candidate["location"]
        return cls(
            label=candidate["label"],
            confidence=float(candidate["confidence"]),
            bounding_box=BoundingBox(box["x1"], box["y1"], box["x2"], box["y2"]),
            timestamp=candidate["timestamp"],
            color=candidate["color"],
            location=Location(float(loc["latitude"]), float(loc["longitude"])),
        )

    def to_dict(self) -> dict[str, Any]:
        b = self.bounding_box
        return {
            "label": self.label,
            "confidence": self.confidence,
            "bounding_box": {"x1": b.x1, "y1": b.y1, "x2": b.x2, "y2": b.y2},
            "timestamp": self.timestamp,
            "color": self.color,
            "location": {"latitude": self.location.latitude, "longitude": self.location.longitude},
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())


def canonical_json(obj: Any) -> str:
    """Sorted keys, no whitespace, shortest round-tripping float repr."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def _reject_constant(name: str):
    raise ValueError(f"non-finite number {name} is not valid JSON")


def _no_duplicates(pairs):
    obj = {}
    for key, value in pairs:
        if key in obj:
            raise ValueError(f"duplicate key {key!r}")
        obj[key] = value
    return obj


def load_metadata_document(document: str | bytes) -> Any:
    """Strict JSON decode: UTF-8 only, no duplicate keys, no NaN or Infinity."""
    if isinstance(document, bytes):
        try:
            document = document.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"metadata is not UTF-8: {exc}") from None
    if not document.strip():
        raise ParseError("metadata document is empty")
    try:
        return json.loads(document, parse_constant=_reject_constant, object_pairs_hook=_no_duplicates)
    except ValueError as exc:
        raise ParseError(f"metadata is not valid JSON: {exc}") from None


def parse_metadata(document: str | bytes) -> MetadataRecord:
    """Decode a metadata JSON document into a validated record."""
    candidate = load_metadata_document(document)
    issues = verify_schema(candidate)
    type_issues = [i for i in issues if i.kind == "type"]
    if type_issues:
        first = type_issues[0]
        raise ParseError(f"wrong type for {first.field}: {first.message}", key=first.field)
    if issues:
        raise SchemaError(issues)
    return MetadataRecord.from_mapping(candidate)


def ingest_metadata_file(path: str | Path) -> MetadataRecord:
    return parse_metadata(Path(path).read_bytes())


# -- submissions and verdicts --------------------------------------------------


def submission_digest(claimed_digest: str, metadata: Any, source: str) -> str:
    if isinstance(metadata, MetadataRecord):
        metadata = metadata.to_dict()
    meta = json.dumps(metadata, sort_keys=True, separators=(",", ":"), ensure_ascii=False, default=repr)
    return enc.sha256_hex(enc.frame(b"Submission", enc.text(claimed_digest), enc.text(meta), enc.text(source)))


@dataclass(frozen=True)
class SubmissionEnvelope:
    data: bytes
    claimed_digest: str
    metadata: Any
    source: str
    signature: bytes

    @classmethod
    def build(cls, data: bytes, metadata: Any, source: str, key: KeyPair) -> "SubmissionEnvelope":
        """Digest the data and sign the submission as ``source``."""
        if isinstance(metadata, MetadataRecord):
            metadata = metadata.to_dict()
        digest = hashlib.sha256(data).hexdigest()
        signature = key.sign_digest(submission_digest(digest, metadata, source))
        return cls(bytes(data), digest, metadata, source, signature)

    def payload_digest(self) -> str:
        return submission_digest(self.claimed_digest, self.metadata, self.source)

    def signed(self) -> SignedEnvelope:
        return SignedEnvelope(self.payload_digest(), self.source, self.signature)


class FailureReason(str, Enum):
    NONE = "None"
    INVALID_SOURCE = "InvalidSource"
    INVALID_SCHEMA = "InvalidSchema"
    HASH_MISMATCH = "HashMismatch"


@dataclass(frozen=True)
class Verdict:
    valid: bool
    failure_reason: FailureReason = FailureReason.NONE
    detail: str = ""
    issues: tuple[SchemaIssue, ...] = field(default=(), compare=False)


def validate_source(source: str, envelope: SubmissionEnvelope, registry: Registry) -> bool:
    try:
        principal = registry.authenticate(envelope.signed())
    except (UnknownPrincipal, BadSignature):
        return False
    return principal.id == source and principal.role in SOURCE_ROLES


def validate_transaction(tx_id: str, envelope: SubmissionEnvelope, registry: Registry) -> Verdict:
    if not validate_source(envelope.source, envelope, registry):
        return Verdict(False, FailureReason.INVALID_SOURCE, f"Invalid source for transaction {tx_id}")
    issues = verify_schema(envelope.metadata)
    if issues:
        return Verdict(False, FailureReason.INVALID_SCHEMA, f"Invalid schema for transaction {tx_id}", tuple(issues))
    if not is_hex_digest(envelope.claimed_digest) or hashlib.sha256(envelope.data).hexdigest() != envelope.claimed_digest:
        return Verdict(False, FailureReason.HASH_MISMATCH, f"Hash mismatch for transaction {tx_id}")
    return Verdict(True)
