"""Query engine over committed data records.

Metadata predicates are answered from in-memory secondary indexes that are
rebuilt from the chain at startup and extended one committed block at a
time. Blob fetches go through the content store and are checked against the
digest recorded on-chain.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import threading
from dataclasses import dataclass
from datetime import datetime
from typing import Any

from . import encoding as enc
from .consensus import Decision
from .content_store import ContentStore
from .encoding import is_hex_digest
from .errors import IntegrityViolation, MalformedQuery, NotFound
from .identity import Registry, Role
from .ledger import Block, Ledger, TxKind
from .trust import TrustedIndex
from .validation import MetadataRecord, parse_metadata


@dataclass(frozen=True)
class DataRecord:
    """Value stored on-chain for an accepted submission (key: its tx_id)."""

    source: str
    cid: str
    claimed_digest: str
    metadata_json: str
    size_bytes: int
    trust_at_commit: float
    agreement: float | None = None
    reference_tx: str | None = None
    needs_review: bool = False

    def encode(self) -> bytes:
        return enc.frame(
            enc.text(self.source),
            enc.text(self.cid),
            enc.text(self.claimed_digest),
            enc.text(self.metadata_json),
            enc.u64(self.size_bytes),
            enc.f64(self.trust_at_commit),
            enc.optional(None if self.agreement is None else enc.f64(self.agreement)),
            enc.optional(None if self.reference_tx is None else enc.text(self.reference_tx)),
            enc.flag(self.needs_review),
        )

    @classmethod
    def decode(cls, data: bytes) -> "DataRecord":
        f = enc.unframe(data, 9)
        agreement = enc.read_optional(f[6])
        reference = enc.read_optional(f[7])
        return cls(
            enc.read_text(f[0]), enc.read_text(f[1]), enc.read_text(f[2]), enc.read_text(f[3]),
            enc.read_u64(f[4]), enc.read_f64(f[5]),
            None if agreement is None else enc.read_f64(agreement),
            None if reference is None else enc.read_text(reference),
            enc.read_flag(f[8]),
        )

    def metadata(self) -> MetadataRecord:
        return parse_metadata(self.metadata_json)


@dataclass(frozen=True)
class GeoBox:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def contains(self, lat: float, lon: float) -> bool:
        return self.lat_min <= lat <= self.lat_max and self.lon_min <= lon <= self.lon_max


@dataclass(frozen=True)
class Query:
    """Conjunctive predicates; ``None`` matches everything."""

    label: str | None = None
    min_confidence: float | None = None
    time_range: tuple[datetime, datetime] | None = None
    geo_box: GeoBox | None = None
    source: str | None = None

    def check(self) -> None:
        if self.min_confidence is not None and not (0.0 <= self.min_confidence <= 1.0):
            raise MalformedQuery("min_confidence must lie in [0, 1]")
        if self.time_range is not None:
            start, end = self.time_range
            if start.tzinfo is None or end.tzinfo is None:
                raise MalformedQuery("time range bounds must be timezone-aware")
            if start > end:
                raise MalformedQuery("time range start is after its end")
        if self.geo_box is not None:
            g = self.geo_box
            if g.lat_min > g.lat_max or g.lon_min > g.lon_max:
                raise MalformedQuery("geo box bounds are not ordered")

    def time_bounds_ns(self) -> tuple[int, int] | None:
        if self.time_range is None:
            return None
        start, end = self.time_range
        return enc.to_micros(start) * 1000, enc.to_micros(end) * 1000

    def matches(self, source: str, record: MetadataRecord) -> bool:
        if self.label is not None and record.label != self.label:
            return False
        if self.min_confidence is not None and record.confidence < self.min_confidence:
            return False
        bounds = self.time_bounds_ns()
        if bounds is not None and not (bounds[0] <= record.instant_ns <= bounds[1]):
            return False
        if self.geo_box is not None and not self.geo_box.contains(record.location.latitude, record.location.longitude):
            return False
        if self.source is not None and source != self.source:
            return False
        return True


@dataclass(frozen=True)
class QueryResult:
    tx_id: str
    metadata: MetadataRecord
    cid: str
    source: str
    trust_at_commit: float
    block_height: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "block_height": self.block_height,
            "cid": self.cid,
            "metadata": self.metadata.to_dict(),
            "source": self.source,
            "trust_at_commit": self.trust_at_commit,
            "tx_id": self.tx_id,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class ProvenanceReport:
    tx_id: str
    submitter: str
    submitter_role: Role
    decision: Decision
    cid: str
    claimed_digest: str
    block_height: int
    chain_verified: bool
    needs_review: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "block_height": self.block_height,
            "chain_verified": self.chain_verified,
            "cid": self.cid,
            "claimed_digest": self.claimed_digest,
            "decision": self.decision.to_dict(),
            "needs_review": self.needs_review,
            "submitter": self.submitter,
            "submitter_role": self.submitter_role.value,
            "tx_id": self.tx_id,
        }


def _no_metadata(tx_id: str) -> NotFound:
    return NotFound(f"No metadata found for transaction ID {tx_id}")


@dataclass(frozen=True)
class _Indexed:
    key: tuple[int, str]
    data: DataRecord
    metadata: MetadataRecord
    height: int


class QueryEngine:
    def __init__(self, ledger: Ledger, store: ContentStore, registry: Registry):
        self.ledger = ledger
        self.store = store
        self.registry = registry
        self.trusted_index = TrustedIndex()
        self._lock = threading.Lock()
        self._rows: dict[str, _Indexed] = {}
        self._by_time: list[tuple[int, str]] = []
        self._by_label: dict[str, list[tuple[int, str]]] = {}
        self._by_source: dict[str, list[tuple[int, str]]] = {}
        for block in ledger.blocks:
            self._on_block(block)
        ledger.subscribe(self._on_block)

    def _on_block(self, block: Block) -> None:
        fresh = []
        for tx in block.txs:
            if tx.kind is not TxKind.STORE_DATA:
                continue
            data = DataRecord.decode(tx.payload)
            meta = data.metadata()
            fresh.append((tx.tx_id, _Indexed((meta.instant_ns, tx.tx_id), data, meta, block.height)))
        if not fresh:
            return
        with self._lock:
            for tx_id, row in fresh:
                self._rows[tx_id] = row
                bisect.insort(self._by_time, row.key)
                bisect.insort(self._by_label.setdefault(row.metadata.label, []), row.key)
                bisect.insort(self._by_source.setdefault(row.data.source, []), row.key)
                source = self.registry.principal(row.data.source)
                if source is not None and source.role is Role.TRUSTED_SOURCE:
                    self.trusted_index.add(tx_id, row.metadata)

    def __len__(self) -> int:
        return len(self._rows)

    def query_metadata(self, q: Query) -> list[QueryResult]:
        q.check()
        with self._lock:
            if q.label is not None:
                keys = self._by_label.get(q.label, [])
            elif q.source is not None:
                keys = self._by_source.get(q.source, [])
            else:
                keys = self._by_time
            bounds = q.time_bounds_ns()
            if bounds is not None:
                lo = bisect.bisect_left(keys, (bounds[0], ""))
                hi = bisect.bisect_right(keys, (bounds[1], "\uffff"))
                keys = keys[lo:hi]
            rows = [self._rows[tx_id] for _, tx_id in keys]
        return [
            QueryResult(r.key[1], r.metadata, r.data.cid, r.data.source, r.data.trust_at_commit, r.height)
            for r in rows
            if q.matches(r.data.source, r.metadata)
        ]

    def data_record(self, tx_id: str) -> DataRecord:
        if not is_hex_digest(tx_id):
            raise _no_metadata(tx_id)
        entry = self.ledger.get_entry(tx_id)
        if entry is None:
            raise _no_metadata(tx_id)
        return DataRecord.decode(entry.value)

    def fetch_data(self, tx_id: str) -> tuple[MetadataRecord, bytes]:
        record = self.data_record(tx_id)
        blob = self.store.get(record.cid)
        # store.get already proved sha256(blob) == cid.
        if record.cid != record.claimed_digest:
            raise IntegrityViolation(f"blob for {tx_id} does not match its on-chain digest")
        return record.metadata(), blob

    def provenance_of(self, tx_id: str) -> ProvenanceReport:
        record = self.data_record(tx_id)
        located = self.ledger.get_transaction(tx_id)
        tx = located.tx
        decision = Decision.decode(tx.endorsement)
        role = self.registry.get(tx.submitter).role
        chain_ok = self.ledger.verify_chain(upto=located.height) is None
        try:
            blob = self.store.get(record.cid)
            blob_ok = hashlib.sha256(blob).hexdigest() == record.claimed_digest
        except (NotFound, IntegrityViolation):
            blob_ok = False
        return ProvenanceReport(
            tx_id=tx_id,
            submitter=tx.submitter,
            submitter_role=role,
            decision=decision,
            cid=record.cid,
            claimed_digest=record.claimed_digest,
            block_height=located.height,
            chain_verified=chain_ok and blob_ok,
            needs_review=record.needs_review,
        )
