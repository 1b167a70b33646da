"""A single-process node: content store, ledger, registry, validator pool,
trust book and query engine wired into the submit and retrieve flows."""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from typing import Any

from .config import RunConfig
from .consensus import Decision, ValidatorPool, ValidatorRecord
from .content_store import ContentStore, compute_cid
from .encoding import LogicalClock, SystemClock
from .errors import BelowTrustThreshold, NotAuthorized
from .identity import (
    ED25519,
    NULL_SCHEME,
    SOURCE_ROLES,
    KeyPair,
    Principal,
    Registry,
    Role,
    SignedEnvelope,
    enrollment_digest,
    registration_digest,
)
from .ledger import Ledger, Sequencer, TxKind
from .query import DataRecord, ProvenanceReport, Query, QueryEngine, QueryResult
from .trust import CrossValidationResult, TrustBook, TrustScore, TrustWeights, TrustWindow, cross_validate
from .validation import (
    MetadataRecord,
    SubmissionEnvelope,
    Verdict,
    canonical_json,
    validate_transaction,
    verify_schema,
)

log = logging.getLogger(__name__)

CONSENSUS_SUBMITTER = "<consensus>"


@dataclass(frozen=True)
class SubmissionReceipt:
    tx_id: str
    cid: str
    decision: Decision
    verdict: Verdict
    trust: TrustScore | None = None
    needs_review: bool = False

    @property
    def accepted(self) -> bool:
        return self.decision.accepted

    def to_dict(self) -> dict[str, Any]:
        return {
            "accepted": self.accepted,
            "approvals": self.decision.approvals,
            "cid": self.cid,
            "needs_review": self.needs_review,
            "quorum_threshold": self.decision.quorum_threshold,
            "reason": self.verdict.failure_reason.value,
            "trust": None if self.trust is None else self.trust.score,
            "tx_id": self.tx_id,
        }


def _lenient_json(metadata: Any) -> str:
    try:
        return canonical_json(metadata)
    except (TypeError, ValueError):
        return json.dumps(repr(metadata))


class Node:
    def __init__(self, config: RunConfig | None = None, *, in_memory: bool = False):
        self.config = config = (config or RunConfig()).validate()
        self.scheme = NULL_SCHEME if config.signature_scheme == "null" else ED25519
        if in_memory:
            self.store = ContentStore.in_memory()
            self.ledger = Ledger()
        else:
            self.store = ContentStore(config.store_dir)
            config.chain_path.parent.mkdir(parents=True, exist_ok=True)
            self.ledger = Ledger.open(config.chain_path, config.checkpoint_path)
        self.in_memory = in_memory

        if config.clock == "logical":
            self.clock = LogicalClock()
            blocks = self.ledger.blocks
            stamps = [b.timestamp_us for b in blocks] + [t.timestamp_us for b in blocks for t in b.txs]
            if stamps:
                self.clock.advance_past(max(stamps))
        else:
            self.clock = SystemClock()

        self.sequencer = Sequencer(
            self.ledger, self.clock, config.rng_seed, config.batch_size, config.batch_timeout_ms * 1000
        )
        self.registry = Registry(self.ledger, self.sequencer, self.scheme)
        self.trust = TrustBook(
            self.ledger, self.registry, self.sequencer,
            TrustWeights(config.history_weight, config.crossval_weight),
        )
        self.window = TrustWindow(config.window_seconds, config.window_meters)
        self.query = QueryEngine(self.ledger, self.store, self.registry)
        self.pool = ValidatorPool(
            self._load_validators(), config.flag_threshold, config.removal_threshold, config.min_active
        )
        self._lock = threading.RLock()

    @classmethod
    def open(cls, config: RunConfig) -> "Node":
        return cls(config)

    @classmethod
    def in_memory_node(cls, config: RunConfig | None = None) -> "Node":
        return cls(config, in_memory=True)

    def _load_validators(self) -> list[ValidatorRecord]:
        on_chain = {}
        for key in self.ledger.state_keys("validator/"):
            rec = ValidatorRecord.decode(self.ledger.get_state(key))
            on_chain[rec.id] = rec
        if on_chain:
            configured = [v.id for v in self.config.validators]
            if sorted(configured) != sorted(on_chain):
                log.warning("validator pool is fixed at bootstrap; ignoring configured pool %s", configured)
            return list(on_chain.values())
        return [ValidatorRecord(v.id, v.behavior, v.seed) for v in self.config.validators]

    # -- lifecycle ------------------------------------------------------------

    def flush(self) -> None:
        with self._lock:
            self.sequencer.flush()

    def close(self) -> None:
        self.flush()
        if not self.in_memory:
            self.ledger.save_checkpoint(self.config.checkpoint_path)

    def __enter__(self) -> "Node":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- identity -------------------------------------------------------------

    def validator_key(self, validator_id: str) -> KeyPair:
        return KeyPair.derive(f"validator:{validator_id}", self.config.rng_seed, self.scheme)

    def bootstrap(self, admin_id: str, admin_key: KeyPair) -> str:
        """Enroll the first admin and register the configured validator pool."""
        with self._lock:
            if self.registry.has_admin():
                raise NotAuthorized("the chain already has an admin; use enroll_admin")
            message = self.registry.enroll_admin(admin_id, admin_key.public_key)
            for rec in self.pool:
                key = self.validator_key(rec.id)
                if self.registry.principal(rec.id) is None:
                    digest = registration_digest(rec.id, Role.VALIDATOR, key.public_key)
                    self.registry.register_user(
                        admin_key.envelope(admin_id, digest), rec.id, Role.VALIDATOR, key.public_key
                    )
                self.sequencer.propose(TxKind.VALIDATOR_STATUS, rec.encode(), CONSENSUS_SUBMITTER)
            self.sequencer.flush()
            return message

    def enroll_admin(self, admin_id: str, public_key: bytes = b"", caller: SignedEnvelope | None = None) -> str:
        with self._lock:
            return self.registry.enroll_admin(admin_id, public_key, caller)

    def enroll_admin_as(self, admin_id: str, public_key: bytes, caller_id: str, caller_key: KeyPair) -> str:
        envelope = caller_key.envelope(caller_id, enrollment_digest(admin_id, public_key))
        return self.enroll_admin(admin_id, public_key, envelope)

    def register_user(self, admin: SignedEnvelope, user_id: str, role: Role | str, public_key: bytes) -> str:
        with self._lock:
            return self.registry.register_user(admin, user_id, role, public_key)

    def register_as(self, admin_id: str, admin_key: KeyPair, user_id: str, role: Role | str,
                    public_key: bytes) -> str:
        """Convenience: sign the registration request with ``admin_key``."""
        digest = registration_digest(user_id, Role(role), public_key)
        return self.register_user(admin_key.envelope(admin_id, digest), user_id, role, public_key)

    def principal(self, principal_id: str) -> Principal:
        return self.registry.get(principal_id)

    # -- submission -----------------------------------------------------------

    def submit(self, envelope: SubmissionEnvelope) -> SubmissionReceipt:
        """Validate through a quorum round; store and record the data if accepted."""
        with self._lock:
            source = self.registry.principal(envelope.source)
            untrusted = source is not None and source.role is Role.UNTRUSTED_SOURCE
            record = None
            if not verify_schema(envelope.metadata):
                record = MetadataRecord.from_mapping(envelope.metadata)
            crossval = CrossValidationResult()
            if untrusted and record is not None:
                crossval = cross_validate(record, self.query.trusted_index, self.window)
            trust_now = 0.0
            if source is not None and source.role in SOURCE_ROLES:
                trust_now = self.trust.get_trust(source.id).score
            if untrusted and self.config.min_trust is not None and trust_now < self.config.min_trust:
                raise BelowTrustThreshold(
                    f"trust {trust_now:.4f} of {source.id} is below the minimum {self.config.min_trust}"
                )

            cid = compute_cid(envelope.data)
            needs_review = crossval.agreement is not None and crossval.agreement < 0.5
            data_record = DataRecord(
                source=envelope.source,
                cid=cid,
                claimed_digest=envelope.claimed_digest,
                metadata_json=record.to_json() if record is not None else _lenient_json(envelope.metadata),
                size_bytes=len(envelope.data),
                trust_at_commit=trust_now,
                agreement=crossval.agreement,
                reference_tx=crossval.reference_tx,
                needs_review=needs_review,
            )
            tx = self.sequencer.build(TxKind.STORE_DATA, data_record.encode(), envelope.source, envelope.signature)
            verdict = validate_transaction(tx.tx_id, envelope, self.registry)
            decision = self.pool.run_round(tx.tx_id, envelope, self.registry)
            changed = self.pool.record_deviations(decision)

            if decision.accepted:
                self.store.put(envelope.data)
                self.sequencer.enqueue(tx.with_endorsement(decision.encode()))
            score = None
            if untrusted:
                score = self.trust.update_on_decision(source.id, decision.accepted, crossval, tx.tx_id)
            for rec in changed:
                self.sequencer.propose(TxKind.VALIDATOR_STATUS, rec.encode(), CONSENSUS_SUBMITTER)
            self._audit(decision, verdict)
            return SubmissionReceipt(tx.tx_id, cid, decision, verdict, score, needs_review)

    def _audit(self, decision: Decision, verdict: Verdict) -> None:
        if self.in_memory:
            return
        line = dict(decision.to_dict(), reason=verdict.failure_reason.value)
        self.config.audit_log.parent.mkdir(parents=True, exist_ok=True)
        with open(self.config.audit_log, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(line, sort_keys=True) + "\n")

    # -- retrieval ------------------------------------------------------------

    def query_metadata(self, q: Query) -> list[QueryResult]:
        return self.query.query_metadata(q)

    def fetch_data(self, tx_id: str) -> tuple[MetadataRecord, bytes]:
        return self.query.fetch_data(tx_id)

    def provenance_of(self, tx_id: str) -> ProvenanceReport:
        return self.query.provenance_of(tx_id)

    def get_trust(self, source: str) -> TrustScore:
        return self.trust.get_trust(source)

    def validators(self) -> list[ValidatorRecord]:
        return list(self.pool)

    def verify_chain(self) -> int | None:
        return self.ledger.verify_chain()
