"""Permissioned ledger with content-addressed blob storage, quorum validation,
source trust scoring and provenance queries."""

from .config import RunConfig, ValidatorSpec
from .consensus import Behavior, Decision, ValidatorPool, ValidatorRecord, ValidatorStatus, quorum_threshold
from .content_store import ContentStore, compute_cid
from .identity import KeyPair, Principal, Registry, Role
from .ledger import Block, Ledger, Sequencer, Transaction, TxKind, WorldState
from .node import Node, SubmissionReceipt
from .query import DataRecord, GeoBox, ProvenanceReport, Query, QueryEngine, QueryResult
from .trust import TrustBook, TrustScore, TrustWeights, compute_score
from .validation import MetadataRecord, SubmissionEnvelope, Verdict, parse_metadata, verify_schema

__version__ = "0.1.0"

__all__ = [
    "Behavior", "Block", "ContentStore", "DataRecord", "Decision", "GeoBox", "KeyPair", "Ledger",
    "MetadataRecord", "Node", "Principal", "ProvenanceReport", "Query", "QueryEngine", "QueryResult",
    "Registry", "Role", "RunConfig", "Sequencer", "SubmissionEnvelope", "SubmissionReceipt",
    "Transaction", "TrustBook", "TrustScore", "TrustWeights", "TxKind", "ValidatorPool",
    "ValidatorRecord", "ValidatorSpec", "ValidatorStatus", "Verdict", "WorldState", "compute_cid",
    "compute_score", "parse_metadata", "quorum_threshold", "verify_schema",
]
