"""Append-only hash-chained block ledger with a replayable world state."""

from __future__ import annotations

import hashlib
import os
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import encoding as enc
from .encoding import ZERO_HASH, DecodeError
from .errors import CorruptChain, DuplicateTx, EmptyBatch, InvalidInput, NotFound


class TxKind(str, Enum):
    ENROLL_ADMIN = "EnrollAdmin"
    REGISTER_USER = "RegisterUser"
    STORE_DATA = "StoreData"
    TRUST_UPDATE = "TrustUpdate"
    VALIDATOR_STATUS = "ValidatorStatus"


def compute_tx_id(submitter: str, kind: TxKind, payload: bytes, nonce: bytes) -> str:
    body = enc.frame(enc.text(submitter), enc.text(kind.value), payload, nonce)
    return hashlib.sha256(body).hexdigest()


@dataclass(frozen=True)
class Transaction:
    tx_id: str
    kind: TxKind
    payload: bytes
    submitter: str
    signature: bytes
    client_nonce: bytes
    timestamp_us: int
    # Canonical Decision for StoreData; covered by the block hash, not tx_id.
    endorsement: bytes = b""

    @classmethod
    def create(
        cls,
        kind: TxKind,
        payload: bytes,
        submitter: str,
        nonce: bytes,
        timestamp_us: int,
        signature: bytes = b"",
        endorsement: bytes = b"",
    ) -> "Transaction":
        if len(nonce) != 16:
            raise InvalidInput("client nonce must be 16 bytes")
        tx_id = compute_tx_id(submitter, kind, payload, nonce)
        return cls(tx_id, kind, payload, submitter, signature, nonce, timestamp_us, endorsement)

    def id_matches(self) -> bool:
        return compute_tx_id(self.submitter, self.kind, self.payload, self.client_nonce) == self.tx_id

    def with_endorsement(self, endorsement: bytes) -> "Transaction":
        return Transaction(
            self.tx_id, self.kind, self.payload, self.submitter, self.signature,
            self.client_nonce, self.timestamp_us, endorsement,
        )

    def encode(self) -> bytes:
        return enc.frame(
            enc.text(self.tx_id),
            enc.text(self.kind.value),
            self.payload,
            enc.text(self.submitter),
            self.signature,
            self.client_nonce,
            enc.i64(self.timestamp_us),
            self.endorsement,
        )

    @classmethod
    def decode(cls, data: bytes) -> "Transaction":
        f = enc.unframe(data, 8)
        try:
            kind = TxKind(enc.read_text(f[1]))
        except ValueError as exc:
            raise DecodeError(str(exc)) from None
        return cls(
            enc.read_text(f[0]), kind, f[2], enc.read_text(f[3]), f[4], f[5],
            enc.read_i64(f[6]), f[7],
        )


def block_hash_of(height: int, prev_hash: str, txs: Sequence[Transaction], timestamp_us: int) -> str:
    # tx_root binds the full records (signature, timestamp, endorsement),
    # which tx_ids alone do not cover.
    tx_root = hashlib.sha256(enc.frame_list(tx.encode() for tx in txs)).digest()
    body = enc.frame(
        enc.u64(height),
        enc.text(prev_hash),
        enc.frame_list(enc.text(tx.tx_id) for tx in txs),
        enc.i64(timestamp_us),
        tx_root,
    )
    return hashlib.sha256(body).hexdigest()


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: str
    txs: tuple[Transaction, ...]
    timestamp_us: int
    block_hash: str

    @classmethod
    def seal(cls, height: int, prev_hash: str, txs: Sequence[Transaction], timestamp_us: int) -> "Block":
        txs = tuple(txs)
        return cls(height, prev_hash, txs, timestamp_us, block_hash_of(height, prev_hash, txs, timestamp_us))

    def recompute_hash(self) -> str:
        return block_hash_of(self.height, self.prev_hash, self.txs, self.timestamp_us)

    def encode(self) -> bytes:
        return enc.frame(
            enc.u64(self.height),
            enc.text(self.prev_hash),
            enc.frame_list(tx.encode() for tx in self.txs),
            enc.i64(self.timestamp_us),
            enc.text(self.block_hash),
        )

    @classmethod
    def decode(cls, data: bytes) -> "Block":
        f = enc.unframe(data, 5)
        txs = tuple(Transaction.decode(t) for t in enc.unframe(f[2]))
        return cls(enc.read_u64(f[0]), enc.read_text(f[1]), txs, enc.read_i64(f[3]), enc.read_text(f[4]))


def state_key(tx: Transaction) -> str:
    """World-state key written by ``tx``; the first payload field names the subject."""
    if tx.kind is TxKind.STORE_DATA:
        return tx.tx_id
    first = enc.unframe(tx.payload)
    if not first:
        raise DecodeError("empty payload")
    subject = enc.read_text(first[0])
    if tx.kind in (TxKind.ENROLL_ADMIN, TxKind.REGISTER_USER):
        return subject
    if tx.kind is TxKind.TRUST_UPDATE:
        return "trust/" + subject
    return "validator/" + subject


@dataclass(frozen=True)
class StateEntry:
    value: bytes
    tx_id: str
    height: int


class WorldState:
    """Key/value view derived by replaying every committed transaction in order."""

    def __init__(self) -> None:
        self._entries: dict[str, StateEntry] = {}

    def get(self, key: str) -> bytes | None:
        entry = self._entries.get(key)
        return entry.value if entry is not None else None

    def entry(self, key: str) -> StateEntry | None:
        return self._entries.get(key)

    def keys(self, prefix: str = "") -> list[str]:
        return sorted(k for k in self._entries if k.startswith(prefix))

    def apply(self, block: Block) -> None:
        for tx in block.txs:
            self._entries[state_key(tx)] = StateEntry(tx.payload, tx.tx_id, block.height)

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, WorldState) and self._entries == other._entries

    def to_bytes(self) -> bytes:
        return enc.frame_list(
            enc.frame(enc.text(k), e.value, enc.text(e.tx_id), enc.u64(e.height))
            for k, e in sorted(self._entries.items())
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "WorldState":
        state = cls()
        for item in enc.unframe(data):
            k, v, t, h = enc.unframe(item, 4)
            state._entries[enc.read_text(k)] = StateEntry(v, enc.read_text(t), enc.read_u64(h))
        return state

    @classmethod
    def replay(cls, blocks: Iterable[Block]) -> "WorldState":
        state = cls()
        for block in blocks:
            state.apply(block)
        return state


@dataclass(frozen=True)
class TxRecord:
    tx: Transaction
    height: int
    block_hash: str


def encode_block_log(blocks: Iterable[Block]) -> bytes:
    out = bytearray()
    for block in blocks:
        raw = block.encode()
        out += len(raw).to_bytes(4, "big") + raw
    return bytes(out)


def _parse_log(data: bytes) -> tuple[list[Block], CorruptChain | None]:
    blocks: list[Block] = []
    pos = 0
    while pos < len(data):
        height = len(blocks)
        if pos + 4 > len(data):
            return blocks, CorruptChain(f"truncated length prefix at block {height}", height)
        n = int.from_bytes(data[pos : pos + 4], "big")
        pos += 4
        if pos + n > len(data):
            return blocks, CorruptChain(f"block {height} overruns the log", height)
        try:
            blocks.append(Block.decode(data[pos : pos + n]))
        except DecodeError as exc:
            return blocks, CorruptChain(f"block {height} is malformed: {exc}", height)
        pos += n
    return blocks, None


def read_block_log(data: bytes) -> list[Block]:
    """Parse a block log; structural damage raises CorruptChain at that height."""
    blocks, error = _parse_log(data)
    if error is not None:
        raise error
    return blocks


def first_bad_height(blocks: Sequence[Block], upto: int | None = None) -> int | None:
    """Recompute every hash and link; return the first failing height, else None."""
    prev = ZERO_HASH
    last = len(blocks) - 1 if upto is None else min(upto, len(blocks) - 1)
    seen: set[str] = set()
    for i in range(last + 1):
        block = blocks[i]
        if block.height != i or block.prev_hash != prev or not block.txs:
            return i
        for tx in block.txs:
            if not tx.id_matches() or tx.tx_id in seen:
                return i
            try:
                state_key(tx)
            except DecodeError:
                return i
            seen.add(tx.tx_id)
        if block.recompute_hash() != block.block_hash:
            return i
        prev = block.block_hash
    return None


def verify_log_bytes(data: bytes) -> int | None:
    """Verify a serialized block log without loading it into a Ledger."""
    blocks, error = _parse_log(data)
    bad = first_bad_height(blocks)
    if bad is not None:
        return bad
    return error.height if error is not None else None


class Ledger:
    """The chain plus its derived world state.

    Appends are serialized by a lock; reads only ever observe fully applied
    blocks. When ``log_path`` is set, each committed block is appended to the
    block log immediately, and with ``durable`` the append is fsynced before
    the block becomes visible.
    """

    def __init__(self, log_path: str | os.PathLike | None = None, durable: bool = True):
        self.log_path = Path(log_path) if log_path is not None else None
        self.durable = durable
        self._blocks: list[Block] = []
        self._state = WorldState()
        self._tx_index: dict[str, tuple[int, int]] = {}
        self._lock = threading.RLock()
        self._listeners: list[Callable[[Block], None]] = []

    # -- construction -----------------------------------------------------

    @classmethod
    def from_blocks(cls, blocks: Sequence[Block], log_path=None, state: WorldState | None = None) -> "Ledger":
        bad = first_bad_height(blocks)
        if bad is not None:
            raise CorruptChain(f"chain fails verification at height {bad}", bad)
        ledger = cls(log_path)
        ledger._blocks = list(blocks)
        for block in blocks:
            for i, tx in enumerate(block.txs):
                ledger._tx_index[tx.tx_id] = (block.height, i)
        ledger._state = state if state is not None else WorldState.replay(blocks)
        return ledger

    @classmethod
    def open(cls, log_path: str | os.PathLike, checkpoint_path: str | os.PathLike | None = None) -> "Ledger":
        """Load a block log, using the state checkpoint only if it matches the tip."""
        path = Path(log_path)
        data = path.read_bytes() if path.exists() else b""
        blocks = read_block_log(data)
        state = None
        if checkpoint_path is not None and blocks:
            state = _read_checkpoint(Path(checkpoint_path), blocks[-1].block_hash, len(blocks))
        return cls.from_blocks(blocks, log_path=path, state=state)

    def save_checkpoint(self, path: str | os.PathLike) -> None:
        with self._lock:
            body = enc.frame(enc.text(self.tip_hash), enc.u64(len(self._blocks)), self._state.to_bytes())
        blob = enc.frame(body, hashlib.sha256(body).digest())
        tmp = Path(str(path) + ".tmp")
        tmp.write_bytes(blob)
        os.replace(tmp, path)

    # -- writes -------------------------------------------------------------

    def subscribe(self, callback: Callable[[Block], None]) -> None:
        self._listeners.append(callback)

    def append_block(self, txs: Sequence[Transaction], timestamp_us: int = 0) -> Block:
        if not txs:
            raise EmptyBatch("cannot append an empty batch")
        with self._lock:
            ids = set()
            for tx in txs:
                if tx.tx_id in ids or tx.tx_id in self._tx_index:
                    raise DuplicateTx(f"transaction {tx.tx_id} already on chain")
                if not tx.id_matches():
                    raise InvalidInput(f"transaction {tx.tx_id} does not hash to its id")
                try:
                    state_key(tx)
                except DecodeError as exc:
                    raise InvalidInput(f"transaction {tx.tx_id} has a malformed payload: {exc}") from None
                ids.add(tx.tx_id)
            block = Block.seal(len(self._blocks), self.tip_hash, txs, timestamp_us)
            if self.log_path is not None:
                raw = block.encode()
                with open(self.log_path, "ab") as fh:
                    fh.write(len(raw).to_bytes(4, "big") + raw)
                    if self.durable:
                        fh.flush()
                        os.fsync(fh.fileno())
            self._blocks.append(block)
            for i, tx in enumerate(block.txs):
                self._tx_index[tx.tx_id] = (block.height, i)
            self._state.apply(block)
        for listener in self._listeners:
            listener(block)
        return block

    # -- reads --------------------------------------------------------------

    @property
    def height(self) -> int:
        """Number of committed blocks."""
        return len(self._blocks)

    @property
    def tip_hash(self) -> str:
        return self._blocks[-1].block_hash if self._blocks else ZERO_HASH

    @property
    def blocks(self) -> tuple[Block, ...]:
        return tuple(self._blocks)

    @property
    def state(self) -> WorldState:
        return self._state

    def tx_count(self) -> int:
        return len(self._tx_index)

    def get_state(self, key: str) -> bytes | None:
        with self._lock:
            return self._state.get(key)

    def get_entry(self, key: str) -> StateEntry | None:
        with self._lock:
            return self._state.entry(key)

    def state_keys(self, prefix: str = "") -> list[str]:
        with self._lock:
            return self._state.keys(prefix)

    def has_transaction(self, tx_id: str) -> bool:
        return tx_id in self._tx_index

    def get_transaction(self, tx_id: str) -> TxRecord:
        with self._lock:
            try:
                height, i = self._tx_index[tx_id]
            except KeyError:
                raise NotFound(f"transaction {tx_id} not found") from None
            block = self._blocks[height]
            return TxRecord(block.txs[i], height, block.block_hash)

    def verify_chain(self, upto: int | None = None) -> int | None:
        with self._lock:
            blocks = list(self._blocks)
        return first_bad_height(blocks, upto)

    def to_bytes(self) -> bytes:
        with self._lock:
            return encode_block_log(self._blocks)

    def world_state_bytes(self) -> bytes:
        with self._lock:
            return self._state.to_bytes()


def _read_checkpoint(path: Path, tip_hash: str, n_blocks: int) -> WorldState | None:
    try:
        body, digest = enc.unframe(path.read_bytes(), 2)
        if hashlib.sha256(body).digest() != digest:
            return None
        tip, count, state = enc.unframe(body, 3)
        if enc.read_text(tip) != tip_hash or enc.read_u64(count) != n_blocks:
            return None
        return WorldState.from_bytes(state)
    except (OSError, DecodeError):
        return None


class Sequencer:
    """Single in-process orderer.

    Builds transactions (seeded nonce, clock timestamp) and cuts a block once
    ``max_batch`` transactions are pending or the oldest pending one is
    ``timeout_us`` old, whichever comes first. Timeouts are measured on the
    injected clock so a logical clock keeps batching reproducible.
    """

    def __init__(
        self,
        ledger: Ledger,
        clock,
        rng_seed: int | None = 0,
        max_batch: int = 64,
        timeout_us: int = 500_000,
    ):
        self.ledger = ledger
        self.clock = clock
        self.rng_seed = rng_seed
        self.max_batch = max_batch
        self.timeout_us = timeout_us
        self._pending: list[Transaction] = []
        self._pending_since: int | None = None
        self._counter = 0
        self._counter_tip = ledger.tip_hash
        self._lock = threading.RLock()

    def _nonce(self) -> bytes:
        if self.rng_seed is None:
            return os.urandom(16)
        tip = self.ledger.tip_hash
        if tip != self._counter_tip:
            self._counter_tip = tip
            self._counter = 0
        material = enc.frame(enc.u64(self.rng_seed & (2**64 - 1)), enc.text(tip), enc.u64(self._counter))
        self._counter += 1
        return hashlib.sha256(b"nonce" + material).digest()[:16]

    def build(
        self,
        kind: TxKind,
        payload: bytes,
        submitter: str,
        signature: bytes = b"",
        endorsement: bytes = b"",
    ) -> Transaction:
        with self._lock:
            return Transaction.create(
                kind, payload, submitter, self._nonce(), self.clock.now_micros(), signature, endorsement
            )

    def enqueue(self, tx: Transaction) -> Block | None:
        with self._lock:
            if any(p.tx_id == tx.tx_id for p in self._pending) or self.ledger.has_transaction(tx.tx_id):
                raise DuplicateTx(f"transaction {tx.tx_id} already sequenced")
            self._pending.append(tx)
            if self._pending_since is None:
                self._pending_since = tx.timestamp_us
            return self.maybe_cut()

    def propose(self, kind: TxKind, payload: bytes, submitter: str, signature: bytes = b"",
                endorsement: bytes = b"", flush: bool = False) -> Transaction:
        tx = self.build(kind, payload, submitter, signature, endorsement)
        self.enqueue(tx)
        if flush:
            self.flush()
        return tx

    def maybe_cut(self) -> Block | None:
        with self._lock:
            if not self._pending:
                return None
            full = len(self._pending) >= self.max_batch
            stale = self.clock.now_micros() - self._pending_since >= self.timeout_us
            return self.flush() if full or stale else None

    def flush(self) -> Block | None:
        with self._lock:
            if not self._pending:
                return None
            batch, self._pending = self._pending, []
            self._pending_since = None
            return self.ledger.append_block(batch, self.clock.now_micros())

    @property
    def pending(self) -> tuple[Transaction, ...]:
        return tuple(self._pending)
