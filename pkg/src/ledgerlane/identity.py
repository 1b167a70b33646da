"""Principal registry and signature authentication.

Admins are enrolled with an EnrollAdmin transaction whose world-state key is
the admin id; every other principal is registered by an admin through a
RegisterUser transaction. Submissions are authenticated by verifying an
Ed25519 signature over the 32-byte SHA-256 payload digest.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ed25519

from . import encoding as enc
from .encoding import DecodeError, is_hex_digest
from .errors import (
    AlreadyExists,
    BadSignature,
    EmptyId,
    InvalidId,
    InvalidInput,
    InvalidRole,
    NotAuthorized,
    UnknownPrincipal,
)
from .ledger import Block, Ledger, Sequencer, TxKind

MAX_ID_LENGTH = 128


class Role(str, Enum):
    ADMIN = "Admin"
    TRUSTED_SOURCE = "TrustedSource"
    UNTRUSTED_SOURCE = "UntrustedSource"
    VALIDATOR = "Validator"
    CONSUMER = "Consumer"


REGISTRABLE_ROLES = frozenset(
    {Role.TRUSTED_SOURCE, Role.UNTRUSTED_SOURCE, Role.VALIDATOR, Role.CONSUMER}
)
SOURCE_ROLES = frozenset({Role.TRUSTED_SOURCE, Role.UNTRUSTED_SOURCE})


def check_principal_id(principal_id: str) -> None:
    if not principal_id:
        raise EmptyId("principal id must not be empty")
    if len(principal_id) > MAX_ID_LENGTH:
        raise InvalidId(f"principal id longer than {MAX_ID_LENGTH} characters")
    # '/' is reserved for namespaced state keys, 64-hex for transaction ids.
    if "/" in principal_id or is_hex_digest(principal_id):
        raise InvalidId(f"principal id {principal_id!r} collides with reserved state keys")
    if any(c.isspace() or not c.isprintable() for c in principal_id):
        raise InvalidId(f"principal id {principal_id!r} contains whitespace or control characters")


@dataclass(frozen=True)
class Principal:
    id: str
    role: Role
    public_key: bytes
    enrolled_at_us: int
    enrolled_by: str | None = None

    def encode(self) -> bytes:
        by = None if self.enrolled_by is None else enc.text(self.enrolled_by)
        return enc.frame(
            enc.text(self.id),
            enc.text(self.role.value),
            self.public_key,
            enc.i64(self.enrolled_at_us),
            enc.optional(by),
        )

    @classmethod
    def decode(cls, data: bytes) -> "Principal":
        f = enc.unframe(data, 5)
        by = enc.read_optional(f[4])
        try:
            role = Role(enc.read_text(f[1]))
        except ValueError as exc:
            raise DecodeError(str(exc)) from None
        return cls(
            enc.read_text(f[0]), role, f[2], enc.read_i64(f[3]),
            None if by is None else enc.read_text(by),
        )

    def to_dict(self) -> dict:
        return {
            "enrolled_at": enc.iso_micros(self.enrolled_at_us),
            "enrolled_by": self.enrolled_by,
            "id": self.id,
            "public_key": self.public_key.hex(),
            "role": self.role.value,
        }


@dataclass(frozen=True)
class SignedEnvelope:
    payload_digest: str
    signer: str
    signature: bytes


# -- signature schemes --------------------------------------------------------


class Ed25519Scheme:
    name = "ed25519"

    @staticmethod
    def public_key(seed: bytes) -> bytes:
        key = ed25519.Ed25519PrivateKey.from_private_bytes(seed)
        return key.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )

    @staticmethod
    def sign(seed: bytes, digest: str) -> bytes:
        return ed25519.Ed25519PrivateKey.from_private_bytes(seed).sign(bytes.fromhex(digest))

    @staticmethod
    def verify(public_key: bytes, digest: str, signature: bytes) -> bool:
        try:
            key = ed25519.Ed25519PublicKey.from_public_bytes(public_key)
            key.verify(signature, bytes.fromhex(digest))
        except (InvalidSignature, ValueError):
            return False
        return True


class NullScheme:
    """Test double: the signature is the digest itself, keys are ignored."""

    name = "null"

    @staticmethod
    def public_key(seed: bytes) -> bytes:
        return hashlib.sha256(seed).digest()

    @staticmethod
    def sign(seed: bytes, digest: str) -> bytes:
        return bytes.fromhex(digest)

    @staticmethod
    def verify(public_key: bytes, digest: str, signature: bytes) -> bool:
        return signature == bytes.fromhex(digest)


ED25519 = Ed25519Scheme()
NULL_SCHEME = NullScheme()


class KeyPair:
    """A signing seed bound to a scheme."""

    def __init__(self, seed: bytes, scheme=ED25519):
        if len(seed) != 32:
            raise InvalidInput("signing seed must be 32 bytes")
        self.seed = seed
        self.scheme = scheme
        self.public_key = scheme.public_key(seed)

    @classmethod
    def generate(cls, scheme=ED25519) -> "KeyPair":
        return cls(os.urandom(32), scheme)

    @classmethod
    def derive(cls, label: str, seed: int = 0, scheme=ED25519) -> "KeyPair":
        """Deterministic key for simulated peers and tests."""
        material = hashlib.sha256(enc.frame(b"keypair", enc.u64(seed & (2**64 - 1)), enc.text(label)))
        return cls(material.digest(), scheme)

    def sign_digest(self, digest: str) -> bytes:
        return self.scheme.sign(self.seed, digest)

    def envelope(self, signer: str, digest: str) -> SignedEnvelope:
        return SignedEnvelope(digest, signer, self.sign_digest(digest))


def write_key_files(prefix: str | os.PathLike, keypair: KeyPair) -> tuple[Path, Path]:
    """Write ``<prefix>.seed`` and ``<prefix>.pub`` as hex, one key per file."""
    seed_path = Path(f"{prefix}.seed")
    pub_path = Path(f"{prefix}.pub")
    seed_path.parent.mkdir(parents=True, exist_ok=True)
    seed_path.write_text(keypair.seed.hex() + "\n")
    os.chmod(seed_path, 0o600)
    pub_path.write_text(keypair.public_key.hex() + "\n")
    return seed_path, pub_path


def _read_hex_key(path: str | os.PathLike) -> bytes:
    raw = Path(path).read_text().strip()
    try:
        key = bytes.fromhex(raw)
    except ValueError:
        raise InvalidInput(f"{path}: key file is not hex") from None
    if len(key) != 32:
        raise InvalidInput(f"{path}: expected 32 key bytes, found {len(key)}")
    return key


def load_keypair(path: str | os.PathLike, scheme=ED25519) -> KeyPair:
    return KeyPair(_read_hex_key(path), scheme)


def load_public_key(path: str | os.PathLike) -> bytes:
    return _read_hex_key(path)


# -- request digests ------------------------------------------------------------


def enrollment_digest(admin_id: str, public_key: bytes) -> str:
    return enc.sha256_hex(enc.frame(b"EnrollAdmin", enc.text(admin_id), public_key))


def registration_digest(user_id: str, role: Role, public_key: bytes) -> str:
    return enc.sha256_hex(enc.frame(b"RegisterUser", enc.text(user_id), enc.text(role.value), public_key))


class Registry:
    """Principals as recorded in the committed world state."""

    def __init__(self, ledger: Ledger, sequencer: Sequencer | None = None, scheme=ED25519):
        self.ledger = ledger
        self.sequencer = sequencer
        self.scheme = scheme
        self._ids: set[str] = set()
        self._cache: dict[str, tuple[str, Principal]] = {}
        for block in ledger.blocks:
            self._on_block(block)
        ledger.subscribe(self._on_block)

    def _on_block(self, block: Block) -> None:
        for tx in block.txs:
            if tx.kind in (TxKind.ENROLL_ADMIN, TxKind.REGISTER_USER):
                self._ids.add(enc.read_text(enc.unframe(tx.payload)[0]))

    def principal(self, principal_id: str) -> Principal | None:
        if principal_id not in self._ids:
            return None
        entry = self.ledger.get_entry(principal_id)
        if entry is None:
            return None
        cached = self._cache.get(principal_id)
        if cached is not None and cached[0] == entry.tx_id:
            return cached[1]
        p = Principal.decode(entry.value)
        self._cache[principal_id] = (entry.tx_id, p)
        return p

    def get(self, principal_id: str) -> Principal:
        p = self.principal(principal_id)
        if p is None:
            raise UnknownPrincipal(f"Unknown principal {principal_id}")
        return p

    def principals(self) -> list[Principal]:
        return [self.get(i) for i in sorted(self._ids)]

    def admin_exists(self, admin_id: str) -> bool:
        p = self.principal(admin_id)
        return p is not None and p.role is Role.ADMIN

    def has_admin(self) -> bool:
        return any(p.role is Role.ADMIN for p in self.principals())

    def authenticate(self, envelope: SignedEnvelope) -> Principal:
        p = self.principal(envelope.signer)
        if p is None:
            raise UnknownPrincipal(f"Unknown principal {envelope.signer}")
        if not is_hex_digest(envelope.payload_digest) or not self.scheme.verify(
            p.public_key, envelope.payload_digest, envelope.signature
        ):
            raise BadSignature(f"signature by {envelope.signer} does not verify")
        return p

    def _authorize_admin(self, envelope: SignedEnvelope | None, expected_digest: str) -> Principal:
        if envelope is None:
            raise NotAuthorized("an admin signature is required")
        try:
            signer = self.authenticate(envelope)
        except (UnknownPrincipal, BadSignature) as exc:
            raise NotAuthorized(str(exc)) from None
        if signer.role is not Role.ADMIN:
            raise NotAuthorized(f"{signer.id} is not an admin")
        if envelope.payload_digest != expected_digest:
            raise NotAuthorized("admin signature covers a different request")
        return signer

    def _require_sequencer(self) -> Sequencer:
        if self.sequencer is None:
            raise NotAuthorized("registry is read-only")
        return self.sequencer

    def enroll_admin(
        self,
        admin_id: str,
        public_key: bytes = b"",
        caller: SignedEnvelope | None = None,
    ) -> str:
        """Enroll an admin; the very first admin needs no authorization."""
        check_principal_id(admin_id)
        if self.principal(admin_id) is not None:
            raise AlreadyExists(f"Admin {admin_id} already exists")
        sequencer = self._require_sequencer()
        enrolled_by = None
        signature = b""
        submitter = admin_id
        if self.has_admin():
            signer = self._authorize_admin(caller, enrollment_digest(admin_id, public_key))
            enrolled_by = submitter = signer.id
            signature = caller.signature
        admin = Principal(admin_id, Role.ADMIN, public_key, sequencer.clock.now_micros(), enrolled_by)
        sequencer.propose(TxKind.ENROLL_ADMIN, admin.encode(), submitter, signature, flush=True)
        return f"Admin {admin_id} enrolled successfully"

    def register_user(self, admin: SignedEnvelope, user_id: str, role: Role | str, public_key: bytes) -> str:
        try:
            role = Role(role)
        except ValueError:
            raise InvalidRole(f"unknown role {role!r}") from None
        if role not in REGISTRABLE_ROLES:
            raise InvalidRole(f"role {role.value} cannot be registered; use enroll_admin")
        check_principal_id(user_id)
        signer = self._authorize_admin(admin, registration_digest(user_id, role, public_key))
        if self.principal(user_id) is not None:
            raise AlreadyExists(f"Principal {user_id} already exists")
        sequencer = self._require_sequencer()
        user = Principal(user_id, role, public_key, sequencer.clock.now_micros(), signer.id)
        sequencer.propose(TxKind.REGISTER_USER, user.encode(), signer.id, admin.signature, flush=True)
        return f"User {user_id} registered as {role.value}"
