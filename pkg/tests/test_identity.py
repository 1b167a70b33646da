from __future__ import annotations

import pytest

from ledgerlane.encoding import LogicalClock
from ledgerlane.errors import (
    AlreadyExists,
    EmptyId,
    InvalidId,
    InvalidRole,
    NotAuthorized,
    UnknownPrincipal,
    BadSignature,
)
from ledgerlane.identity import (
    ED25519,
    NULL_SCHEME,
    KeyPair,
    Principal,
    Registry,
    Role,
    SignedEnvelope,
    enrollment_digest,
    load_keypair,
    load_public_key,
    registration_digest,
    write_key_files,
)
from ledgerlane.ledger import Ledger, Sequencer

# RFC 8032, section 7.1, test 1.
RFC_SEED = bytes.fromhex("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60")
RFC_PUBLIC = bytes.fromhex("d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a")
RFC_SIG_EMPTY = bytes.fromhex(
    "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e06522490155"
    "5fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b"
)


def test_ed25519_matches_rfc8032_vector():
    key = KeyPair(RFC_SEED)
    assert key.public_key == RFC_PUBLIC
    assert key.sign_digest("") == RFC_SIG_EMPTY
    assert ED25519.verify(RFC_PUBLIC, "", RFC_SIG_EMPTY)
    assert not ED25519.verify(RFC_PUBLIC, "00", RFC_SIG_EMPTY)


def test_derived_keys_are_stable_and_distinct():
    assert KeyPair.derive("a", 1).public_key == KeyPair.derive("a", 1).public_key
    assert KeyPair.derive("a", 1).public_key != KeyPair.derive("a", 2).public_key
    assert KeyPair.derive("a", 1).public_key != KeyPair.derive("b", 1).public_key


def test_key_files_roundtrip(tmp_path):
    key = KeyPair.generate()
    seed_path, pub_path = write_key_files(tmp_path / "k" / "alice", key)
    assert load_keypair(seed_path).public_key == key.public_key
    assert load_public_key(pub_path) == key.public_key
    assert seed_path.stat().st_mode & 0o777 == 0o600


def test_principal_roundtrip():
    p = Principal("cam", Role.TRUSTED_SOURCE, b"k" * 32, 12, "admin")
    assert Principal.decode(p.encode()) == p


@pytest.fixture
def registry():
    ledger = Ledger()
    return Registry(ledger, Sequencer(ledger, LogicalClock()))


ADMIN_KEY = KeyPair.derive("admin")


def _enroll(registry, admin="root"):
    return registry.enroll_admin(admin, ADMIN_KEY.public_key)


def test_first_admin_needs_no_authorization(registry):
    assert _enroll(registry) == "Admin root enrolled successfully"
    assert registry.get("root").role is Role.ADMIN
    assert registry.has_admin() and registry.admin_exists("root")


def test_duplicate_admin_message_is_exact(registry):
    _enroll(registry)
    with pytest.raises(AlreadyExists) as err:
        _enroll(registry)
    assert str(err.value) == "Admin root already exists"


def test_second_admin_needs_an_admin_signature(registry):
    _enroll(registry)
    other = KeyPair.derive("other")
    with pytest.raises(NotAuthorized):
        registry.enroll_admin("second", other.public_key)
    forged = other.envelope("root", enrollment_digest("second", other.public_key))
    with pytest.raises(NotAuthorized):
        registry.enroll_admin("second", other.public_key, forged)
    good = ADMIN_KEY.envelope("root", enrollment_digest("second", other.public_key))
    registry.enroll_admin("second", other.public_key, good)
    assert registry.get("second").enrolled_by == "root"


def _register(registry, user="cam", role=Role.TRUSTED_SOURCE, signer="root", key=ADMIN_KEY, pk=b"p" * 32):
    return registry.register_user(key.envelope(signer, registration_digest(user, Role(role), pk)), user, role, pk)


def test_register_user(registry):
    _enroll(registry)
    assert _register(registry) == "User cam registered as TrustedSource"
    assert registry.get("cam").role is Role.TRUSTED_SOURCE
    with pytest.raises(AlreadyExists):
        _register(registry)


def test_register_requires_admin_signer(registry):
    _enroll(registry)
    cam_key = KeyPair.derive("cam")
    _register(registry, pk=cam_key.public_key)
    with pytest.raises(NotAuthorized):
        _register(registry, user="x", signer="cam", key=cam_key)
    with pytest.raises(NotAuthorized):
        _register(registry, user="x", key=KeyPair.derive("mallory"))


def test_signature_must_cover_the_request(registry):
    _enroll(registry)
    env = ADMIN_KEY.envelope("root", registration_digest("someone-else", Role.CONSUMER, b""))
    with pytest.raises(NotAuthorized):
        registry.register_user(env, "cam", Role.CONSUMER, b"")


@pytest.mark.parametrize("role", ["Admin", "Superuser"])
def test_invalid_roles(registry, role):
    _enroll(registry)
    env = SignedEnvelope("0" * 64, "root", b"")
    with pytest.raises(InvalidRole):
        registry.register_user(env, "cam", role, b"")


@pytest.mark.parametrize(
    "bad, error",
    [("", EmptyId), ("a/b", InvalidId), ("a" * 64, InvalidId), ("has space", InvalidId),
     ("tab\t", InvalidId), ("x" * 129, InvalidId)],
)
def test_invalid_ids(registry, bad, error):
    with pytest.raises(error):
        registry.enroll_admin(bad)


def test_authenticate(registry):
    _enroll(registry)
    digest = "ab" * 32
    assert registry.authenticate(ADMIN_KEY.envelope("root", digest)).id == "root"
    with pytest.raises(BadSignature):
        registry.authenticate(SignedEnvelope(digest, "root", b"\x00" * 64))
    with pytest.raises(UnknownPrincipal):
        registry.authenticate(SignedEnvelope(digest, "ghost", b""))


def test_registry_rebuilds_from_chain(registry):
    _enroll(registry)
    _register(registry)
    fresh = Registry(registry.ledger)
    assert [p.id for p in fresh.principals()] == ["cam", "root"]


def test_null_scheme_signature_is_the_digest():
    key = KeyPair.derive("x", scheme=NULL_SCHEME)
    assert key.sign_digest("ab" * 32) == bytes.fromhex("ab" * 32)
    assert NULL_SCHEME.verify(b"", "ab" * 32, bytes.fromhex("ab" * 32))
