from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import SAMPLE_TEXT, record, sample
from ledgerlane.encoding import LogicalClock
from ledgerlane.errors import ParseError, SchemaError
from ledgerlane.identity import KeyPair, Registry, Role, registration_digest
from ledgerlane.ledger import Ledger, Sequencer
from ledgerlane.validation import (
    FailureReason,
    MetadataRecord,
    SubmissionEnvelope,
    canonical_json,
    ingest_metadata_file,
    parse_metadata,
    parse_timestamp_ns,
    validate_transaction,
    verify_schema,
)

SAMPLE_CONFIDENCE = 0.41042160987854004


def test_sample_record_parses_with_full_precision():
    rec = parse_metadata(SAMPLE_TEXT)
    assert rec.label == "truck"
    assert rec.confidence == SAMPLE_CONFIDENCE
    assert repr(rec.confidence) == "0.41042160987854004"
    assert (rec.bounding_box.x1, rec.bounding_box.y2) == (755, 506)
    assert rec.location.longitude == -74.00629823104597


def test_canonical_form_is_stable():
    rec = parse_metadata(SAMPLE_TEXT)
    text = rec.to_json()
    assert '"confidence":0.41042160987854004' in text
    assert parse_metadata(text).to_json() == text
    assert text == canonical_json(json.loads(SAMPLE_TEXT))


def test_ingest_file(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(SAMPLE_TEXT)
    assert ingest_metadata_file(path) == parse_metadata(SAMPLE_TEXT)


def test_sample_record_has_no_schema_issues():
    assert verify_schema(sample()) == []


@pytest.mark.parametrize(
    "doc, field, kind",
    [
        (record(confidence=1.5), "confidence", "range"),
        (record(confidence=True), "confidence", "type"),
        (record(label=""), "label", "range"),
        (record(location__latitude=91.0), "location.latitude", "range"),
        (record(location__longitude="x"), "location.longitude", "type"),
        (record(bounding_box__x2=700), "bounding_box.x2", "range"),
        (record(bounding_box__y1=1.5), "bounding_box.y1", "type"),
        (record(timestamp="2024-07-10 05:55:46"), "timestamp", "range"),
        (record(extra=1), "extra", "unknown"),
    ],
)
def test_schema_issues(doc, field, kind):
    issues = verify_schema(doc)
    assert any(i.field == field and i.kind == kind for i in issues), issues


def test_missing_field_is_reported():
    doc = sample()
    del doc["color"]
    assert [(i.field, i.kind) for i in verify_schema(doc)] == [("color", "missing")]


def test_non_object_is_a_type_issue():
    assert verify_schema([1, 2])[0].kind == "type"


def test_confidence_string_is_parse_error_on_that_key():
    with pytest.raises(ParseError) as err:
        parse_metadata(json.dumps(record(confidence="high")))
    assert err.value.key == "confidence"


@pytest.mark.parametrize("doc", ["", "   ", "{not json", '{"label": NaN}', '{"a": 1, "a": 2}'])
def test_undecodable_documents(doc):
    with pytest.raises(ParseError):
        parse_metadata(doc)


def test_range_violation_is_schema_error():
    with pytest.raises(SchemaError) as err:
        parse_metadata(json.dumps(record(confidence=-0.1)))
    assert [i.field for i in err.value.issues] == ["confidence"]


def test_timestamp_precision():
    assert parse_timestamp_ns("2024-07-10T05:55:46.304199Z") % 1_000_000_000 == 304_199_000
    assert parse_timestamp_ns("2024-07-10T05:55:46.123456789Z") % 1_000_000_000 == 123_456_789
    assert parse_timestamp_ns("2024-07-10T05:55:46Z") % 1_000_000_000 == 0
    with pytest.raises(ValueError):
        parse_timestamp_ns("2024-02-30T00:00:00Z")


labels = st.text(alphabet=st.characters(min_codepoint=33, max_codepoint=0x2FF), min_size=1, max_size=12)


@given(
    label=labels,
    confidence=st.floats(min_value=0, max_value=1),
    lat=st.floats(min_value=-90, max_value=90),
    lon=st.floats(min_value=-180, max_value=180),
    x1=st.integers(0, 5000),
    w=st.integers(1, 5000),
)
def test_valid_records_roundtrip_bit_exact(label, confidence, lat, lon, x1, w):
    doc = record(label=label, confidence=confidence, location__latitude=lat, location__longitude=lon,
                 bounding_box__x1=x1, bounding_box__x2=x1 + w)
    rec = parse_metadata(json.dumps(doc))
    again = parse_metadata(rec.to_json())
    assert again == rec
    assert again.to_json() == rec.to_json()


# -- contract checks ------------------------------------------------------------------


@pytest.fixture
def registry():
    ledger = Ledger()
    reg = Registry(ledger, Sequencer(ledger, LogicalClock()))
    admin = KeyPair.derive("root")
    reg.enroll_admin("root", admin.public_key)
    for user, role in (("cam", Role.TRUSTED_SOURCE), ("viewer", Role.CONSUMER)):
        pk = KeyPair.derive(user).public_key
        reg.register_user(admin.envelope("root", registration_digest(user, role, pk)), user, role, pk)
    return reg


TX = "ab" * 32


def test_valid_submission(registry):
    env = SubmissionEnvelope.build(b"data", sample(), "cam", KeyPair.derive("cam"))
    assert validate_transaction(TX, env, registry).valid


def test_invalid_source_message(registry):
    env = SubmissionEnvelope.build(b"data", sample(), "cam", KeyPair.derive("impostor"))
    verdict = validate_transaction(TX, env, registry)
    assert verdict.failure_reason is FailureReason.INVALID_SOURCE
    assert verdict.detail == f"Invalid source for transaction {TX}"


@pytest.mark.parametrize("who", ["viewer", "nobody"])
def test_non_source_roles_are_invalid_sources(registry, who):
    env = SubmissionEnvelope.build(b"data", sample(), who, KeyPair.derive(who))
    assert validate_transaction(TX, env, registry).failure_reason is FailureReason.INVALID_SOURCE


def test_invalid_schema_message(registry):
    env = SubmissionEnvelope.build(b"data", record(confidence=2.0), "cam", KeyPair.derive("cam"))
    verdict = validate_transaction(TX, env, registry)
    assert verdict.detail == f"Invalid schema for transaction {TX}"
    assert verdict.issues[0].field == "confidence"


def test_hash_mismatch_message(registry):
    env = SubmissionEnvelope.build(b"data", sample(), "cam", KeyPair.derive("cam"))
    swapped = SubmissionEnvelope(b"other", env.claimed_digest, env.metadata, env.source, env.signature)
    verdict = validate_transaction(TX, swapped, registry)
    assert verdict.failure_reason is FailureReason.HASH_MISMATCH
    assert verdict.detail == f"Hash mismatch for transaction {TX}"


def test_metadata_record_accepted_by_envelope(registry):
    rec = MetadataRecord.from_mapping(sample())
    env = SubmissionEnvelope.build(b"d", rec, "cam", KeyPair.derive("cam"))
    assert env.metadata == sample()
    assert validate_transaction(TX, env, registry).valid
