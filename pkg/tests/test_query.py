from __future__ import annotations

from datetime import datetime, timezone

import pytest

from conftest import TRUSTED, UNTRUSTED, envelope, record
from ledgerlane.errors import IntegrityViolation, MalformedQuery, NotFound
from ledgerlane.query import DataRecord, GeoBox, Query

UTC = timezone.utc


@pytest.fixture
def populated(mem_node):
    docs = [
        record(timestamp="2024-07-10T05:55:46.304199Z"),
        record(label="car", confidence=0.9, timestamp="2024-07-10T05:55:47Z"),
        record(label="car", confidence=0.2, timestamp="2024-07-10T06:30:00Z", location__latitude=41.0),
        record(label="bus", timestamp="2024-07-10T05:50:00Z"),
    ]
    receipts = [mem_node.submit(envelope(mem_node, data=f"blob{i}".encode(), metadata=d))
                for i, d in enumerate(docs)]
    receipts.append(mem_node.submit(envelope(mem_node, UNTRUSTED, b"u", record(label="car"))))
    mem_node.flush()
    assert all(r.accepted for r in receipts)
    return mem_node, [r.tx_id for r in receipts]


def labels(results):
    return [r.metadata.label for r in results]


def test_results_are_time_ordered(populated):
    node, _ = populated
    stamps = [r.metadata.instant_ns for r in node.query_metadata(Query())]
    assert stamps == sorted(stamps) and len(stamps) == 5


def test_label_and_confidence_filters(populated):
    node, _ = populated
    assert len(node.query_metadata(Query(label="car"))) == 3
    assert [r.metadata.confidence for r in node.query_metadata(Query(label="car", min_confidence=0.5))] == [0.9]


def test_time_range_is_inclusive(populated):
    node, _ = populated
    start = datetime(2024, 7, 10, 5, 55, 46, 304199, tzinfo=UTC)
    end = datetime(2024, 7, 10, 5, 55, 47, tzinfo=UTC)
    results = node.query_metadata(Query(time_range=(start, end)))
    assert sorted(labels(results)) == ["car", "car", "truck"]
    # Equal timestamps fall back to tx_id order.
    assert results[0].tx_id < results[1].tx_id
    assert results[2].metadata.confidence == 0.9


def test_geo_box(populated):
    node, _ = populated
    box = GeoBox(40.9, 41.1, -75, -73)
    assert [r.metadata.confidence for r in node.query_metadata(Query(geo_box=box))] == [0.2]


def test_source_filter(populated):
    node, tx_ids = populated
    results = node.query_metadata(Query(source=UNTRUSTED))
    assert [r.tx_id for r in results] == [tx_ids[-1]]
    assert results[0].trust_at_commit == pytest.approx(0.65)


@pytest.mark.parametrize(
    "query",
    [
        Query(min_confidence=1.2),
        Query(time_range=(datetime(2024, 1, 2, tzinfo=UTC), datetime(2024, 1, 1, tzinfo=UTC))),
        Query(time_range=(datetime(2024, 1, 1), datetime(2024, 1, 2))),
        Query(geo_box=GeoBox(10, 0, 0, 1)),
    ],
)
def test_malformed_queries(mem_node, query):
    with pytest.raises(MalformedQuery):
        mem_node.query_metadata(query)


def test_fetch_data_roundtrip(populated):
    node, tx_ids = populated
    meta, blob = node.fetch_data(tx_ids[0])
    assert blob == b"blob0"
    assert meta.confidence == 0.41042160987854004


@pytest.mark.parametrize("tx_id", ["0" * 64, "nonsense"])
def test_unknown_tx_message(mem_node, tx_id):
    with pytest.raises(NotFound) as err:
        mem_node.fetch_data(tx_id)
    assert str(err.value) == f"No metadata found for transaction ID {tx_id}"


def test_non_data_tx_has_no_metadata(mem_node):
    admin_tx = mem_node.ledger.blocks[0].txs[0].tx_id
    with pytest.raises(NotFound):
        mem_node.fetch_data(admin_tx)


def test_provenance_report(populated):
    node, tx_ids = populated
    report = node.provenance_of(tx_ids[0])
    assert report.submitter == TRUSTED
    assert report.decision.accepted and report.decision.approvals == 4
    assert report.chain_verified
    assert report.to_dict()["submitter_role"] == "TrustedSource"


def test_tampered_blob_is_reported(disk_node):
    receipt = disk_node.submit(envelope(disk_node, data=b"original"))
    disk_node.flush()
    disk_node.store.path_for(receipt.cid).write_bytes(b"originaL")
    with pytest.raises(IntegrityViolation):
        disk_node.fetch_data(receipt.tx_id)
    assert not disk_node.provenance_of(receipt.tx_id).chain_verified


def test_data_record_roundtrip():
    rec = DataRecord("s", "a" * 64, "a" * 64, "{}", 12, 0.5, 0.5, "b" * 64, True)
    assert DataRecord.decode(rec.encode()) == rec
    bare = DataRecord("s", "a" * 64, "a" * 64, "{}", 12, 1.0)
    assert DataRecord.decode(bare.encode()) == bare


def test_indexes_rebuild_from_chain(populated):
    from ledgerlane.query import QueryEngine

    node, _ = populated
    rebuilt = QueryEngine(node.ledger, node.store, node.registry)
    assert [r.to_json() for r in rebuilt.query_metadata(Query())] == [
        r.to_json() for r in node.query_metadata(Query())
    ]
