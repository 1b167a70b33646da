from __future__ import annotations

import os

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ledgerlane.content_store import ContentStore, compute_cid
from ledgerlane.errors import IntegrityViolation, InvalidInput, NotFound

ABC_CID = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


@pytest.fixture(params=["memory", "disk"])
def store(request, tmp_path):
    return ContentStore.in_memory() if request.param == "memory" else ContentStore(tmp_path / "blobs")


def test_cid_is_sha256(store):
    assert compute_cid(b"abc") == ABC_CID
    assert store.put(b"abc") == ABC_CID
    assert store.get(ABC_CID) == b"abc"


def test_put_deduplicates(store):
    a = store.put(b"same")
    b = store.put(b"same")
    assert a == b
    assert len(store) == 1


def test_empty_blob_is_storable(store):
    cid = store.put(b"")
    assert store.get(cid) == b""


def test_missing_blob_raises_not_found(store):
    with pytest.raises(NotFound):
        store.get("0" * 64)


@pytest.mark.parametrize("cid", ["xyz", "A" * 64, "../" + "0" * 61])
def test_malformed_cid_is_rejected(store, cid):
    with pytest.raises(InvalidInput):
        store.get(cid)


def test_has_and_contains(store):
    cid = store.put(b"x")
    assert store.has(cid) and cid in store
    assert "0" * 64 not in store
    assert "not-a-cid" not in store


def test_disk_layout_is_sharded_by_prefix(tmp_path):
    store = ContentStore(tmp_path)
    cid = store.put(b"abc")
    assert (tmp_path / cid[:2] / cid).read_bytes() == b"abc"
    assert not [p for p in (tmp_path / cid[:2]).iterdir() if p.name.startswith(".tmp")]


def test_tampered_file_raises_integrity_violation(tmp_path):
    store = ContentStore(tmp_path)
    cid = store.put(b"payload")
    path = store.path_for(cid)
    path.write_bytes(b"paylOad")
    with pytest.raises(IntegrityViolation):
        store.get(cid)


def test_inventory_is_rebuilt_on_reopen(tmp_path):
    cids = {ContentStore(tmp_path).put(bytes([i]) * 10) for i in range(5)}
    (tmp_path / "notes.txt").write_text("ignored")
    reopened = ContentStore(tmp_path)
    assert set(reopened.cids()) == cids


def test_deleted_file_is_rewritten_on_put(tmp_path):
    store = ContentStore(tmp_path)
    cid = store.put(b"again")
    os.unlink(store.path_for(cid))
    store.put(b"again")
    assert store.get(cid) == b"again"


def test_non_durable_mode_stores_the_same_bytes(tmp_path):
    store = ContentStore(tmp_path, durable=False)
    assert store.get(store.put(b"fast")) == b"fast"


@given(st.lists(st.binary(max_size=256), max_size=20))
def test_memory_store_roundtrips(blobs):
    store = ContentStore.in_memory()
    cids = [store.put(b) for b in blobs]
    assert [store.get(c) for c in cids] == blobs
    assert len(store) == len(set(blobs))
