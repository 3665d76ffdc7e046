from __future__ import annotations

import hashlib
import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dhin.storage import BlobStore, Cid, NotFound


@given(st.binary(max_size=256))
def test_cid_is_sha256(blob):
    store = BlobStore()
    cid = store.put(blob)
    assert cid.digest == hashlib.sha256(blob).digest()
    assert store.get(cid) == blob


def test_put_is_idempotent():
    store = BlobStore()
    assert store.put(b"x") == store.put(b"x")
    assert len(store) == 1


def test_missing_blob():
    with pytest.raises(NotFound):
        BlobStore().get(Cid.of(b"nothing"))


def test_cid_text_roundtrip():
    cid = Cid.of(b"abc")
    assert Cid.parse(str(cid)) == cid


def test_items_sorted_by_cid():
    store = BlobStore()
    for i in range(20):
        store.put(bytes([i]))
    cids = [c for c, _ in store.items()]
    assert cids == sorted(cids)


def test_concurrent_puts():
    store = BlobStore()

    def work(k):
        for i in range(200):
            store.put(f"{k}-{i % 50}".encode())

    threads = [threading.Thread(target=work, args=(k,)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(store) == 200
