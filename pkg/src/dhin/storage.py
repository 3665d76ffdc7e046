"""Content-addressed off-chain blob store (IPFS stand-in)."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Iterator

from dhin import codec


class NotFound(KeyError):
    pass


@dataclass(frozen=True, order=True)
class Cid:
    digest: bytes

    def __post_init__(self):
        if len(self.digest) != 32:
            raise ValueError("Cid digest must be 32 bytes")

    def __str__(self) -> str:
        return self.digest.hex()

    def __repr__(self) -> str:
        return f"Cid({self.digest.hex()[:12]}…)"

    @classmethod
    def parse(cls, text: str) -> Cid:
        raw = bytes.fromhex(text)
        return cls(raw)

    @classmethod
    def of(cls, blob: bytes) -> Cid:
        return cls(codec.digest(blob))

    def canonical(self):
        return self.digest


class BlobStore:
    def __init__(self) -> None:
        self._blobs: dict[Cid, bytes] = {}
        self._lock = threading.Lock()

    def put(self, blob: bytes) -> Cid:
        cid = Cid.of(blob)
        with self._lock:
            self._blobs.setdefault(cid, bytes(blob))
        return cid

    def get(self, cid: Cid) -> bytes:
        try:
            return self._blobs[cid]
        except KeyError:
            raise NotFound(str(cid)) from None

    def __contains__(self, cid: Cid) -> bool:
        return cid in self._blobs

    def __len__(self) -> int:
        return len(self._blobs)

    def items(self) -> Iterator[tuple[Cid, bytes]]:
        for cid in sorted(self._blobs):
            yield cid, self._blobs[cid]


def put(store: BlobStore, blob: bytes) -> Cid:
    return store.put(blob)


def get(store: BlobStore, cid: Cid) -> bytes:
    return store.get(cid)
