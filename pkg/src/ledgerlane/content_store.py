"""Content-addressed blob store.

Blobs are named by the hex SHA-256 of their bytes and laid out on disk as
``<root>/<first two hex chars>/<digest>``. There is no index file: the
inventory is rebuilt by scanning the shard directories. Every read re-hashes
the bytes, so out-of-band tampering surfaces as :class:`IntegrityViolation`.
"""

from __future__ import annotations

import hashlib
import os
import threading
from pathlib import Path
from typing import Iterator

from .encoding import is_hex_digest
from .errors import IntegrityViolation, InvalidInput, NotFound, StorageUnavailable

MAX_BLOB_BYTES = 2**31 - 1


def compute_cid(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _check_cid(cid: str) -> None:
    if not is_hex_digest(cid):
        raise InvalidInput(f"malformed cid {cid!r}")


def _fsync_dir(path: Path) -> None:
    fd = os.open(path, os.O_RDONLY)
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


class ContentStore:
    """Deduplicating blob store, on disk or (``root=None``) in memory.

    With ``durable`` set, a put returns only after the blob and its directory
    entry have reached stable storage.
    """

    def __init__(self, root: str | os.PathLike | None = None, durable: bool = True):
        self.root = Path(root) if root is not None else None
        self.durable = durable
        self._lock = threading.Lock()
        self._blobs: dict[str, bytes] = {}
        self._inventory: set[str] = set()
        self._shards: set[str] = set()
        if self.root is not None:
            try:
                self.root.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise StorageUnavailable(f"cannot create store at {self.root}: {exc}") from exc
            self._inventory = set(self._scan())

    @classmethod
    def in_memory(cls) -> "ContentStore":
        return cls(None)

    def _scan(self) -> Iterator[str]:
        for shard in sorted(self.root.iterdir()):
            if not shard.is_dir() or len(shard.name) != 2:
                continue
            for entry in sorted(shard.iterdir()):
                if is_hex_digest(entry.name) and entry.name[:2] == shard.name:
                    yield entry.name

    def path_for(self, cid: str) -> Path:
        if self.root is None:
            raise InvalidInput("in-memory store has no paths")
        return self.root / cid[:2] / cid

    def put(self, data: bytes) -> str:
        data = bytes(data)
        if len(data) > MAX_BLOB_BYTES:
            raise InvalidInput(f"blob of {len(data)} bytes exceeds {MAX_BLOB_BYTES}")
        cid = compute_cid(data)
        if self.root is None:
            with self._lock:
                self._blobs.setdefault(cid, data)
                self._inventory.add(cid)
            return cid

        path = self.path_for(cid)
        if path.exists():
            with self._lock:
                self._inventory.add(cid)
            return cid
        shard = path.parent
        # Unique per writer, so concurrent puts of one blob never share a temp file.
        tmp = shard / f".tmp-{cid}-{os.getpid()}-{threading.get_ident()}"
        try:
            if cid[:2] not in self._shards:
                shard.mkdir(exist_ok=True)
                self._shards.add(cid[:2])
            fd = os.open(tmp, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o644)
            try:
                view = memoryview(data)
                while view:
                    view = view[os.write(fd, view):]
                if self.durable:
                    os.fsync(fd)
            finally:
                os.close(fd)
            os.replace(tmp, path)
            if self.durable:
                _fsync_dir(shard)
        except OSError as exc:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise StorageUnavailable(f"write of {cid} failed: {exc}") from exc
        with self._lock:
            self._inventory.add(cid)
        return cid

    def get(self, cid: str) -> bytes:
        _check_cid(cid)
        if self.root is None:
            try:
                data = self._blobs[cid]
            except KeyError:
                raise NotFound(f"no blob stored under {cid}") from None
        else:
            try:
                data = self.path_for(cid).read_bytes()
            except FileNotFoundError:
                raise NotFound(f"no blob stored under {cid}") from None
            except OSError as exc:
                raise StorageUnavailable(f"read of {cid} failed: {exc}") from exc
        if compute_cid(data) != cid:
            raise IntegrityViolation(f"stored bytes for {cid} no longer match their digest")
        return data

    def has(self, cid: str) -> bool:
        _check_cid(cid)
        if self.root is None:
            return cid in self._blobs
        return self.path_for(cid).is_file()

    def cids(self) -> list[str]:
        with self._lock:
            return sorted(self._inventory)

    def __len__(self) -> int:
        return len(self._inventory)

    def __contains__(self, cid: object) -> bool:
        return isinstance(cid, str) and is_hex_digest(cid) and self.has(cid)
