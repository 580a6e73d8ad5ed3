"""Version manager: assigns versions, publishes them in order, owns branches.

All state lives behind one condition variable, which makes every operation
atomic with respect to the others; ``wait_published`` parks on the condition
without holding the lock.
"""

from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .core import is_pow2, new_id, pages_for_size, root_cover
from .errors import (
    BadPsize,
    NotPublished,
    OffsetBeyondEnd,
    Timeout,
    UnknownBlob,
    UnknownVersion,
)

MAX_PSIZE = 8 * 1024 * 1024


class UpdateKind(enum.IntEnum):
    WRITE = 0
    APPEND = 1


@dataclass
class VersionRecord:
    blob: bytes
    v: int
    offset: int
    size: int
    snapshot_size: int
    published: bool = False
    notified: bool = False


class ConcurrentUpdate(NamedTuple):
    w: int
    offset: int
    size: int
    root_pages: int


class WriteTicket(NamedTuple):
    vw: int
    effective_offset: int
    prev_size: int
    vp: int
    vp_size: int
    concurrent: tuple[ConcurrentUpdate, ...]
    size: int

    @property
    def new_size(self) -> int:
        return max(self.prev_size, self.effective_offset + self.size)


class BlobInfo(NamedTuple):
    psize: int
    # (blob, fork_version) pairs from the immediate parent up to the root blob.
    ancestry: tuple[tuple[bytes, int], ...]


@dataclass
class _Blob:
    id: bytes
    psize: int
    parent: Optional[bytes] = None
    fork: int = 0
    last_assigned: int = 0
    last_published: int = 0
    records: dict[int, VersionRecord] = field(default_factory=dict)


class VersionManager:
    def __init__(self):
        self._blobs: dict[bytes, _Blob] = {}
        self._cond = threading.Condition()

    # -- helpers (caller holds the lock) -----------------------------------

    def _blob(self, blob: bytes) -> _Blob:
        try:
            return self._blobs[blob]
        except KeyError:
            raise UnknownBlob(f"unknown blob {blob.hex()}") from None

    def _owner(self, b: _Blob, v: int) -> _Blob:
        while b.parent is not None and v <= b.fork:
            b = self._blobs[b.parent]
        return b

    def _size(self, b: _Blob, v: int) -> int:
        b = self._owner(b, v)
        if v == 0:
            return 0
        return b.records[v].snapshot_size

    def _published(self, b: _Blob, v: int) -> bool:
        return v <= b.last_published

    # -- operations ----------------------------------------------------------

    def create_blob(self, psize: int) -> bytes:
        if not is_pow2(psize) or psize > MAX_PSIZE:
            raise BadPsize(f"page size must be a power of two <= {MAX_PSIZE}, got {psize}")
        with self._cond:
            bid = new_id()
            self._blobs[bid] = _Blob(bid, psize)
            return bid

    def blob_info(self, blob: bytes) -> BlobInfo:
        with self._cond:
            b = self._blob(blob)
            chain = []
            while b.parent is not None:
                chain.append((b.parent, b.fork))
                b = self._blobs[b.parent]
            return BlobInfo(b.psize, tuple(chain))

    def assign_version(self, blob: bytes, kind: UpdateKind, offset: Optional[int], size: int) -> WriteTicket:
        if size < 1:
            raise ValueError("update size must be >= 1")
        with self._cond:
            b = self._blob(blob)
            vw = b.last_assigned + 1
            prev_size = self._size(b, vw - 1)
            if kind == UpdateKind.APPEND:
                offset = prev_size
            elif offset is None:
                raise ValueError("WRITE needs an offset")
            elif offset > prev_size:
                raise OffsetBeyondEnd(f"offset {offset} beyond snapshot size {prev_size} of version {vw - 1}")
            snap = max(prev_size, offset + size)
            b.records[vw] = VersionRecord(blob, vw, offset, size, snap)
            b.last_assigned = vw
            vp = b.last_published
            concurrent = tuple(
                ConcurrentUpdate(
                    w,
                    b.records[w].offset,
                    b.records[w].size,
                    root_cover(pages_for_size(b.records[w].snapshot_size, b.psize)),
                )
                for w in range(vp + 1, vw)
            )
            return WriteTicket(vw, offset, prev_size, vp, self._size(b, vp), concurrent, size)

    def notify_success(self, blob: bytes, v: int) -> None:
        with self._cond:
            b = self._blob(blob)
            rec = b.records.get(v)
            if rec is None or rec.notified:
                raise UnknownVersion(f"version {v} of {blob.hex()} is not awaiting notification")
            rec.notified = True
            nxt = b.records.get(b.last_published + 1)
            advanced = False
            while nxt is not None and nxt.notified:
                nxt.published = True
                b.last_published = nxt.v
                advanced = True
                nxt = b.records.get(nxt.v + 1)
            if advanced:
                self._cond.notify_all()

    def get_recent(self, blob: bytes) -> int:
        with self._cond:
            return self._blob(blob).last_published

    def get_size(self, blob: bytes, v: int) -> int:
        with self._cond:
            b = self._blob(blob)
            if not self._published(b, v):
                raise NotPublished(f"version {v} of {blob.hex()} is not published")
            return self._size(b, v)

    def wait_published(self, blob: bytes, v: int, timeout: Optional[float] = None) -> None:
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            b = self._blob(blob)
            if v > b.last_assigned:
                raise UnknownVersion(f"version {v} of {blob.hex()} was never assigned")
            while not self._published(b, v):
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise Timeout(f"version {v} not published within {timeout}s")
                self._cond.wait(remaining)

    def branch(self, blob: bytes, v: int) -> bytes:
        with self._cond:
            b = self._blob(blob)
            if not self._published(b, v):
                raise NotPublished(f"cannot branch at unpublished version {v}")
            bid = new_id()
            self._blobs[bid] = _Blob(bid, b.psize, parent=blob, fork=v, last_assigned=v, last_published=v)
            return bid

    def resolve_owner(self, blob: bytes, v: int) -> bytes:
        with self._cond:
            return self._owner(self._blob(blob), v).id

    def records(self, blob: bytes) -> list[VersionRecord]:
        """Snapshot of the blob's own version log (no inherited versions)."""
        with self._cond:
            b = self._blob(blob)
            return [VersionRecord(**vars(r)) for _, r in sorted(b.records.items())]

    def blobs(self) -> list[bytes]:
        with self._cond:
            return list(self._blobs)
