"""Flat-buffer reference model of the versioning semantics.

Snapshots share fixed-size chunks copy-on-write, so keeping every version of
a 1 MiB blob costs a tuple of chunk references per version. The chunk size
is unrelated to any blob's page size on purpose.
"""

from __future__ import annotations

from typing import Iterable, Optional

from ..errors import NotPublished, OffsetBeyondEnd, OutOfBounds

CHUNK = 4096


class OracleBlob:
    def __init__(self, versions=None):
        # version -> (chunks, size); version 0 is the empty snapshot
        self.versions: list[tuple[tuple[bytes, ...], int]] = versions or [((), 0)]

    @property
    def latest(self) -> int:
        return len(self.versions) - 1

    def size(self, v: int) -> int:
        if v > self.latest:
            raise NotPublished(f"oracle has no version {v}")
        return self.versions[v][1]

    def apply(self, offset: Optional[int], data: bytes) -> int:
        """Apply one update on top of the latest version; ``None`` appends."""
        chunks, size = self.versions[-1]
        if offset is None:
            offset = size
        if offset > size:
            raise OffsetBeyondEnd(f"offset {offset} beyond size {size}")
        end = offset + len(data)
        new_size = max(size, end)
        chunks = list(chunks)
        n_chunks = -(-new_size // CHUNK)
        while len(chunks) < n_chunks:
            chunks.append(b"")
        pos = offset
        while pos < end:
            k = pos // CHUNK
            lo = pos - k * CHUNK
            hi = min(CHUNK, end - k * CHUNK)
            old = chunks[k]
            piece = data[pos - offset : pos - offset + hi - lo]
            chunks[k] = old[:lo].ljust(lo, b"\0") + piece + old[hi:]
            pos += hi - lo
        self.versions.append((tuple(chunks), new_size))
        return self.latest

    def read(self, v: int, offset: int, size: int) -> bytes:
        chunks, total = self.versions[v]
        if offset < 0 or offset + size > total:
            raise OutOfBounds(f"({offset}, {size}) outside oracle version {v} of {total} bytes")
        return b"".join(chunks)[offset : offset + size]

    def content(self, v: int) -> bytes:
        chunks, total = self.versions[v]
        return b"".join(chunks)[:total]

    def fork(self, v: int) -> OracleBlob:
        return OracleBlob(self.versions[: v + 1])


def oracle_apply(history: Iterable[tuple[Optional[int], bytes]], base: Optional[OracleBlob] = None) -> OracleBlob:
    """Replay ``(offset_or_None, data)`` updates in version order."""
    blob = base or OracleBlob()
    for offset, data in history:
        blob.apply(offset, data)
    return blob
