"""Identifiers and the page/range arithmetic used throughout the package.

Tree coordinates are always expressed in *pages*; byte offsets only appear
at the client API surface and inside leaf fragments.
"""

from __future__ import annotations

import enum
import os
from typing import NamedTuple

ID_BYTES = 16
NONE_VERSION = 2**64 - 1

BlobId = bytes
PageId = bytes
Version = int


def new_id() -> bytes:
    """A fresh random 128-bit identifier."""
    return os.urandom(ID_BYTES)


class ByteRange(NamedTuple):
    offset: int
    size: int

    @property
    def end(self) -> int:
        return self.offset + self.size


class NodePos(NamedTuple):
    offset: int
    size: int

    @property
    def end(self) -> int:
        return self.offset + self.size

    def is_valid(self) -> bool:
        return is_pow2(self.size) and self.offset % self.size == 0

    def contains(self, other: NodePos) -> bool:
        return self.offset <= other.offset and other.end <= self.end

    def children(self) -> tuple[NodePos, NodePos]:
        half = self.size // 2
        return NodePos(self.offset, half), NodePos(self.offset + half, half)


class Side(enum.Enum):
    LEFT = 0
    RIGHT = 1


def is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def intersects(a, b) -> bool:
    """True iff the half-open intervals ``a`` and ``b`` share at least one unit.

    Works for anything shaped like ``(offset, size)``.
    """
    return a[0] < b[0] + b[1] and b[0] < a[0] + a[1] and a[1] > 0 and b[1] > 0


def page_span(r, psize: int) -> tuple[int, int]:
    offset, size = r
    first = offset // psize
    if size == 0:
        return first, 0
    last = (offset + size - 1) // psize
    return first, last - first + 1


def pages_for_size(nbytes: int, psize: int) -> int:
    return -(-nbytes // psize)


def root_cover(n_pages: int) -> int:
    if n_pages <= 0:
        return 0
    return 1 << (n_pages - 1).bit_length()


def parent_of(p: NodePos) -> tuple[NodePos, Side]:
    if p.offset % (2 * p.size) == 0:
        return NodePos(p.offset, 2 * p.size), Side.LEFT
    return NodePos(p.offset - p.size, 2 * p.size), Side.RIGHT


def positions_intersecting(first_page: int, n_pages: int, root: int):
    """Every aligned position of size <= ``root`` that meets the page interval.

    Yields leaves first, then each level up to and including the root.
    """
    if n_pages <= 0:
        return
    end = first_page + n_pages
    size = 1
    while size <= root:
        start = (first_page // size) * size
        for off in range(start, end, size):
            yield NodePos(off, size)
        size *= 2
