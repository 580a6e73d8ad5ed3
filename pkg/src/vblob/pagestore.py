"""Data provider: an immutable page-object store."""

from __future__ import annotations

import os
import threading
from pathlib import Path
from typing import Optional

from .errors import BadRange, Conflict, Malformed, NotFound, StoreFull


class PageStore:
    """In-memory page objects, optionally written through to ``directory``.

    Objects are immutable once stored. ``capacity`` bounds the total stored
    bytes; ``max_object`` bounds a single object (normally the page size).
    """

    def __init__(
        self,
        directory: Optional[os.PathLike] = None,
        capacity: Optional[int] = None,
        max_object: Optional[int] = None,
    ):
        self.directory = Path(directory) if directory is not None else None
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
        self.capacity = capacity
        self.max_object = max_object
        self._pages: dict[bytes, bytes] = {}
        self._bytes = 0
        self._lock = threading.Lock()

    def put_page(self, pid: bytes, data: bytes) -> None:
        if not data:
            raise Malformed("page objects must be non-empty")
        if self.max_object is not None and len(data) > self.max_object:
            raise Malformed(f"page object of {len(data)} bytes exceeds {self.max_object}")
        data = bytes(data)
        with self._lock:
            old = self._pages.get(pid)
            if old is not None:
                if old != data:
                    raise Conflict(f"page {pid.hex()} already stored with other content")
                return
            if self.capacity is not None and self._bytes + len(data) > self.capacity:
                raise StoreFull(f"capacity {self.capacity} bytes exceeded")
            if self.directory is not None:
                (self.directory / pid.hex()).write_bytes(data)
            self._pages[pid] = data
            self._bytes += len(data)

    def get_page(self, pid: bytes, off: int, length: int) -> bytes:
        try:
            data = self._pages[pid]
        except KeyError:
            raise NotFound(f"unknown page {pid.hex()}") from None
        if off < 0 or length < 0 or off + length > len(data):
            raise BadRange(f"extent ({off}, {length}) outside a {len(data)}-byte page")
        return data[off : off + length]

    def usage(self) -> tuple[int, int]:
        with self._lock:
            return len(self._pages), self._bytes

    def pids(self) -> list[bytes]:
        with self._lock:
            return list(self._pages)
