"""Public blob API: READ, WRITE, APPEND plus the version-manager pass-throughs."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

from .core import is_pow2, new_id
from .errors import BadPsize, OutOfBounds
from .metastore import DEFAULT_POLL_INTERVAL, DEFAULT_WAIT_TIMEOUT, MetadataClient
from .segtree import BlobTree, StoredPiece, build_meta, read_meta
from .versioner import MAX_PSIZE, UpdateKind

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class UpdateResult:
    version: int
    offset: int
    nodes: int
    pieces: tuple[StoredPiece, ...]
    concurrent: int = 0


class Client:
    """Entry point wiring the service roles together.

    ``providers`` maps a data-provider address to an object exposing
    ``put_page``/``get_page`` (a local store or an rpc proxy).
    """

    def __init__(
        self,
        versioner,
        allocator,
        metastores,
        providers: Callable[[str], object],
        workers: int = 16,
        wait_timeout: float = DEFAULT_WAIT_TIMEOUT,
        poll_interval: float = DEFAULT_POLL_INTERVAL,
        border_overlay: bool = True,
    ):
        self.versioner = versioner
        self.allocator = allocator
        self.providers = providers
        self.executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
        self.meta = MetadataClient(metastores, self.executor, poll_interval, wait_timeout)
        self.wait_timeout = wait_timeout
        # Switching this off is only useful to prove the validation harness
        # catches a broken border computation.
        self.border_overlay = border_overlay

    def create(self, psize: int) -> BlobHandle:
        if not is_pow2(psize) or psize > MAX_PSIZE:
            raise BadPsize(f"page size must be a power of two <= {MAX_PSIZE}, got {psize}")
        blob = self.versioner.create_blob(psize)
        return BlobHandle(self, blob, psize, ())

    def open(self, blob: bytes) -> BlobHandle:
        info = self.versioner.blob_info(blob)
        return BlobHandle(self, blob, info.psize, info.ancestry)

    def map(self, fn, items):
        items = list(items)
        if self.executor is None or len(items) <= 1:
            return [fn(x) for x in items]
        return list(self.executor.map(fn, items))

    def close(self):
        if self.executor is not None:
            self.executor.shutdown(wait=False)


class BlobHandle:
    def __init__(self, client: Client, blob: bytes, psize: int, ancestry):
        self.client = client
        self.blob = blob
        self.psize = psize
        self.tree = BlobTree(client.meta, blob, psize, ancestry)

    def __repr__(self):
        return f"BlobHandle({self.blob.hex()}, psize={self.psize})"

    @property
    def id(self) -> str:
        return self.blob.hex()

    # -- reads ---------------------------------------------------------------

    def read(self, v: int, offset: int, size: int, buffer=None):
        """Bytes ``[offset, offset+size)`` of snapshot ``v``.

        With ``buffer`` the data lands in ``buffer[0:size]`` and the buffer is
        returned.
        """
        size_v = self.client.versioner.get_size(self.blob, v)
        if offset < 0 or size < 0 or offset + size > size_v:
            raise OutOfBounds(f"range ({offset}, {size}) exceeds snapshot {v} of {size_v} bytes")
        out = bytearray(size) if buffer is None else buffer
        view = memoryview(out)
        descs = read_meta(self.tree, v, offset, size, size_v)

        def fetch(item):
            d, blob_off = item
            data = self.client.providers(d.provider).get_page(d.pid, d.src_off, d.len)
            view[blob_off - offset : blob_off - offset + d.len] = data

        self.client.map(fetch, descs)
        return bytes(out) if buffer is None else buffer

    # -- updates ---------------------------------------------------------------

    def _store(self, data, cuts: list[int]) -> list[StoredPiece]:
        bounds = list(zip(cuts, cuts[1:]))
        addrs = self.client.allocator.allocate(len(bounds))
        view = memoryview(data)

        def put(job):
            (lo, hi), addr = job
            pid = new_id()
            self.client.providers(addr).put_page(pid, bytes(view[lo:hi]))
            return StoredPiece(lo, hi - lo, pid, addr)

        return self.client.map(put, zip(bounds, addrs))

    def _update(self, kind: UpdateKind, data, offset: Optional[int]) -> UpdateResult:
        size = len(data)
        if size < 1:
            raise ValueError("updates must carry at least one byte")
        ps = self.psize
        if kind == UpdateKind.WRITE:
            first_cut = min(size, ps - offset % ps)
            cuts = [0, *range(first_cut, size, ps), size]
            cuts = sorted(set(cuts))
        else:
            cuts = [*range(0, size, ps), size]
        pieces = self._store(data, cuts)
        vm = self.client.versioner
        ticket = vm.assign_version(self.blob, kind, offset, size)
        nodes = build_meta(self.tree, ticket, pieces, overlay=self.client.border_overlay,
                           wait_timeout=self.client.wait_timeout)
        vm.notify_success(self.blob, ticket.vw)
        return UpdateResult(ticket.vw, ticket.effective_offset, nodes, tuple(pieces), len(ticket.concurrent))

    def write_ex(self, data, offset: int) -> UpdateResult:
        if offset < 0:
            raise OutOfBounds("negative offset")
        return self._update(UpdateKind.WRITE, data, offset)

    def append_ex(self, data) -> UpdateResult:
        return self._update(UpdateKind.APPEND, data, None)

    def write(self, data, offset: int) -> int:
        return self.write_ex(data, offset).version

    def append(self, data) -> int:
        return self.append_ex(data).version

    # -- version manager pass-throughs -------------------------------------

    def sync(self, v: int, timeout: Optional[float] = None) -> None:
        self.client.versioner.wait_published(self.blob, v, timeout)

    def get_recent(self) -> int:
        return self.client.versioner.get_recent(self.blob)

    def get_size(self, v: int) -> int:
        return self.client.versioner.get_size(self.blob, v)

    def branch(self, v: int) -> BlobHandle:
        bid = self.client.versioner.branch(self.blob, v)
        return BlobHandle(self.client, bid, self.psize, ((self.blob, v), *self.tree.ancestry))
