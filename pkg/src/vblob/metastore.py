"""Metadata provider: a statically partitioned DHT of write-once tree nodes.

Nodes are addressed by ``NodeKey(blob, version, pos)``, which any party can
compute ahead of time; that is what makes waiting for a node that a
concurrent writer has not produced yet well defined.

Canonical node encoding (big-endian)::

    INNER: 0x00 | vl:u64 | vr:u64          (2**64-1 encodes "no child")
    LEAF:  0x01 | count:u16 | count * (page_off:u32 len:u32 pid:16B
                                       addr_len:u16 addr:utf8 src_off:u32)
"""

from __future__ import annotations

import hashlib
import struct
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

from .core import ID_BYTES, NONE_VERSION, NodePos
from .errors import Conflict, Malformed, NotFound, Timeout

DEFAULT_POLL_INTERVAL = 0.005
DEFAULT_WAIT_TIMEOUT = 10.0

_KEY = struct.Struct(">16sQQQ")


class NodeKey(NamedTuple):
    blob: bytes
    version: int
    pos: NodePos

    def encode(self) -> bytes:
        return _KEY.pack(self.blob, self.version, self.pos.offset, self.pos.size)

    @classmethod
    def decode(cls, data: bytes) -> NodeKey:
        if len(data) != _KEY.size:
            raise Malformed("bad node key length")
        blob, version, off, size = _KEY.unpack(data)
        return cls(blob, version, NodePos(off, size))


@dataclass(frozen=True)
class Fragment:
    page_off: int
    len: int
    pid: bytes
    provider: str
    src_off: int = 0

    @property
    def page_end(self) -> int:
        return self.page_off + self.len


@dataclass(frozen=True)
class Inner:
    vl: Optional[int]
    vr: Optional[int]


@dataclass(frozen=True)
class Leaf:
    fragments: tuple[Fragment, ...]


TreeNode = Union[Inner, Leaf]


def _ver(v: Optional[int]) -> int:
    return NONE_VERSION if v is None else v


def encode_node(node: TreeNode) -> bytes:
    if isinstance(node, Inner):
        return struct.pack(">BQQ", 0, _ver(node.vl), _ver(node.vr))
    parts = [struct.pack(">BH", 1, len(node.fragments))]
    for f in node.fragments:
        addr = f.provider.encode()
        parts.append(struct.pack(">II16sH", f.page_off, f.len, f.pid, len(addr)))
        parts.append(addr)
        parts.append(struct.pack(">I", f.src_off))
    return b"".join(parts)


def decode_node(data: bytes) -> TreeNode:
    try:
        tag = data[0]
        if tag == 0:
            if len(data) != 17:
                raise Malformed("inner node must be 17 bytes")
            vl, vr = struct.unpack_from(">QQ", data, 1)
            node = Inner(None if vl == NONE_VERSION else vl, None if vr == NONE_VERSION else vr)
        elif tag == 1:
            (count,) = struct.unpack_from(">H", data, 1)
            pos = 3
            frags = []
            for _ in range(count):
                page_off, length, pid, alen = struct.unpack_from(">II16sH", data, pos)
                pos += 26
                addr = data[pos : pos + alen]
                if len(addr) != alen:
                    raise Malformed("truncated provider address")
                pos += alen
                (src_off,) = struct.unpack_from(">I", data, pos)
                pos += 4
                frags.append(Fragment(page_off, length, pid, addr.decode(), src_off))
            if pos != len(data):
                raise Malformed("trailing bytes after leaf")
            node = Leaf(tuple(frags))
        else:
            raise Malformed(f"unknown node tag {tag}")
    except (IndexError, struct.error, UnicodeDecodeError) as exc:
        raise Malformed(f"bad node encoding: {exc}") from None
    check_node(node)
    return node


def check_node(node: TreeNode) -> None:
    if isinstance(node, Inner):
        if node.vl is None and node.vr is None:
            raise Malformed("inner node without children")
        return
    if not node.fragments:
        raise Malformed("leaf without fragments")
    prev_end = 0
    for f in node.fragments:
        if f.len < 1 or f.page_off < prev_end or len(f.pid) != ID_BYTES:
            raise Malformed("leaf fragments must be non-empty, sorted and disjoint")
        prev_end = f.page_end


def locate(key: NodeKey, n_stores: int) -> int:
    """Store index for ``key``: blake2b-64 of the canonical key, mod ``n_stores``."""
    digest = hashlib.blake2b(key.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") % n_stores


class MetaStore:
    """One DHT node. Holds canonical node encodings; write-once per key."""

    def __init__(self):
        self._nodes: dict[bytes, bytes] = {}
        self._lock = threading.Lock()

    def put_node(self, key: bytes, payload: bytes) -> None:
        decode_node(payload)
        with self._lock:
            old = self._nodes.get(key)
            if old is None:
                self._nodes[key] = payload
            elif old != payload:
                raise Conflict(f"different node already stored under {key.hex()}")

    def get_node(self, key: bytes) -> bytes:
        try:
            return self._nodes[key]
        except KeyError:
            raise NotFound(f"no node under {key.hex()}") from None

    def __len__(self):
        return len(self._nodes)

    def keys(self) -> list[bytes]:
        with self._lock:
            return list(self._nodes)


class MetadataClient:
    """Client side of the DHT: routes keys to stores and (de)serializes nodes.

    ``stores`` are objects with ``put_node(key_bytes, payload)`` and
    ``get_node(key_bytes)``; local :class:`MetaStore` instances and rpc
    proxies both qualify.

    Nodes this client has written or fetched are kept in an LRU cache of
    ``cache_size`` entries. Keys name immutable nodes, so entries never go
    stale. ``fetches`` counts store lookups (cache misses).
    """

    def __init__(
        self,
        stores,
        executor=None,
        poll_interval: float = DEFAULT_POLL_INTERVAL,
        wait_timeout: float = DEFAULT_WAIT_TIMEOUT,
        cache_size: int = 1 << 16,
    ):
        if not stores:
            raise ValueError("at least one metadata store is required")
        self.stores = list(stores)
        self.executor = executor
        self.poll_interval = poll_interval
        self.wait_timeout = wait_timeout
        self.cache_size = cache_size
        self._cache: OrderedDict[NodeKey, TreeNode] = OrderedDict()
        self._cache_lock = threading.Lock()
        self.fetches = 0

    def _index(self, key: NodeKey) -> int:
        return locate(key, len(self.stores))

    def _remember(self, key: NodeKey, node: TreeNode) -> None:
        if self.cache_size <= 0:
            return
        with self._cache_lock:
            self._cache[key] = node
            self._cache.move_to_end(key)
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)

    def _cached(self, key: NodeKey) -> Optional[TreeNode]:
        with self._cache_lock:
            node = self._cache.get(key)
            if node is not None:
                self._cache.move_to_end(key)
            return node

    def put_node(self, key: NodeKey, node: TreeNode) -> None:
        self.stores[self._index(key)].put_node(key.encode(), encode_node(node))
        self._remember(key, node)

    def get_node(self, key: NodeKey) -> TreeNode:
        node = self._cached(key)
        if node is None:
            self.fetches += 1
            node = decode_node(self.stores[self._index(key)].get_node(key.encode()))
            self._remember(key, node)
        return node

    def get_node_wait(self, key: NodeKey, timeout: Optional[float] = None) -> TreeNode:
        timeout = self.wait_timeout if timeout is None else timeout
        deadline = time.monotonic() + timeout
        while True:
            try:
                return self.get_node(key)
            except NotFound:
                if time.monotonic() >= deadline:
                    raise Timeout(f"node {key} not written within {timeout}s") from None
                time.sleep(self.poll_interval)

    def _by_store(self, keys) -> list[list[int]]:
        groups: dict[int, list[int]] = {}
        for i, key in enumerate(keys):
            groups.setdefault(self._index(key), []).append(i)
        return list(groups.values())

    def put_many(self, items: list[tuple[NodeKey, TreeNode]]) -> None:
        """Store nodes; one sequential batch per store, batches in parallel."""
        groups = self._by_store([k for k, _ in items])
        self.fan_out(lambda idx: [self.put_node(*items[i]) for i in idx], groups)

    def get_many(self, keys: list[NodeKey]) -> list[TreeNode]:
        out: list = [self._cached(k) for k in keys]
        missing = [i for i, node in enumerate(out) if node is None]
        if missing:
            groups = self._by_store([keys[i] for i in missing])

            def fetch(idx):
                for j in idx:
                    out[missing[j]] = self.get_node(keys[missing[j]])

            self.fan_out(fetch, groups)
        return out

    def fan_out(self, fn, items):
        if self.executor is None or len(items) <= 1:
            return [fn(x) for x in items]
        return list(self.executor.map(fn, items))
