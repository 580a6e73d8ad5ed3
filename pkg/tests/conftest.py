import hashlib

import pytest

from vblob.core import page_span
from vblob.deploy import Deployment
from vblob.metastore import MetadataClient, MetaStore, NodeKey
from vblob.segtree import BlobTree, StoredPiece, build_meta
from vblob.versioner import UpdateKind, VersionManager


def fixed_pid(*parts) -> bytes:
    return hashlib.blake2b(repr(parts).encode(), digest_size=16).digest()


class ManualBlob:
    """Versioner + metadata driven by hand so a test controls build order.

    Page ids are derived from (tag, piece index), so two replays of the same
    history produce byte-identical nodes.
    """

    def __init__(self, psize=1024, stores=4, vm=None, meta=None):
        self.vm = vm or VersionManager()
        self.stores = [MetaStore() for _ in range(stores)]
        self.meta = meta or MetadataClient(self.stores, poll_interval=0.001, wait_timeout=5.0)
        self.psize = psize
        self.blob = self.vm.create_blob(psize)
        self.tree = BlobTree(self.meta, self.blob, psize)

    def assign(self, offset, size):
        kind = UpdateKind.APPEND if offset is None else UpdateKind.WRITE
        return self.vm.assign_version(self.blob, kind, offset, size)

    def pieces(self, ticket, tag="p"):
        ps = self.psize
        first, n = page_span((ticket.effective_offset, ticket.size), ps)
        out, at = [], 0
        for i in range(n):
            page_end = (first + i + 1) * ps - ticket.effective_offset
            hi = min(ticket.size, page_end)
            out.append(StoredPiece(at, hi - at, fixed_pid(tag, ticket.vw, i), "prov"))
            at = hi
        return out

    def build(self, ticket, tag="p", overlay=True):
        return build_meta(self.tree, ticket, self.pieces(ticket, tag), overlay=overlay, wait_timeout=5.0)

    def publish(self, ticket):
        self.vm.notify_success(self.blob, ticket.vw)

    def update(self, offset, size, tag="p"):
        t = self.assign(offset, size)
        n = self.build(t, tag)
        self.publish(t)
        return t, n

    def nodes(self):
        """``{(version, (offset, size)): payload}`` for every stored node."""
        out = {}
        for ms in self.stores:
            for k in ms.keys():
                key = NodeKey.decode(k)
                out[(key.version, tuple(key.pos))] = ms.get_node(k)
        return out

    def positions(self, v):
        return {pos for (ver, pos) in self.nodes() if ver == v}


@pytest.fixture
def manual():
    return ManualBlob


@pytest.fixture(params=["direct", "loopback", "tcp"])
def deployment(request):
    with Deployment(providers=4, metastores=3, transport=request.param) as d:
        yield d


@pytest.fixture
def loop_deployment():
    with Deployment(providers=4, metastores=3, transport="loopback") as d:
        yield d


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
