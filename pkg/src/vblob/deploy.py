"""Desk-scale deployments of all service roles inside one process.

``transport`` selects how clients reach the services:

* ``direct`` - plain method calls on the service objects,
* ``loopback`` - every call is encoded to wire frames and decoded again,
* ``tcp`` - each role listens on its own localhost TCP port.
"""

from __future__ import annotations

from typing import Callable, Optional

from .allocator import ProviderManager
from .client import Client
from .metastore import MetaStore
from .pagestore import PageStore
from .rpc import (
    Dispatcher,
    Network,
    RemoteAllocator,
    RemoteMetaStore,
    RemotePageStore,
    RemoteVersioner,
    TcpServer,
)
from .versioner import VersionManager

TRANSPORTS = ("direct", "loopback", "tcp")


class Deployment:
    def __init__(
        self,
        providers: int = 8,
        metastores: int = 4,
        transport: str = "loopback",
        page_capacity: Optional[int] = None,
        store_dir=None,
    ):
        if transport not in TRANSPORTS:
            raise ValueError(f"transport must be one of {TRANSPORTS}")
        self.transport = transport
        self.versioner = VersionManager()
        self.allocator = ProviderManager()
        self.metastores = [MetaStore() for _ in range(metastores)]
        self.pagestores = {}
        self._servers = []
        self._clients = []

        stores = [
            PageStore(None if store_dir is None else f"{store_dir}/provider-{i}", page_capacity)
            for i in range(providers)
        ]
        if transport == "tcp":
            for store in stores:
                srv = TcpServer(Dispatcher(pages=store)).start()
                self._servers.append(srv)
                self.pagestores[srv.address] = store
            self.meta_addrs = []
            for ms in self.metastores:
                srv = TcpServer(Dispatcher(meta=ms)).start()
                self._servers.append(srv)
                self.meta_addrs.append(srv.address)
            control = Dispatcher(allocator=self.allocator, versioner=self.versioner)
            srv = TcpServer(control).start()
            self._servers.append(srv)
            control.handlers.update(Dispatcher(topology=(srv.address, self.meta_addrs)).handlers)
            self.control_addr = srv.address
        else:
            self.net = Network()
            for i, store in enumerate(stores):
                name = f"provider-{i}"
                addr = self.net.register(name, Dispatcher(pages=store)) if transport == "loopback" else f"mem://{name}"
                self.pagestores[addr] = store
            self.meta_addrs = [
                self.net.register(f"meta-{i}", Dispatcher(meta=ms)) for i, ms in enumerate(self.metastores)
            ]
            self.control_addr = self.net.register(
                "control",
                Dispatcher(allocator=self.allocator, versioner=self.versioner, topology=("loop://control", self.meta_addrs)),
            )
        for addr in self.pagestores:
            self.allocator.register(addr)

    def client(self, provider_wrapper: Optional[Callable] = None, **kw) -> Client:
        """A new client. ``provider_wrapper(addr, store)`` may decorate page stores."""
        wrap = provider_wrapper or (lambda addr, store: store)
        if self.transport == "direct":
            cache = {addr: wrap(addr, store) for addr, store in self.pagestores.items()}
            c = Client(self.versioner, self.allocator, self.metastores, cache.__getitem__, **kw)
        else:
            net = self.net if self.transport == "loopback" else Network()
            cache = {}

            def provider(addr):
                p = cache.get(addr)
                if p is None:
                    p = cache[addr] = wrap(addr, RemotePageStore(net.endpoint(addr)))
                return p

            control = net.endpoint(self.control_addr)
            metas = [RemoteMetaStore(net.endpoint(a)) for a in self.meta_addrs]
            c = Client(RemoteVersioner(control), RemoteAllocator(control), metas, provider, **kw)
            if self.transport == "tcp":
                c._network = net
        self._clients.append(c)
        return c

    # -- inspection ------------------------------------------------------------

    def page_counts(self) -> dict[str, int]:
        return {addr: s.usage()[0] for addr, s in self.pagestores.items()}

    def stored_bytes(self) -> int:
        return sum(s.usage()[1] for s in self.pagestores.values())

    def node_count(self) -> int:
        return sum(len(ms) for ms in self.metastores)

    def node_keys(self) -> set[bytes]:
        return {k for ms in self.metastores for k in ms.keys()}

    def node_payloads(self) -> dict[bytes, bytes]:
        return {k: ms.get_node(k) for ms in self.metastores for k in ms.keys()}

    def close(self):
        for c in self._clients:
            c.close()
            net = getattr(c, "_network", None)
            if net is not None:
                net.close()
        for srv in self._servers:
            srv.stop()
        self._servers.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
