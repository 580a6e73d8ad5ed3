"""Simulated network links for desk-scale throughput experiments.

Every endpoint (client or data provider) owns one full-duplex NIC modelled
as a FIFO link of fixed bandwidth: a transfer of ``n`` bytes occupies the
link for ``n / bandwidth`` seconds after whatever is already queued on it.
A transfer crosses the sender's and the receiver's links and completes when
the later of the two finishes, plus a fixed latency. Sleeping releases the
GIL, so concurrent transfers overlap the way they would on real NICs while
the Python work stays on a single core.
"""

from __future__ import annotations

import threading
import time


class Link:
    def __init__(self, bandwidth: float, latency: float = 0.0):
        self.bandwidth = bandwidth
        self.latency = latency
        self._free_at = 0.0
        self._lock = threading.Lock()

    def reserve(self, nbytes: int, now: float) -> float:
        with self._lock:
            start = max(now, self._free_at)
            self._free_at = start + nbytes / self.bandwidth
            return self._free_at


def transfer(nbytes: int, *links: Link) -> None:
    now = time.monotonic()
    done = max(link.reserve(nbytes, now) for link in links)
    latency = max(link.latency for link in links)
    delay = done + latency - time.monotonic()
    if delay > 0:
        time.sleep(delay)


class ThrottledPageStore:
    """Page-store facade that charges every payload to two links."""

    def __init__(self, store, provider_link: Link, client_link: Link):
        self.store = store
        self.provider_link = provider_link
        self.client_link = client_link

    def put_page(self, pid, data):
        transfer(len(data), self.client_link, self.provider_link)
        return self.store.put_page(pid, data)

    def get_page(self, pid, off, length):
        data = self.store.get_page(pid, off, length)
        transfer(len(data), self.provider_link, self.client_link)
        return data

    def usage(self):
        return self.store.usage()


class Fabric:
    """Hands out per-client NICs and shares one NIC per data provider."""

    def __init__(self, bandwidth: float, latency: float = 0.0):
        self.bandwidth = bandwidth
        self.latency = latency
        self._providers: dict[str, Link] = {}
        self._lock = threading.Lock()

    def provider_link(self, addr: str) -> Link:
        with self._lock:
            link = self._providers.get(addr)
            if link is None:
                link = self._providers[addr] = Link(self.bandwidth, self.latency)
            return link

    def wrapper(self):
        """A ``provider_wrapper`` for one new client (it gets its own NIC)."""
        nic = Link(self.bandwidth, self.latency)
        return lambda addr, store: ThrottledPageStore(store, self.provider_link(addr), nic)


class DelayedPageStore:
    """Adds a fixed service delay to every page operation (no queuing)."""

    def __init__(self, store, delay: float):
        self.store = store
        self.delay = delay

    def put_page(self, pid, data):
        time.sleep(self.delay)
        return self.store.put_page(pid, data)

    def get_page(self, pid, off, length):
        time.sleep(self.delay)
        return self.store.get_page(pid, off, length)

    def usage(self):
        return self.store.usage()
