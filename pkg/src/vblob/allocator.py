"""Provider manager: registry of data providers and page placement."""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

from .errors import NoProviders, UnknownProvider


@dataclass
class ProviderInfo:
    addr: str
    reported_pages: int = 0
    in_flight: int = 0
    last_heartbeat: float = field(default_factory=time.time)

    @property
    def load(self) -> int:
        return self.reported_pages + self.in_flight


class LeastLoaded:
    """Pick the least-loaded provider; ties go round-robin from a cursor."""

    def __init__(self):
        self.cursor = 0

    def pick(self, providers: list[ProviderInfo]) -> int:
        n = len(providers)
        best = None
        for step in range(n):
            i = (self.cursor + step) % n
            if best is None or providers[i].load < providers[best].load:
                best = i
        self.cursor = (best + 1) % n
        return best


class ProviderManager:
    def __init__(self, strategy=None):
        self.strategy = strategy or LeastLoaded()
        self._providers: list[ProviderInfo] = []
        self._index: dict[str, int] = {}
        self._lock = threading.Lock()

    def register(self, addr: str) -> None:
        with self._lock:
            if addr in self._index:
                self._providers[self._index[addr]].last_heartbeat = time.time()
                return
            self._index[addr] = len(self._providers)
            self._providers.append(ProviderInfo(addr))

    def allocate(self, n: int) -> list[str]:
        with self._lock:
            if not self._providers:
                raise NoProviders("no data providers registered")
            out = []
            for _ in range(n):
                p = self._providers[self.strategy.pick(self._providers)]
                p.in_flight += 1
                out.append(p.addr)
            return out

    def report(self, addr: str, reported_pages: int) -> None:
        with self._lock:
            try:
                p = self._providers[self._index[addr]]
            except KeyError:
                raise UnknownProvider(f"provider {addr!r} is not registered") from None
            p.reported_pages = reported_pages
            p.in_flight = 0
            p.last_heartbeat = time.time()

    def providers(self) -> list[ProviderInfo]:
        with self._lock:
            return [ProviderInfo(**vars(p)) for p in self._providers]
