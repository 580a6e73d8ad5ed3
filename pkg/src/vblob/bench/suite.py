"""Seeded random concurrent workload checked against the flat-buffer oracle.

Writers and readers run as threads, each with its own client. Every actor's
operation plan is drawn up front from ``Random(f"{seed}:{actor}")`` so the
plan (the trace) is identical across runs with the same seed; sizes and
offsets are stored as fractions and resolved against the blob size observed
at run time. Everything observed is logged and checked after the run.
"""

from __future__ import annotations

import hashlib
import logging
import random
import threading
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from ..deploy import Deployment
from ..errors import BlobError, CheckFailed
from .oracle import OracleBlob
from .report import RunReport

log = logging.getLogger(__name__)


@dataclass
class SuiteConfig:
    seed: int = 1
    ops: int = 1000
    writers: int = 8
    readers: int = 8
    psizes: tuple[int, ...] = (1024, 4096)
    max_blob: int = 1 << 20
    max_update: int = 12 * 1024
    max_read: int = 48 * 1024
    min_branches: int = 2
    transport: str = "loopback"
    providers: int = 8
    metastores: int = 4
    client_workers: int = 4
    border_overlay: bool = True
    sync_timeout: float = 30.0


class PlannedOp(NamedTuple):
    actor: int
    index: int
    kind: str
    a: float
    b: float
    c: float
    aligned: bool
    data_seed: int


class Update(NamedTuple):
    blob: bytes
    version: int
    offset: Optional[int]
    data: bytes
    actor: int
    concurrent: int = 0


class Branch(NamedTuple):
    child: bytes
    parent: bytes
    fork: int


class ReadObs(NamedTuple):
    blob: bytes
    version: int
    offset: int
    size: int
    data: Optional[bytes]
    error: Optional[str]
    actor: int


@dataclass
class _Log:
    updates: list = field(default_factory=list)
    branches: list = field(default_factory=list)
    reads: list = field(default_factory=list)
    recents: list = field(default_factory=list)
    probes: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def add(self, kind: str, item) -> None:
        with self.lock:
            getattr(self, kind).append(item)


def plan(cfg: SuiteConfig) -> list[list[PlannedOp]]:
    actors = cfg.writers + cfg.readers
    base, extra = divmod(cfg.ops, actors)
    plans = []
    for actor in range(actors):
        rng = random.Random(f"{cfg.seed}:{actor}")
        is_writer = actor < cfg.writers
        ops = []
        for i in range(base + (actor < extra)):
            if not is_writer:
                kind = "read"
            elif actor < cfg.min_branches and i == 2 + actor:
                kind = "branch"
            else:
                r = rng.random()
                kind = "write" if r < 0.5 else "append" if r < 0.85 else "sync_read" if r < 0.995 else "branch"
            ops.append(PlannedOp(actor, i, kind, rng.random(), rng.random(), rng.random(),
                                 rng.random() < 0.3, rng.getrandbits(32)))
        plans.append(ops)
    return plans


def _data(seed: int, n: int) -> bytes:
    return random.Random(seed).randbytes(n)


class _World:
    """Blob directory shared by the actors."""

    def __init__(self):
        self.blobs: list[bytes] = []
        self.lock = threading.Lock()

    def pick(self, frac: float) -> bytes:
        with self.lock:
            return self.blobs[int(frac * len(self.blobs))]

    def add(self, blob: bytes) -> None:
        with self.lock:
            self.blobs.append(blob)


def _run_actor(cfg, client, world, ops, logbook, margin):
    handles = {}

    def handle(bid):
        h = handles.get(bid)
        if h is None:
            h = handles[bid] = client.open(bid)
        return h

    limit = cfg.max_blob - margin
    for op in ops:
        bid = world.pick(op.a)
        h = handle(bid)
        try:
            recent = h.get_recent()
            size = h.get_size(recent)
            if op.kind == "read":
                logbook.add("recents", (op.actor, bid, recent))
                # every version up to the observed recent one must be published
                for probe in {0, int(op.b * recent), recent}:
                    try:
                        h.get_size(probe)
                        logbook.add("probes", (bid, probe, recent, None))
                    except BlobError as exc:
                        logbook.add("probes", (bid, probe, recent, repr(exc)))
                v = recent if op.c < 0.5 else int(op.c * 2 * recent) % (recent + 1)
                size_v = h.get_size(v)
                rng = random.Random(op.data_seed)
                offset = rng.randrange(size_v + 1)
                length = rng.randrange(min(cfg.max_read, size_v - offset) + 1)
                try:
                    data = h.read(v, offset, length)
                    logbook.add("reads", ReadObs(bid, v, offset, length, data, None, op.actor))
                except BlobError as exc:
                    logbook.add("reads", ReadObs(bid, v, offset, length, None, repr(exc), op.actor))
                continue
            if op.kind == "branch":
                child = h.branch(recent).blob
                logbook.add("branches", Branch(child, bid, recent))
                world.add(child)
                continue
            ps = h.psize
            length = 1 + int(op.b * cfg.max_update)
            offset = int(op.c * size)
            if op.aligned:
                length = max(ps, length - length % ps)
                offset -= offset % ps
            kind = op.kind
            if kind == "append" and size + length > limit:
                kind = "write"
            if kind != "append":
                length = max(1, min(length, limit - offset))
            data = _data(op.data_seed, length)
            if kind == "append":
                res = h.append_ex(data)
                logbook.add("updates", Update(bid, res.version, None, data, op.actor, res.concurrent))
            else:
                res = h.write_ex(data, offset)
                logbook.add("updates", Update(bid, res.version, offset, data, op.actor, res.concurrent))
            if kind == "sync_read":
                h.sync(res.version, cfg.sync_timeout)
                got = h.read(res.version, offset, length)
                logbook.add("reads", ReadObs(bid, res.version, offset, length, got, None, op.actor))
        except Exception as exc:  # any crash is a finding, not a harness abort
            logbook.add("failures", (op, repr(exc)))


def _digest(data: bytes) -> str:
    return hashlib.blake2b(data, digest_size=8).hexdigest()


def _lineage_trace(bid, v, updates_by_blob, branch_of):
    trace = []
    while True:
        fork = branch_of[bid].fork if bid in branch_of else 0
        for u in sorted(updates_by_blob.get(bid, []), key=lambda u: u.version):
            if u.version <= v:
                trace.append(("update", u.blob.hex()[:8], u.version, u.offset, len(u.data), _digest(u.data)))
        if bid not in branch_of:
            break
        trace.append(("branch_of", bid.hex()[:8], branch_of[bid].parent.hex()[:8], fork))
        bid, v = branch_of[bid].parent, fork
    trace.reverse()
    return trace


def verify(logbook: _Log, roots: list[bytes], deployment: Optional[Deployment]) -> dict[str, bool]:
    """Check everything the actors observed; raises ``CheckFailed`` on divergence."""
    checks = {}
    updates_by_blob: dict[bytes, list[Update]] = {}
    for u in logbook.updates:
        updates_by_blob.setdefault(u.blob, []).append(u)
    branch_of = {b.child: b for b in logbook.branches}

    if logbook.failures:
        op, err = logbook.failures[0]
        raise CheckFailed(f"operation failed: {op} -> {err}", [op])

    # Assigned versions per blob are exactly fork+1 .. fork+n.
    gap_free = True
    for bid, ups in updates_by_blob.items():
        fork = branch_of[bid].fork if bid in branch_of else 0
        versions = sorted(u.version for u in ups)
        if versions != list(range(fork + 1, fork + 1 + len(versions))):
            gap_free = False
        if deployment is not None:
            recs = deployment.versioner.records(bid)
            if [r.v for r in recs] != versions or not all(r.published for r in recs):
                gap_free = False
    checks["versions_gap_free"] = gap_free
    if not gap_free:
        raise CheckFailed("assigned versions are not a gap-free sequence")

    oracles: dict[bytes, OracleBlob] = {}

    def oracle(bid):
        if bid in oracles:
            return oracles[bid]
        if bid in branch_of:
            b = branch_of[bid]
            base = oracle(b.parent).fork(b.fork)
        else:
            base = OracleBlob()
        for u in sorted(updates_by_blob.get(bid, []), key=lambda u: u.version):
            assert u.version == base.latest + 1
            base.apply(u.offset, u.data)
        oracles[bid] = base
        return base

    for bid in roots + [b.child for b in logbook.branches]:
        oracle(bid)

    for r in logbook.reads:
        o = oracles[r.blob]
        expected = o.read(r.version, r.offset, r.size)
        if r.error is not None or r.data != expected:
            trace = _lineage_trace(r.blob, r.version, updates_by_blob, branch_of)
            trace.append(("read", r.blob.hex()[:8], r.version, r.offset, r.size, r.error or "mismatch"))
            raise CheckFailed(f"read of version {r.version} diverges from the oracle ({r.error or 'bytes differ'})", trace)
    checks["reads_match_oracle"] = True

    last = {}
    monotone = True
    for actor, bid, v in logbook.recents:
        if v < last.get((actor, bid), 0):
            monotone = False
        last[(actor, bid)] = v
    checks["recent_monotone"] = monotone
    bad = [p for p in logbook.probes if p[3] is not None]
    checks["published_prefix"] = not bad
    if bad:
        bid, v, recent, err = bad[0]
        raise CheckFailed(f"version {v} <= recent {recent} was not published: {err}")

    if deployment is not None:
        written = sum(len(u.data) for u in logbook.updates)
        checks["storage_bytes_equal_written"] = deployment.stored_bytes() == written
        counts = list(deployment.page_counts().values())
        checks["provider_balance"] = max(counts) - min(counts) <= 1
    if not all(checks.values()):
        raise CheckFailed(f"checks failed: {[k for k, ok in checks.items() if not ok]}")
    return checks


def run_random_suite(cfg: SuiteConfig, deployment: Optional[Deployment] = None) -> RunReport:
    own = deployment is None
    if own:
        deployment = Deployment(cfg.providers, cfg.metastores, cfg.transport)
    t0 = time.monotonic()
    try:
        plans = plan(cfg)
        logbook = _Log()
        world = _World()
        setup = deployment.client(workers=cfg.client_workers, border_overlay=cfg.border_overlay)
        rng = random.Random(f"{cfg.seed}:setup")
        roots = []
        for ps in cfg.psizes:
            h = setup.create(ps)
            data = rng.randbytes(rng.randrange(2 * ps, 16 * ps))
            v = h.append(data)
            logbook.add("updates", Update(h.blob, v, None, data, -1))
            h.sync(v, cfg.sync_timeout)
            roots.append(h.blob)
            world.add(h.blob)

        margin = cfg.writers * (cfg.max_update + max(cfg.psizes))
        threads = []
        for ops in plans:
            c = deployment.client(workers=cfg.client_workers, border_overlay=cfg.border_overlay)
            t = threading.Thread(target=_run_actor, args=(cfg, c, world, ops, logbook, margin), daemon=True)
            threads.append(t)
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        elapsed = time.monotonic() - t0

        report = RunReport(
            "random-suite",
            params={k: v for k, v in vars(cfg).items()},
            trace=[tuple(op) for ops in plans for op in ops],
            provider_pages=deployment.page_counts(),
            samples=[{"blob": u.blob.hex(), "version": u.version, "kind": "append" if u.offset is None else "write",
                      "offset": -1 if u.offset is None else u.offset, "bytes": len(u.data),
                      "concurrent": u.concurrent, "actor": u.actor} for u in logbook.updates],
        )
        report.summary = {
            "updates": len(logbook.updates),
            "reads": len(logbook.reads),
            "branches": len(logbook.branches),
            "unaligned_updates": sum(
                1 for u in logbook.updates
                if u.offset is not None and (u.offset % 1024 or len(u.data) % 1024)
            ),
            "blobs": len(world.blobs),
            "concurrent_updates": sum(1 for u in logbook.updates if u.concurrent),
            "prefix_probes": len(logbook.probes),
        }
        report.checks = verify(logbook, roots, deployment)
        report.elapsed = time.monotonic() - t0
        report.summary["run_seconds"] = round(elapsed, 3)
        return report
    finally:
        if own:
            deployment.close()
