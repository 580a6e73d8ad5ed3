"""Desk-scale analogues of the append-growth and concurrent-read experiments."""

from __future__ import annotations

import gc
import random
import statistics
import threading
import time

from ..core import is_pow2
from ..deploy import Deployment
from .netsim import Fabric
from .report import RunReport
from .treesim import TreeSim

MiB = 1024 * 1024
KiB = 1024


def _window_median(values: list[float], end_index: int, width: int) -> float:
    """Median of ``values`` over the ``width`` entries ending at ``end_index`` (exclusive)."""
    return statistics.median(values[max(0, end_index - width) : end_index])


def _append_run(pages, psize, transport, providers, metastores, payload):
    counts, seconds = [], []
    with Deployment(providers, metastores, transport) as d:
        h = d.client(workers=8).create(psize)
        gc_was = gc.isenabled()
        gc.disable()
        try:
            for _ in range(pages):
                start = time.perf_counter()
                res = h.append_ex(payload)
                seconds.append(time.perf_counter() - start)
                counts.append(res.nodes)
        finally:
            if gc_was:
                gc.enable()
        provider_pages = d.page_counts()
    gc.collect()
    return counts, seconds, provider_pages


def bench_append_growth(
    pages: int = 1024,
    psize: int = 64 * KiB,
    transport: str = "direct",
    providers: int = 8,
    metastores: int = 4,
    window: int = 32,
    small_size: int = 4 * MiB,
    repeats: int = 3,
) -> RunReport:
    """One client appends ``pages`` single pages to an empty blob.

    Records the per-append throughput and metadata-node count and compares
    the counts against the naive tree simulator. The run is repeated
    ``repeats`` times on fresh deployments; throughput at a given blob size
    is taken from the per-append median time across repeats, then the
    median over a ``window`` of appends ending at that size.
    """
    report = RunReport("append-growth", params=dict(pages=pages, psize=psize, transport=transport,
                                                    providers=providers, metastores=metastores,
                                                    window=window, repeats=repeats))
    t0 = time.monotonic()
    payload = random.Random(pages).randbytes(psize)
    sim = TreeSim()
    sim_counts = [len(sim.update(k, 1)) for k in range(pages)]

    runs = [_append_run(pages, psize, transport, providers, metastores, payload) for _ in range(repeats)]
    counts = runs[0][0]
    report.node_counts = counts
    report.provider_pages = runs[-1][2]
    per_append = [statistics.median(run[1][k] for run in runs) for k in range(pages)]
    for k in range(pages):
        report.samples.append({"append": k, "pages": k + 1, "size_bytes": (k + 1) * psize, "nodes": counts[k],
                               "seconds": per_append[k], "mib_s": psize / MiB / per_append[k]})

    steps = [k for k in range(1, pages) if counts[k] > counts[k - 1]]
    expected_steps = [k for k in range(1, pages) if is_pow2(k)]
    report.checks["node_counts_match_simulator"] = all(run[0] == sim_counts for run in runs)
    report.checks["steps_at_power_of_two"] = steps == expected_steps and all(
        counts[k] - counts[k - 1] == 1 for k in steps
    )
    small_pages = small_size // psize
    summary = {"steps_at_pages": steps}
    if small_pages <= pages:
        small = psize / MiB / _window_median(per_append, small_pages, window)
        large = psize / MiB / _window_median(per_append, pages, window)
        summary.update(mib_s_at_small=small, mib_s_at_end=large, ratio=large / small)
    report.summary = summary
    report.elapsed = time.monotonic() - t0
    return report


def bench_read_concurrency(
    readers: tuple[int, ...] = (1, 16),
    chunk: int = 4 * MiB,
    psize: int = 64 * KiB,
    providers: int = 32,
    metastores: int = 8,
    bandwidth: float = 16 * MiB,
    latency: float = 0.0002,
    repeats: int = 3,
    transport: str = "direct",
) -> RunReport:
    """Readers fetch disjoint ``chunk``-sized slices of one blob concurrently.

    Data transfers go through :class:`~vblob.bench.netsim.Fabric` NICs of
    ``bandwidth`` bytes/s, one per client and one per data provider.
    """
    report = RunReport("read-concurrency", params=dict(readers=list(readers), chunk=chunk, psize=psize,
                                                       providers=providers, bandwidth=bandwidth,
                                                       latency=latency, repeats=repeats, transport=transport))
    t0 = time.monotonic()
    fabric = Fabric(bandwidth, latency)
    total = max(readers) * chunk
    with Deployment(providers, metastores, transport) as d:
        writer = d.client(workers=8).create(psize)
        rng = random.Random(7)
        parts = [rng.randbytes(chunk) for _ in range(max(readers))]
        for part in parts:
            v = writer.append(part)
        writer.sync(v)
        assert writer.get_size(v) == total

        results = {}
        for r in readers:
            clients = [d.client(provider_wrapper=fabric.wrapper(), workers=16) for _ in range(r)]
            handles = [c.open(writer.blob) for c in clients]
            per_rep = []
            for rep in range(repeats):
                barrier = threading.Barrier(r)
                spans = [None] * r
                ok = [False] * r

                def run(i):
                    barrier.wait()
                    start = time.perf_counter()
                    data = handles[i].read(v, i * chunk, chunk)
                    spans[i] = (start, time.perf_counter())
                    ok[i] = data == parts[i]

                threads = [threading.Thread(target=run, args=(i,)) for i in range(r)]
                for t in threads:
                    t.start()
                for t in threads:
                    t.join()
                per_reader = [chunk / MiB / (e - s) for s, e in spans]
                wall = max(e for _, e in spans) - min(s for s, _ in spans)
                per_rep.append((statistics.mean(per_reader), r * chunk / MiB / wall, all(ok)))
                report.samples.append({"readers": r, "repeat": rep, "per_reader_mib_s": per_rep[-1][0],
                                       "aggregate_mib_s": per_rep[-1][1]})
            for c in clients:
                c.close()
            results[r] = (
                statistics.median(p[0] for p in per_rep),
                statistics.median(p[1] for p in per_rep),
                all(p[2] for p in per_rep),
            )
        report.provider_pages = d.page_counts()

    base = min(readers)
    report.checks["reads_correct"] = all(res[2] for res in results.values())
    summary = {f"per_reader_mib_s@{r}": res[0] for r, res in results.items()}
    summary.update({f"aggregate_mib_s@{r}": res[1] for r, res in results.items()})
    top = max(readers)
    if top != base:
        summary["per_reader_ratio"] = results[top][0] / results[base][0]
        summary["aggregate_ratio"] = results[top][1] / results[base][1]
    report.summary = summary
    report.elapsed = time.monotonic() - t0
    return report
