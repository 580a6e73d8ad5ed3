"""Command line: blob operations against a TCP deployment, services, benches.

    vblob serve versioner allocator metastore --listen 127.0.0.1:7000
    vblob serve provider --listen 127.0.0.1:7001 --register 127.0.0.1:7000
    vblob blob create --psize 65536 --endpoint 127.0.0.1:7000
    vblob blob append --id <hex> --in data.bin
    vblob bench random-suite --seed 1
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from pathlib import Path

from ..client import Client
from ..errors import BlobError
from ..metastore import MetaStore
from ..pagestore import PageStore
from ..rpc import Dispatcher, Network, RemoteAllocator, RemoteMetaStore, RemotePageStore, RemoteVersioner, TcpServer, parse_tcp
from . import config
from .experiments import KiB, MiB, bench_append_growth, bench_read_concurrency
from .suite import SuiteConfig, run_random_suite

log = logging.getLogger("vblob")

DEFAULT_ENDPOINT = "tcp://127.0.0.1:7000"


def _tcp(addr: str) -> str:
    return addr if addr.startswith("tcp://") else f"tcp://{addr}"


def connect(endpoint: str) -> Client:
    net = Network()
    control = net.endpoint(_tcp(endpoint))
    vm = RemoteVersioner(control)
    alloc_addr, metas = vm.topology()
    allocator = RemoteAllocator(net.endpoint(alloc_addr))
    stores = [RemoteMetaStore(net.endpoint(a)) for a in metas]
    cache = {}

    def provider(addr):
        if addr not in cache:
            cache[addr] = RemotePageStore(net.endpoint(addr))
        return cache[addr]

    client = Client(vm, allocator, stores, provider)
    client._network = net
    return client


# -- blob ------------------------------------------------------------------


def _read_input(path):
    return sys.stdin.buffer.read() if path in (None, "-") else Path(path).read_bytes()


def cmd_blob(args, opts) -> int:
    client = connect(opts.get("endpoint", DEFAULT_ENDPOINT))
    try:
        if args.action == "create":
            h = client.create(int(opts.get("psize", 64 * KiB)))
            print(h.id)
            return 0
        if not args.id:
            raise SystemExit("--id is required")
        h = client.open(bytes.fromhex(args.id))
        if args.action == "write":
            print(h.write(_read_input(args.inp), args.offset))
        elif args.action == "append":
            print(h.append(_read_input(args.inp)))
        elif args.action == "read":
            v = h.get_recent() if args.version is None else args.version
            size = h.get_size(v) - args.offset if args.size is None else args.size
            data = h.read(v, args.offset, size)
            if args.out in (None, "-"):
                sys.stdout.buffer.write(data)
            else:
                Path(args.out).write_bytes(data)
        elif args.action == "size":
            print(h.get_size(h.get_recent() if args.version is None else args.version))
        elif args.action == "recent":
            print(h.get_recent())
        elif args.action == "sync":
            h.sync(args.version)
        elif args.action == "branch":
            print(h.branch(args.version).id)
        return 0
    except BlobError as exc:
        print(f"error: {exc.name}: {exc}", file=sys.stderr)
        return 2
    finally:
        client.close()
        client._network.close()


# -- serve -----------------------------------------------------------------


def cmd_serve(args, opts) -> int:
    host, port = parse_tcp(opts.get("listen", "127.0.0.1:0"))
    roles = set(args.roles)
    if "provider" in roles and len(roles) > 1:
        raise SystemExit("a provider needs its own listener")
    kw = {}
    if "provider" in roles:
        cap = opts.get("capacity")
        kw["pages"] = PageStore(opts.get("dir"), int(cap) if cap else None)
    if "metastore" in roles:
        kw["meta"] = MetaStore()
    if "allocator" in roles:
        from ..allocator import ProviderManager

        kw["allocator"] = ProviderManager()
    if "versioner" in roles:
        from ..versioner import VersionManager

        kw["versioner"] = VersionManager()
    dispatcher = Dispatcher(**kw)
    server = TcpServer(dispatcher, host, port).start()
    if "versioner" in roles:
        metas = [_tcp(a) for a in opts.get("metastores", "").split(",") if a]
        if "metastore" in roles:
            metas.insert(0, server.address)
        allocator = server.address if "allocator" in roles else _tcp(opts["allocator"])
        dispatcher.handlers.update(Dispatcher(topology=(allocator, metas)).handlers)
    if "provider" in roles and opts.get("register"):
        net = Network()
        RemoteAllocator(net.endpoint(_tcp(opts["register"]))).register(server.address)
    print(server.address, flush=True)
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        stop.wait()
    except KeyboardInterrupt:
        pass
    server.stop()
    return 0


# -- bench -----------------------------------------------------------------


def _emit(report, csv_path) -> int:
    for line in report.lines():
        print(line)
    if csv_path:
        report.write_csv(csv_path)
    return 0 if report.passed else 1


def cmd_bench(args, opts) -> int:
    if args.experiment == "random-suite":
        psizes = tuple(int(p) for p in str(opts.get("psize", "1024,4096")).split(","))
        cfg = SuiteConfig(seed=args.seed, ops=args.ops, writers=args.writers,
                          readers=8 if args.readers is None else args.readers, psizes=psizes,
                          transport=args.transport, providers=args.providers, metastores=args.metastores)
        try:
            report = run_random_suite(cfg)
        except BlobError as exc:
            print(json.dumps({"event": "check_failed", "error": str(exc),
                              "trace": [list(map(str, t)) for t in getattr(exc, "trace", [])]}))
            return 1
        report.trace = []  # the plan is large; it is reproducible from the seed
        return _emit(report, args.csv)
    if args.experiment == "append-growth":
        report = bench_append_growth(pages=args.pages, psize=int(opts.get("psize", 64 * KiB)),
                                     transport=args.transport, providers=args.providers,
                                     metastores=args.metastores)
        return _emit(report, args.csv)
    readers = (1, 16 if args.readers is None else args.readers)
    report = bench_read_concurrency(readers=readers, chunk=args.chunk, psize=int(opts.get("psize", 64 * KiB)),
                                    transport=args.transport)
    return _emit(report, args.csv)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vblob", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("blob", help="operate on a blob in a running TCP deployment")
    b.add_argument("action", choices=["create", "write", "append", "read", "size", "recent", "sync", "branch"])
    b.add_argument("--endpoint", help=f"versioner address (default {DEFAULT_ENDPOINT})")
    b.add_argument("--id")
    b.add_argument("--version", type=int)
    b.add_argument("--offset", type=int, default=0)
    b.add_argument("--size", type=int)
    b.add_argument("--psize", type=int)
    b.add_argument("--in", dest="inp")
    b.add_argument("--out")

    s = sub.add_parser("serve", help="run service roles on one TCP listener")
    s.add_argument("roles", nargs="+", choices=["provider", "metastore", "allocator", "versioner"])
    s.add_argument("--listen")
    s.add_argument("--register", help="allocator to register a provider with")
    s.add_argument("--metastores", help="comma-separated metastore addresses (versioner)")
    s.add_argument("--allocator", help="allocator address when not co-hosted (versioner)")
    s.add_argument("--dir", help="write-through directory for a provider")
    s.add_argument("--capacity", type=int, help="provider capacity in bytes")

    e = sub.add_parser("bench", help="validation and desk-scale experiments")
    e.add_argument("experiment", choices=["append-growth", "read-concurrency", "random-suite"])
    e.add_argument("--seed", type=int, default=1)
    e.add_argument("--ops", type=int, default=1000)
    e.add_argument("--pages", type=int, default=1024)
    e.add_argument("--psize", help="page size; comma-separated list for random-suite")
    e.add_argument("--writers", type=int, default=8)
    e.add_argument("--readers", type=int, help="reader actors (suite, default 8) or top reader count (read-concurrency, default 16)")
    e.add_argument("--providers", type=int, default=8, help="data providers (read-concurrency uses 32)")
    e.add_argument("--metastores", type=int, default=4)
    e.add_argument("--chunk", type=int, default=4 * MiB)
    e.add_argument("--transport", default="loopback", choices=["direct", "loopback", "tcp"])
    e.add_argument("--csv", help="write plotted samples to this CSV file")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    cli_vals = {k: getattr(args, k, None) for k in
                ("endpoint", "psize", "listen", "register", "metastores", "allocator", "dir", "capacity")}
    opts = config.resolve(cli_vals, args.config)
    handler = {"blob": cmd_blob, "serve": cmd_serve, "bench": cmd_bench}[args.command]
    return handler(args, opts)


if __name__ == "__main__":
    sys.exit(main())
