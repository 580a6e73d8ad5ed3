#!/usr/bin/env python3
"""Replay the three-update history (write 4 pages, overwrite pages 1-2,
append 1 page) and print the metadata nodes each version created.
"""

import argparse
import os
from collections import defaultdict

from vblob.deploy import Deployment
from vblob.metastore import NodeKey, decode_node


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--psize", type=int, default=4096)
    ap.add_argument("--transport", default="loopback", choices=["direct", "loopback", "tcp"])
    args = ap.parse_args()
    ps = args.psize
    with Deployment(providers=4, metastores=3, transport=args.transport) as d:
        h = d.client().create(ps)
        h.write(os.urandom(4 * ps), 0)
        h.write(os.urandom(2 * ps), ps)
        h.append(os.urandom(ps))
        h.sync(3)
        by_version = defaultdict(list)
        for k, payload in d.node_payloads().items():
            key = NodeKey.decode(k)
            by_version[key.version].append((tuple(key.pos), decode_node(payload)))
    for v in sorted(by_version):
        print(f"version {v}: {len(by_version[v])} nodes")
        for pos, node in sorted(by_version[v], key=lambda x: (-x[0][1], x[0][0])):
            print(f"  pages [{pos[0]}, {pos[0] + pos[1]})  {node}")


if __name__ == "__main__":
    main()
