"""Naive segment-tree simulator used as an independent node-count oracle.

For every version it materialises the *full* tree (every aligned position
under the root that covers at least one existing page) and labels each
position with the tuple of per-page last-writer versions beneath it plus the
root extent it belongs to. A version's new nodes are the labelled positions
that did not exist, with the same label, in the previous version.
"""

from __future__ import annotations


def _root(pages: int) -> int:
    r = 1
    while r < pages:
        r *= 2
    return r if pages else 0


class TreeSim:
    def __init__(self):
        self.last_writer: list[int] = []
        self.prev: dict = {}
        self.version = 0

    def full_tree(self) -> dict:
        n = len(self.last_writer)
        root = _root(n)
        nodes = {}
        size = 1
        while size <= root:
            for off in range(0, n, size):
                label = tuple(self.last_writer[off : off + size])
                nodes[(off, size)] = label
            size *= 2
        return nodes

    def update(self, first_page: int, n_pages: int) -> set:
        """Apply an update over pages ``[first, first+n)``; return its new positions."""
        self.version += 1
        end = first_page + n_pages
        if end > len(self.last_writer):
            self.last_writer.extend([0] * (end - len(self.last_writer)))
        for k in range(first_page, end):
            self.last_writer[k] = self.version
        tree = self.full_tree()
        new = {pos for pos, label in tree.items() if self.prev.get(pos) != label}
        self.prev = tree
        return new
