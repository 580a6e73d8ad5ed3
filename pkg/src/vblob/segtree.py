"""The versioned segment tree: metadata reads, border computation, builds.

Every snapshot version owns a (possibly incomplete) binary tree over page
ranges. An update creates nodes only at positions intersecting its page
range; every other child link points at a node written by an earlier
version (a *border* node). Nothing stored is ever modified.

The version recorded at a border position ``Q`` is the newest version
``w < vw`` whose own tree holds a node at ``Q``. A version's tree holds ``Q``
exactly when ``Q`` meets the update's page range and fits under that
version's root. Writers learn it from two sources: a descent of the latest
published tree, and the in-flight (assigned but unpublished) updates listed
in their ticket.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Optional

from .core import NodePos, intersects, page_span, pages_for_size, positions_intersecting, root_cover
from .errors import NotFound
from .metastore import Fragment, Inner, Leaf, MetadataClient, NodeKey
from .versioner import WriteTicket


@dataclass(frozen=True)
class PageDescriptor:
    pid: bytes
    index: int
    provider: str
    page_off: int
    len: int
    src_off: int = 0


@dataclass(frozen=True)
class StoredPiece:
    """A contiguous chunk of an update's buffer, stored as one page object."""

    buf_off: int
    length: int
    pid: bytes
    provider: str


class BlobTree:
    """Node access for one blob, resolving inherited versions to their owner."""

    def __init__(self, meta: MetadataClient, blob: bytes, psize: int, ancestry=()):
        self.meta = meta
        self.blob = blob
        self.psize = psize
        self.ancestry = tuple(ancestry)

    def owner(self, v: int) -> bytes:
        blob = self.blob
        for parent, fork in self.ancestry:
            if v > fork:
                break
            blob = parent
        return blob

    def key(self, v: int, pos: NodePos) -> NodeKey:
        return NodeKey(self.owner(v), v, pos)

    def root(self, size: int) -> NodePos:
        return NodePos(0, root_cover(pages_for_size(size, self.psize)))


# -- reading -----------------------------------------------------------------


def read_meta(tree: BlobTree, v: int, offset: int, size: int, size_v: int) -> list[tuple[PageDescriptor, int]]:
    """Page descriptors covering ``[offset, offset+size)`` of snapshot ``v``.

    Returns ``(descriptor, blob_offset)`` pairs sorted by blob offset; the
    descriptor extents tile the requested range exactly.
    """
    if size == 0:
        return []
    psize = tree.psize
    first, n = page_span((offset, size), psize)
    want = (first, n)
    end = offset + size
    out = []
    frontier = [(v, tree.root(size_v))]
    while frontier:
        nodes = tree.meta.get_many([tree.key(ver, pos) for ver, pos in frontier])
        nxt = []
        for (ver, pos), node in zip(frontier, nodes):
            if isinstance(node, Leaf):
                base = pos.offset * psize
                for f in node.fragments:
                    lo = max(offset, base + f.page_off)
                    hi = min(end, base + f.page_end)
                    if lo < hi:
                        d = PageDescriptor(f.pid, pos.offset - first, f.provider, lo - base, hi - lo,
                                           f.src_off + lo - base - f.page_off)
                        out.append((d, lo))
                continue
            for child, cv in zip(pos.children(), (node.vl, node.vr)):
                if not intersects(child, want):
                    continue
                if cv is None:
                    raise NotFound(f"version {ver} has no child at {child} inside the snapshot")
                nxt.append((cv, child))
        frontier = nxt
    out.sort(key=lambda item: item[1])
    _check_tiling(out, offset, end)
    return out


def _check_tiling(out, offset: int, end: int) -> None:
    at = offset
    for d, off in out:
        if off != at:
            raise NotFound(f"metadata leaves a gap or overlap at byte {at}")
        at += d.len
    if at != end:
        raise NotFound(f"metadata covers up to byte {at}, wanted {end}")


# -- border computation ----------------------------------------------------


def published_versions(tree: BlobTree, vp: int, vp_size: int, targets: Iterable[NodePos]) -> dict:
    """Child-link version of each target position in the tree of ``vp``.

    ``None`` when ``vp``'s tree has no node there. One batched descent
    serves all targets.
    """
    targets = set(targets)
    result = dict.fromkeys(targets)
    root = tree.root(vp_size)
    if vp == 0 or root.size == 0:
        return result
    pending = []
    for q in targets:
        if q == root:
            result[q] = vp
        elif root.contains(q) and q.size < root.size:
            pending.append(q)
    frontier = {root: (vp, pending)} if pending else {}
    while frontier:
        items = list(frontier.items())
        nodes = tree.meta.get_many([tree.key(ver, pos) for pos, (ver, _) in items])
        frontier = {}
        for (pos, (ver, qs)), node in zip(items, nodes):
            if not isinstance(node, Inner):
                continue
            half = pos.size // 2
            mid = pos.offset + half
            inside = ([], [])
            for q in qs:
                # targets are aligned and strictly smaller than pos, so each
                # lies in exactly one child
                side = 0 if q.offset < mid else 1
                cv = node.vr if side else node.vl
                if q.size == half:
                    result[q] = cv
                elif cv is not None:
                    inside[side].append(q)
            for side, group in enumerate(inside):
                if group:
                    frontier[NodePos(pos.offset + side * half, half)] = (node.vr if side else node.vl, group)
    return result


def versions_at(tree: BlobTree, ticket: WriteTicket, positions, overlay: bool = True) -> dict:
    """Newest version below ``ticket.vw`` holding a node at each position."""
    versions = published_versions(tree, ticket.vp, ticket.vp_size, positions)
    if overlay:
        for w in ticket.concurrent:
            span = page_span((w.offset, w.size), tree.psize)
            for q in versions:
                if q.size <= w.root_pages and intersects(q, span):
                    cur = versions[q]
                    if cur is None or w.w > cur:
                        versions[q] = w.w
    return versions


def new_positions(first: int, n: int, root: int) -> list[NodePos]:
    return list(positions_intersecting(first, n, root))


def sibling_positions(positions: list[NodePos], first: int, n: int) -> list[NodePos]:
    out = []
    for p in positions:
        if p.size > 1:
            out.extend(c for c in p.children() if not intersects(c, (first, n)))
    return out


def border_versions(tree: BlobTree, ticket: WriteTicket, overlay: bool = True) -> dict:
    """Version (or None) of every child link that the update does not rewrite."""
    first, n = page_span((ticket.effective_offset, ticket.size), tree.psize)
    root = tree.root(ticket.new_size)
    siblings = sibling_positions(new_positions(first, n, root.size), first, n)
    return versions_at(tree, ticket, siblings, overlay)


# -- leaves ----------------------------------------------------------------


def fragments_by_page(pieces: Iterable[StoredPiece], offset: int, psize: int) -> dict[int, list[Fragment]]:
    """Split stored pieces along page boundaries of the blob."""
    pages = defaultdict(list)
    for piece in pieces:
        lo = offset + piece.buf_off
        hi = lo + piece.length
        while lo < hi:
            k = lo // psize
            cut = min(hi, (k + 1) * psize)
            pages[k].append(Fragment(lo - k * psize, cut - lo, piece.pid, piece.provider,
                                     lo - offset - piece.buf_off))
            lo = cut
    for frags in pages.values():
        frags.sort(key=lambda f: f.page_off)
    return dict(pages)


def overlay_fragments(old: Iterable[Fragment], new: list[Fragment]) -> tuple[Fragment, ...]:
    """``new`` laid over ``old``; old fragments keep only uncovered extents."""
    covered = sorted((f.page_off, f.page_end) for f in new)
    out = list(new)
    for f in old:
        lo = f.page_off
        for c_lo, c_hi in covered:
            if c_hi <= lo or c_lo >= f.page_end:
                continue
            if c_lo > lo:
                out.append(_clip(f, lo, c_lo))
            lo = max(lo, c_hi)
        if lo < f.page_end:
            out.append(_clip(f, lo, f.page_end))
    out.sort(key=lambda f: f.page_off)
    return tuple(out)


def _clip(f: Fragment, lo: int, hi: int) -> Fragment:
    return Fragment(lo, hi - lo, f.pid, f.provider, f.src_off + lo - f.page_off)


def materialize_boundary_leaf(tree: BlobTree, page: int, new_frags: list[Fragment],
                              prev_version: Optional[int], timeout: Optional[float] = None) -> Leaf:
    if prev_version is None:
        return Leaf(tuple(sorted(new_frags, key=lambda f: f.page_off)))
    prev = tree.meta.get_node_wait(tree.key(prev_version, NodePos(page, 1)), timeout)
    return Leaf(overlay_fragments(prev.fragments, new_frags))


def _needs_merge(frags: list[Fragment], page: int, prev_size: int, psize: int) -> bool:
    old_extent = min(psize, max(0, prev_size - page * psize))
    if old_extent == 0:
        return False
    at = 0
    for f in frags:
        if f.page_off != at:
            return True
        at = f.page_end
    return at < old_extent


# -- building --------------------------------------------------------------


def build_meta(tree: BlobTree, ticket: WriteTicket, pieces: Iterable[StoredPiece],
               overlay: bool = True, wait_timeout: Optional[float] = None) -> int:
    """Write the tree nodes of ``ticket.vw``; returns how many were written."""
    psize = tree.psize
    vw = ticket.vw
    first, n = page_span((ticket.effective_offset, ticket.size), psize)
    root = tree.root(ticket.new_size)
    positions = new_positions(first, n, root.size)
    per_page = fragments_by_page(pieces, ticket.effective_offset, psize)

    merge_pages = [k for k in range(first, first + n) if _needs_merge(per_page[k], k, ticket.prev_size, psize)]
    siblings = sibling_positions(positions, first, n)
    versions = versions_at(tree, ticket, siblings + [NodePos(k, 1) for k in merge_pages], overlay)

    def merged(k):
        return materialize_boundary_leaf(tree, k, per_page[k], versions[NodePos(k, 1)], wait_timeout)

    leaves = {k: Leaf(tuple(per_page[k])) for k in range(first, first + n)}
    leaves.update(zip(merge_pages, tree.meta.fan_out(merged, merge_pages)))

    items = [(tree.key(vw, NodePos(k, 1)), leaves[k]) for k in range(first, first + n)]
    span = (first, n)
    for p in positions:
        if p.size == 1:
            continue
        left, right = p.children()
        vl = vw if intersects(left, span) else versions[left]
        vr = vw if intersects(right, span) else versions[right]
        items.append((tree.key(vw, p), Inner(vl, vr)))
    tree.meta.put_many(items)
    return len(items)
