import math
import random
import threading
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vblob.bench.treesim import TreeSim
from vblob.core import NodePos, intersects, root_cover
from vblob.errors import NotFound
from vblob.metastore import Fragment, Inner, Leaf, decode_node
from vblob.segtree import border_versions, materialize_boundary_leaf, overlay_fragments, read_meta

from conftest import ManualBlob, fixed_pid

PS = 1024
P = lambda o, s: (o, s)  # noqa: E731


def three_step(blob=None):
    """Four-page append, overwrite of pages 1-2, one-page append."""
    m = blob or ManualBlob(PS)
    m.update(None, 4 * PS)
    m.update(PS, 2 * PS)
    m.update(None, PS)
    return m


# -- three-step history: write 4 pages, overwrite 1-2, append 1 -----------


def test_three_step_node_sets():
    m = ManualBlob(PS)
    _, n1 = m.update(None, 4 * PS)
    assert m.positions(1) == {P(0, 1), P(1, 1), P(2, 1), P(3, 1), P(0, 2), P(2, 2), P(0, 4)} and n1 == 7
    _, n2 = m.update(PS, 2 * PS)
    assert m.positions(2) == {P(1, 1), P(2, 1), P(0, 2), P(2, 2), P(0, 4)} and n2 == 5
    _, n3 = m.update(None, PS)
    assert m.positions(3) == {P(4, 1), P(4, 2), P(4, 4), P(0, 8)} and n3 == 4
    nodes = m.nodes()
    assert decode_node(nodes[(3, (0, 8))]) == Inner(2, 3)
    assert decode_node(nodes[(3, (4, 4))]) == Inner(3, None)
    assert decode_node(nodes[(3, (4, 2))]) == Inner(3, None)
    assert decode_node(nodes[(2, (0, 2))]) == Inner(1, 2)
    assert decode_node(nodes[(2, (2, 2))]) == Inner(2, 1)
    assert decode_node(nodes[(2, (0, 4))]) == Inner(2, 2)


def test_border_versions_overwrite():
    m = ManualBlob(PS)
    m.update(None, 4 * PS)
    t = m.assign(PS, 2 * PS)
    assert border_versions(m.tree, t) == {NodePos(0, 1): 1, NodePos(3, 1): 1}


def test_border_versions_append():
    m = ManualBlob(PS)
    m.update(None, 4 * PS)
    m.update(PS, 2 * PS)
    t = m.assign(None, PS)
    assert border_versions(m.tree, t) == {NodePos(0, 4): 2, NodePos(5, 1): None, NodePos(6, 2): None}


def test_border_versions_with_concurrent_writer():
    m = ManualBlob(PS)
    m.update(None, 4 * PS)
    t2 = m.assign(PS, 2 * PS)
    t3 = m.assign(2 * PS, PS)
    assert t3.vp == 1 and [c.w for c in t3.concurrent] == [2]
    border = border_versions(m.tree, t3)
    assert border == {NodePos(3, 1): 1, NodePos(0, 2): 2}
    # the same links come out of a sequential replay
    seq = ManualBlob(PS)
    seq.update(None, 4 * PS)
    seq.update(PS, 2 * PS)
    assert border_versions(seq.tree, seq.assign(2 * PS, PS)) == border
    m.build(t2)
    m.build(t3)


def test_full_cover_update_has_empty_border():
    m = ManualBlob(PS)
    m.update(None, 4 * PS)
    assert border_versions(m.tree, m.assign(0, 4 * PS)) == {}


def test_pending_leaf_is_not_found_until_built():
    m = ManualBlob(PS)
    m.update(None, 4 * PS)
    t = m.assign(PS, PS)
    with pytest.raises(NotFound):
        m.meta.get_node(m.tree.key(2, NodePos(1, 1)))
    m.build(t)
    assert isinstance(m.meta.get_node(m.tree.key(2, NodePos(1, 1))), Leaf)


# -- read_meta ---------------------------------------------------------------


def test_read_meta_overwrite_shares_outer_pages():
    m = ManualBlob(PS)
    m.update(None, 4 * PS)
    m.update(PS, 2 * PS)
    descs = read_meta(m.tree, 2, 0, 4 * PS, 4 * PS)
    pids = [d.pid for d, _ in descs]
    assert pids == [fixed_pid("p", 1, 0), fixed_pid("p", 2, 0), fixed_pid("p", 2, 1), fixed_pid("p", 1, 3)]
    assert [off for _, off in descs] == [0, PS, 2 * PS, 3 * PS]


def test_read_meta_single_page_and_empty():
    m = ManualBlob(PS)
    m.update(None, 4 * PS)
    assert len(read_meta(m.tree, 1, 2 * PS, PS, 4 * PS)) == 1
    assert read_meta(m.tree, 1, 0, 0, 4 * PS) == []


def test_read_meta_clips_partial_ranges():
    m = ManualBlob(PS)
    m.update(None, 4 * PS)
    descs = read_meta(m.tree, 1, PS - 10, 30, 4 * PS)
    assert [(d.index, d.page_off, d.len, d.src_off, off) for d, off in descs] == [
        (0, PS - 10, 10, PS - 10, PS - 10),
        (1, 0, 20, 0, PS),
    ]


aligned_updates = st.lists(st.tuples(st.booleans(), st.floats(0, 1), st.integers(1, 9)), min_size=1, max_size=25)


def replay(ops, psize=PS):
    """Apply aligned updates; returns the blob and a per-version last-writer table."""
    m = ManualBlob(psize)
    pages = 0
    table = [[]]
    for is_append, frac, n in ops:
        first = pages if is_append else int(frac * pages)
        t, _ = m.update(None if is_append else first * psize, n * psize)
        row = list(table[-1]) + [0] * max(0, first + n - pages)
        for k in range(first, first + n):
            row[k] = t.vw
        pages = max(pages, first + n)
        table.append(row)
    return m, table


@settings(max_examples=40, deadline=None)
@given(aligned_updates, st.data())
def test_read_meta_matches_last_writer_table(ops, data):
    m, table = replay(ops)
    owner_of = {}
    for v in range(1, len(table)):
        first = table[v].index(v)
        for i in range(table[v].count(v)):
            owner_of[fixed_pid("p", v, i)] = (v, first + i)
    for _ in range(5):
        v = data.draw(st.integers(1, len(table) - 1))
        pages = len(table[v])
        lo = data.draw(st.integers(0, pages - 1))
        hi = data.draw(st.integers(lo + 1, pages))
        descs = read_meta(m.tree, v, lo * PS, (hi - lo) * PS, pages * PS)
        assert len(descs) == hi - lo
        for k, (d, off) in zip(range(lo, hi), descs):
            writer, page = owner_of[d.pid]
            assert writer == table[v][k] and page == k and off == k * PS


@settings(max_examples=40, deadline=None)
@given(aligned_updates)
def test_node_counts_match_simulator_and_formula(ops):
    m = ManualBlob(PS)
    sim = TreeSim()
    pages = 0
    for is_append, frac, n in ops:
        first = pages if is_append else int(frac * pages)
        _, count = m.update(None if is_append else first * PS, n * PS)
        pages = max(pages, first + n)
        expected = sim.update(first, n)
        assert m.positions(sim.version) == expected
        root = root_cover(pages)
        formula = n + sum(
            sum(1 for off in range(0, root, 1 << lvl) if intersects((off, 1 << lvl), (first, n)))
            for lvl in range(1, int(math.log2(root)) + 1)
        )
        assert count == len(expected) == formula


def test_append_one_page_counts():
    m = ManualBlob(PS)
    assert [m.update(None, PS)[1] for _ in range(5)] == [1, 2, 3, 3, 4]


@settings(max_examples=25, deadline=None)
@given(aligned_updates, st.data())
def test_read_meta_fetch_bound(ops, data):
    m, table = replay(ops)
    v = len(table) - 1
    pages = len(table[v])
    lo = data.draw(st.integers(0, pages - 1))
    hi = data.draw(st.integers(lo + 1, pages))
    before = m.meta.fetches
    read_meta(m.tree, v, lo * PS, (hi - lo) * PS, pages * PS)
    R = root_cover(pages)
    assert m.meta.fetches - before <= 4 * ((hi - lo) + math.log2(R) + 1)


@settings(max_examples=30, deadline=None)
@given(aligned_updates)
def test_updates_never_touch_existing_nodes(ops):
    m = ManualBlob(PS)
    pages = 0
    for is_append, frac, n in ops:
        before = m.nodes()
        first = pages if is_append else int(frac * pages)
        t, count = m.update(None if is_append else first * PS, n * PS)
        pages = max(pages, first + n)
        after = m.nodes()
        assert all(after[k] == v for k, v in before.items())
        assert len(after) == len(before) + count
        # every child link of the new version points at a stored node
        for (ver, pos), payload in after.items():
            if ver != t.vw:
                continue
            node = decode_node(payload)
            if isinstance(node, Inner):
                for child, cv in zip(NodePos(*pos).children(), (node.vl, node.vr)):
                    if cv is not None:
                        assert (cv, tuple(child)) in after


@settings(max_examples=30, deadline=None)
@given(aligned_updates)
def test_full_read_tiles_blob(ops):
    m, table = replay(ops)
    for v in range(1, len(table)):
        size = len(table[v]) * PS
        descs = read_meta(m.tree, v, 0, size, size)
        at = 0
        for d, off in descs:
            assert off == at
            at += d.len
        assert at == size


# -- overlay algebra ---------------------------------------------------------

P0, P1, P2 = fixed_pid("a"), fixed_pid("b"), fixed_pid("c")


def test_overlay_middle():
    old = [Fragment(0, PS, P0, "x")]
    new = [Fragment(100, 200, P1, "y")]
    assert overlay_fragments(old, new) == (
        Fragment(0, 100, P0, "x", 0),
        Fragment(100, 200, P1, "y", 0),
        Fragment(300, PS - 300, P0, "x", 300),
    )


def test_boundary_leaf_without_predecessor():
    m = ManualBlob(PS)
    f = Fragment(0, 512, P1, "y")
    assert materialize_boundary_leaf(m.tree, 0, [f], None) == Leaf((f,))


def _bytes_of(frags, size):
    """Map each page byte to (pid, source byte) for a fragment list."""
    out = [None] * size
    for f in frags:
        for i in range(f.len):
            out[f.page_off + i] = (f.pid, f.src_off + i)
    return out


extents = st.tuples(st.integers(0, 255), st.integers(1, 256)).map(lambda t: (t[0], min(t[1], 256 - t[0])))


@given(extents, extents, extents)
def test_overlay_twice_equals_composed_extents(base, e1, e2):
    size = 256
    old = [Fragment(base[0], base[1], P0, "x", 7)]
    f1 = Fragment(e1[0], e1[1], P1, "y", 3)
    f2 = Fragment(e2[0], e2[1], P2, "z", 0)
    got = overlay_fragments(overlay_fragments(old, [f1]), [f2])
    expected = [None] * size
    for f in (old[0], f1, f2):
        for i in range(f.len):
            expected[f.page_off + i] = (f.pid, f.src_off + i)
    assert _bytes_of(got, size) == expected
    ends = [f.page_off for f in got]
    assert ends == sorted(ends)
    assert all(a.page_end <= b.page_off for a, b in zip(got, got[1:]))


# -- concurrency -------------------------------------------------------------


def _equal_trees(a: ManualBlob, b: ManualBlob):
    return a.nodes() == b.nodes()


def test_concurrent_three_step_builds_are_byte_identical():
    seq = three_step()
    m = ManualBlob(PS)
    m.update(None, 4 * PS)
    t2 = m.assign(PS, 2 * PS)
    t3 = m.assign(None, PS)
    m.build(t3)  # the v2 writer is paused until v3's metadata is written
    m.build(t2)
    m.publish(t3)
    m.publish(t2)
    assert _equal_trees(m, seq)


def test_boundary_leaf_waits_for_concurrent_predecessor():
    seq = ManualBlob(PS)
    seq.update(None, 4 * PS)
    seq.update(PS + 100, 200)
    seq.update(PS + 250, 300)

    m = ManualBlob(PS)
    m.update(None, 4 * PS)
    t2 = m.assign(PS + 100, 200)
    t3 = m.assign(PS + 250, 300)
    th = threading.Thread(target=m.build, args=(t3,))
    th.start()
    time.sleep(0.05)
    assert th.is_alive()  # blocked on version 2's leaf for page 1
    m.build(t2)
    th.join(5)
    assert not th.is_alive()
    m.publish(t2)
    m.publish(t3)
    assert _equal_trees(m, seq)
    frags = decode_node(m.nodes()[(3, (1, 1))]).fragments
    assert [(f.page_off, f.len) for f in frags] == [(0, 100), (100, 150), (250, 300), (550, PS - 550)]


updates = st.lists(
    st.tuples(st.booleans(), st.floats(0, 1), st.integers(1, 5 * PS)), min_size=2, max_size=12
)


@settings(max_examples=30, deadline=None)
@given(updates, st.randoms(use_true_random=False))
def test_concurrent_builds_equal_sequential(ops, rnd):
    seq = ManualBlob(PS)
    sizes = [0]
    plan = []
    for is_append, frac, n in ops:
        off = None if is_append else int(frac * sizes[-1])
        t, _ = seq.update(off, n)
        sizes.append(t.new_size)
        plan.append((off, n))

    m = ManualBlob(PS)
    errors = []
    threads = []

    def run(t, delay):
        try:
            time.sleep(delay)
            m.build(t)
            m.publish(t)
        except Exception as exc:  # surfaced below
            errors.append(exc)

    for off, n in plan:
        t = m.assign(off, n)
        th = threading.Thread(target=run, args=(t, rnd.random() * 0.004))
        th.start()
        threads.append(th)
        if rnd.random() < 0.3:
            time.sleep(0.002)
    for th in threads:
        th.join(10)
    assert not errors
    assert _equal_trees(m, seq)
