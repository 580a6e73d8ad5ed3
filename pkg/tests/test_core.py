import math

from hypothesis import given
from hypothesis import strategies as st

from vblob.core import (
    NodePos,
    Side,
    intersects,
    is_pow2,
    new_id,
    page_span,
    parent_of,
    positions_intersecting,
    root_cover,
)

pow2 = st.integers(0, 20).map(lambda e: 1 << e)


def test_intersects_examples():
    assert intersects((0, 2), (1, 1))
    assert not intersects((0, 2), (2, 2))
    assert intersects((1, 3), (0, 8))


def test_intersects_empty_never_overlaps():
    assert not intersects((3, 0), (0, 8))


def test_page_span_examples():
    ps = 4096
    assert page_span((0, 4 * ps), ps) == (0, 4)
    assert page_span((1034, 1024), 1024) == (1, 2)
    assert page_span((3 * ps, 0), ps) == (3, 0)


def test_root_cover_examples():
    assert root_cover(4) == 4
    assert root_cover(5) == 8
    assert root_cover(0) == 0


def test_parent_of_examples():
    assert parent_of(NodePos(2, 1)) == (NodePos(2, 2), Side.LEFT)
    assert parent_of(NodePos(3, 1)) == (NodePos(2, 2), Side.RIGHT)
    assert parent_of(NodePos(0, 4)) == (NodePos(0, 8), Side.LEFT)


def test_ids_are_distinct():
    ids = {new_id() for _ in range(1000)}
    assert len(ids) == 1000 and all(len(i) == 16 for i in ids)


@given(st.integers(0, 1 << 16), pow2)
def test_parent_chain_reaches_root(offset_units, size):
    pos = NodePos((offset_units // size) * size, size)
    root = root_cover(pos.end)
    steps = int(math.log2(root // size))
    for _ in range(steps):
        parent, side = parent_of(pos)
        assert parent.contains(pos) and parent.size == 2 * pos.size
        assert parent.is_valid()
        assert parent.children()[side.value] == pos
        pos = parent
    assert pos == NodePos(0, root)


@given(st.integers(0, 10**6), st.integers(0, 10**5), st.integers(0, 5000), st.integers(0, 5000), pow2)
def test_page_span_monotone(off, size, grow_left, grow_right, psize):
    grow_left = min(grow_left, off)
    a_first, a_n = page_span((off, size), psize)
    b_first, b_n = page_span((off - grow_left, size + grow_left + grow_right), psize)
    if a_n:
        assert b_first <= a_first and b_first + b_n >= a_first + a_n


@given(st.integers(0, 10**7), st.integers(1, 10**6), pow2)
def test_page_span_minimal_cover(off, size, psize):
    first, n = page_span((off, size), psize)
    assert first * psize <= off < (first + 1) * psize
    assert (first + n - 1) * psize < off + size <= (first + n) * psize


@given(st.integers(1, 10**9))
def test_root_cover_bounds(n):
    r = root_cover(n)
    assert is_pow2(r) and n <= r < 2 * n


@given(st.integers(0, 300), st.integers(1, 300))
def test_positions_intersecting_matches_brute_force(first, n):
    root = root_cover(first + n)
    got = list(positions_intersecting(first, n, root))
    want = set()
    size = 1
    while size <= root:
        for off in range(0, root, size):
            if intersects((off, size), (first, n)):
                want.add(NodePos(off, size))
        size *= 2
    assert set(got) == want and len(got) == len(want)
