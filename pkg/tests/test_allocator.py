import threading
from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from vblob.allocator import ProviderManager
from vblob.errors import NoProviders, UnknownProvider


def manager(*addrs):
    m = ProviderManager()
    for a in addrs:
        m.register(a)
    return m


def test_registered_provider_is_allocated():
    assert manager("A").allocate(1) == ["A"]


def test_reregistration_keeps_one_entry():
    m = manager("A", "A")
    assert [p.addr for p in m.providers()] == ["A"]


def test_empty_registry():
    with pytest.raises(NoProviders):
        ProviderManager().allocate(1)


def test_equal_loads_give_a_permutation():
    assert sorted(manager("A", "B", "C", "D").allocate(4)) == ["A", "B", "C", "D"]


def test_single_provider_repeats():
    assert manager("A").allocate(3) == ["A", "A", "A"]


def test_report_steers_to_least_loaded():
    m = manager("A", "B")
    m.report("A", 10)
    m.report("B", 0)
    assert m.allocate(1) == ["B"]


def test_report_unknown():
    with pytest.raises(UnknownProvider):
        manager("A").report("Z", 1)


def test_equal_reports_round_robin():
    m = manager("A", "B", "C")
    for a in "ABC":
        m.report(a, 5)
    got = m.allocate(6)
    assert got[:3] == got[3:] and sorted(got[:3]) == ["A", "B", "C"]


def test_balance_over_many_single_allocations():
    addrs = [f"p{i}" for i in range(7)]
    m = manager(*addrs)
    counts = Counter(m.allocate(1)[0] for _ in range(10_000))
    assert max(counts.values()) - min(counts.values()) <= 1


def test_concurrent_allocates_stay_balanced():
    m = manager(*[f"p{i}" for i in range(5)])
    out = []
    lock = threading.Lock()

    def run():
        got = [m.allocate(1)[0] for _ in range(1000)]
        with lock:
            out.extend(got)

    threads = [threading.Thread(target=run) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    counts = Counter(out)
    assert max(counts.values()) - min(counts.values()) <= 1


@given(st.lists(st.sampled_from("ABCDEF"), min_size=1, max_size=12), st.lists(st.integers(1, 9), max_size=20))
def test_never_returns_unregistered(regs, sizes):
    m = manager(*regs)
    for n in sizes:
        assert set(m.allocate(n)) <= set(regs)
