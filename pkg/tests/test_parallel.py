from __future__ import annotations

import threading

from unrect.parallel import in_worker, parallel_map


def test_parallel_map_keeps_input_order():
    assert parallel_map(lambda x: x * x, range(10), threads=4) == [x * x for x in range(10)]
    assert parallel_map(lambda x: x + 1, [3], threads=4) == [4]


def test_nested_maps_run_inline_on_the_worker():
    seen = []

    def inner(item):
        seen.append((item, threading.get_ident(), in_worker()))
        return item

    def outer(item):
        owner = threading.get_ident()
        results = parallel_map(inner, [(item, k) for k in range(4)], threads=4)
        return owner, results

    out = parallel_map(outer, range(3), threads=3)
    assert [r[1] for r in out] == [[(i, k) for k in range(4)] for i in range(3)]
    owners = {i: owner for i, (owner, _) in enumerate(out)}
    for (i, _), ident, flagged in seen:
        assert ident == owners[i]
        assert flagged
    assert not in_worker()
