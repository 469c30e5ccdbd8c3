import pytest

from mercurius.core import Event, Label, OrderKind, Ordering, Party
from mercurius.orderings import OrderStore
from mercurius.treeshare import (
    EMPTY, FULL, LEFT, RIGHT, TreeShare, fractional_closure, from_path, meet, ts_and, ts_or,
)

from conftest import random_share


def test_canonical_form_collapses_equal_leaves():
    assert TreeShare.node(FULL, FULL) == FULL
    assert TreeShare.node(EMPTY, EMPTY) == EMPTY
    assert TreeShare.node(FULL, EMPTY) == LEFT


@pytest.mark.parametrize("path", ["", "L", "R", "LR", "RRL"])
def test_path_literals_render_back(path):
    assert str(from_path(path)) == (path or "F")


def test_invalid_path_letter():
    with pytest.raises(ValueError):
        from_path("LX")


def test_halves_partition_a_share():
    assert FULL.halves() == (LEFT, RIGHT)
    left, right = RIGHT.halves()
    assert left == from_path("RL") and right == from_path("RR")


def test_meet_treats_none_as_full():
    assert meet(None, LEFT) == LEFT
    assert meet(LEFT, None) == LEFT
    assert meet(None, None) is None
    assert meet(FULL, FULL) is None
    assert meet(LEFT, RIGHT) == EMPTY


def test_lattice_laws(rng):
    for _ in range(1000):
        a, b, c = random_share(rng), random_share(rng), random_share(rng)
        assert ts_and(a, b) == ts_and(b, a)
        assert ts_or(a, b) == ts_or(b, a)
        assert ts_and(a, ts_and(b, c)) == ts_and(ts_and(a, b), c)
        assert ts_or(a, ts_or(b, c)) == ts_or(ts_or(a, b), c)
        assert ts_and(a, ts_or(a, b)) == a
        assert ts_or(a, ts_and(a, b)) == a
        assert ts_and(a, ts_or(b, c)) == ts_or(ts_and(a, b), ts_and(a, c))
        assert ts_and(a, FULL) == a and ts_or(a, EMPTY) == a
        assert ts_and(a, EMPTY) == EMPTY and ts_or(a, FULL) == FULL
        h1, h2 = a.halves()
        assert ts_or(h1, h2) == a
        assert ts_and(h1, h2) == EMPTY
        assert a.covers(ts_and(a, b))


def test_fractional_closure_joins_branches():
    shares = fractional_closure([
        ("HB", "a", "b", LEFT),
        ("HB", "b", "c", LEFT),
        ("HB", "a", "c", RIGHT),
    ])
    assert shares[("HB", "a", "c")] == FULL
    assert shares[("HB", "a", "b")] == LEFT


def test_fractional_closure_follows_cb_then_hb_only():
    shares = fractional_closure([
        ("CB", "a", "b", None),
        ("HB", "b", "c", LEFT),
        ("HB", "c", "d", None),
        ("CB", "d", "e", None),
    ])
    assert shares[("HB", "a", "c")] == LEFT
    assert shares[("HB", "a", "d")] == LEFT
    assert ("HB", "c", "e") not in shares
    assert ("HB", "b", "a") not in shares


def test_disjoint_shares_derive_nothing():
    shares = fractional_closure([("HB", "a", "b", LEFT), ("HB", "b", "c", RIGHT)])
    assert ("HB", "a", "c") not in shares


def test_full_shares_close_like_plain_orderings(rng):
    for _ in range(300):
        events = [Event(Party(rng.choice("ABC")), Label((i,))) for i in range(1, rng.randint(2, 10) + 1)]
        facts = []
        for _ in range(rng.randint(0, 16)):
            i, j = sorted(rng.sample(range(len(events)), 2))
            facts.append(Ordering(rng.choice([OrderKind.CB, OrderKind.HB]), events[i], events[j]))
        shares = fractional_closure([(f.kind.value, f.src, f.dst, FULL) for f in facts])
        assert set(shares.values()) <= {FULL}
        closed = OrderStore(facts=facts).closure().closed_facts
        assert set(shares) == {(f.kind.value, f.src, f.dst) for f in closed}
