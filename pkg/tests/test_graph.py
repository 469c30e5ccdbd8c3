import pytest

from mercurius.core import Invoke, Label, OccTrans, Party
from mercurius.errors import UnexpandedInvoke, UnknownLabel
from mercurius.graph import adjacent, build_graph, ev, first, linked, sequenced, tr
from mercurius.parser import parse_assertion, parse_protocol

from conftest import event


def labels(transmissions):
    return sorted(t.label.path[0] for t in transmissions)


def test_tr_and_first(two_buyer):
    assert labels(tr(two_buyer)) == list(range(1, 8))
    assert labels(first(two_buyer)) == [1]
    assert labels(first(two_buyer.right)) == [2, 3]


def test_first_skips_transmission_free_prefix():
    g = parse_protocol("emp; assume(A^1); A->B:c<v.t>")
    assert labels(first(g)) == [1]


def test_ev_of_protocol_and_assertions(overview):
    assert len(ev(overview)) == 6
    assert ev(parse_assertion("A^1 <HB B^2 & !C^3")) == {event("A^1"), event("B^2"), event("C^3")}
    assert ev(OccTrans(Label((4,)), Party("A"), Party("B"))) == {event("A^4"), event("B^4")}
    assert ev(parse_assertion("1 <HB 2")) == frozenset()


def test_sequenced_follows_structure(two_buyer):
    assert sequenced(two_buyer, 1, 4)
    assert not sequenced(two_buyer, 2, 3)
    assert not sequenced(two_buyer, 5, 6)
    assert not sequenced(two_buyer, 4, 1)


def test_adjacent_and_linked(two_buyer):
    assert adjacent(two_buyer, 3, 4)
    assert adjacent(two_buyer, 1, 5)
    assert adjacent(two_buyer, 1, 6)
    assert adjacent(two_buyer, 6, 7)
    assert not adjacent(two_buyer, 1, 7)
    assert linked(two_buyer, 1, 7)
    assert not linked(two_buyer, 2, 4)


def test_overview_pairs(overview):
    graph = build_graph(overview)
    assert graph.adjacent_pairs() == [(Label((1,)), Label((3,)))]
    assert graph.linked_pairs() == [(Label((1,)), Label((3,)))]
    assert adjacent(overview, "1", "3")


def test_unknown_label(overview):
    with pytest.raises(UnknownLabel):
        sequenced(overview, 1, 9)


def test_invoke_must_be_expanded():
    with pytest.raises(UnexpandedInvoke):
        tr(Invoke("H", (Party("A"),), (), Label((1,))))


def test_dot_output(overview):
    dot = build_graph(overview).to_dot()
    assert dot.startswith("digraph protocol {")
    assert '"1" -> "2" [style=dashed];' in dot
    assert '"2" -> "3" [style=dashed];' in dot
    # the direct 1 -> 3 edge is implied and removed by the reduction
    assert '"1" -> "3"' not in dot
