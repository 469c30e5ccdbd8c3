import pytest

from mercurius.core import (
    Assume, Guard, Label, OccTrans, Ord, OrderKind, Ordering, OrdT, Party, walk,
)
from mercurius.errors import UnexpandedInvoke
from mercurius.graph import build_graph
from mercurius.orderings import assumptions_of, entails
from mercurius.parser import parse_protocol, render_protocol
from mercurius.refine import (
    BOT, Atom, GuardStatus, Or, Star, check_race_freedom, collect, par_fuse,
    refine_protocol, seq_fuse,
)
from mercurius.treeshare import LEFT

from conftest import event


def guards_of(g):
    return {str(node.assertion) for node in walk(g) if isinstance(node, Guard)}


def assumptions(g):
    return [node.assertion for node in walk(refine_protocol(g)) if isinstance(node, Assume)]


def test_two_buyer_guards(two_buyer):
    refined = refine_protocol(two_buyer)
    assert guards_of(refined) == {"3 <HB 4", "1 <HB 5", "1 <HB 6", "6 <HB 7"}


def test_two_buyer_assumptions(two_buyer):
    assumed = assumptions(two_buyer)
    transmissions = [a for a in assumed if isinstance(a, OccTrans)]
    assert [a.label for a in transmissions] == [Label((i,)) for i in range(1, 8)]
    orderings = {str(a) for a in assumed if isinstance(a, Ord)}
    assert {"S^2 <HB S^5", "S^3 <HB S^5", "S^2 <HB S^6", "S^3 <HB S^6"} <= orderings
    assert {"S^1 <HB S^2", "S^1 <HB S^3", "S^6 <HB S^7"} <= orderings
    assert {"B1^1 <HB B1^2", "B1^2 <HB B1^4", "B2^3 <HB B2^4", "B2^6 <HB B2^7"} <= orderings
    assert "S^2 <HB S^3" not in orderings


def test_assumption_follows_its_transmission(overview):
    refined = refine_protocol(overview)
    text = render_protocol(refined)
    assert text.startswith("A->C:c<v.t1>@1; assume(A->C:1); A->B:c2<v.t2>@2; assume(A->B:2)")
    assert text.endswith("guard(1 <HB 3)")


def test_two_buyer_race_report(two_buyer):
    report = check_race_freedom(refine_protocol(two_buyer))
    statuses = {str(e.guard): e.status for e in report.entries}
    assert statuses == {
        "3 <HB 4": GuardStatus.NEEDS_SYNC,
        "1 <HB 5": GuardStatus.IMPLICIT,
        "1 <HB 6": GuardStatus.IMPLICIT,
        "6 <HB 7": GuardStatus.IMPLICIT,
    }
    assert not report.race_free
    pending = next(e for e in report.entries if e.status is GuardStatus.NEEDS_SYNC)
    assert pending.witness == ["S^3 <HB B1^4"]
    assert pending.provenance == "adjacent transmissions 3 and 4"


def test_sync_edge_discharges_two_buyer(two_buyer):
    report = check_race_freedom(refine_protocol(two_buyer), [(event("S^3"), event("S^2"))])
    assert report.race_free
    guard = OrdT(OrderKind.HB, Label((3,)), Label((4,)))
    assert report.status_of(guard) is GuardStatus.DISCHARGED_BY_SYNC


def test_overview_guard_is_implicit(overview):
    report = check_race_freedom(refine_protocol(overview))
    assert report.race_free
    (entry,) = report.entries
    assert entry.status is GuardStatus.IMPLICIT
    assert [c.status for c in entry.components] == [GuardStatus.IMPLICIT, GuardStatus.IMPLICIT]
    assert "[CB-HB]" in entry.witness


def test_intro_senders_need_sync(load):
    f = load("intro_race")
    refined = refine_protocol(f.main_def.body)
    report = check_race_freedom(refined)
    (entry,) = report.entries
    assert entry.status is GuardStatus.NEEDS_SYNC
    assert entry.witness == ["A^1 <HB B^2"]
    synced = check_race_freedom(refined, [(event("A^1"), event("B^2"))])
    assert synced.entries[0].status is GuardStatus.DISCHARGED_BY_SYNC


def test_empty_branch_uses_tree_shares(tree_share_protocol):
    refined = refine_protocol(tree_share_protocol)
    assert guards_of(refined) == {"1 <HB 3 @R", "1 <HB 2 @L", "2 <HB 3 @L"}
    assert check_race_freedom(refined).race_free


def test_branch_shares_combine_in_the_store(tree_share_protocol):
    store = assumptions_of(refine_protocol(tree_share_protocol)).closure()
    assert store.has(OrderKind.HB, event("A^1"), event("A^3"))
    assert store.share_of(OrderKind.HB, event("A^1"), event("A^2")) == LEFT


def test_boundary_fusion():
    a, b = Atom("a"), Atom("b")
    assert seq_fuse(BOT, a) == a
    assert seq_fuse(a, b) == a
    assert seq_fuse(Or(a, BOT), b) == Or(a, b)
    assert par_fuse(a, BOT) == a
    assert par_fuse(a, b) == Star(a, b)
    assert par_fuse(Or(a, b), Atom("c")) == Or(Star(a, Atom("c")), Star(b, Atom("c")))


def test_collect_boundaries(two_buyer):
    summary = collect(two_buyer)
    seller = Party("S")
    assert str(summary.back.party(seller)) == "S^1"
    assert str(summary.front.party(seller)) == "(S^5 \\/ S^7)"
    par_summary = collect(two_buyer.right.left)
    assert str(par_summary.back.party(seller)) == "(S^2 * S^3)"
    assert summary.front.to_dict()["Γ"]["b2"] == "4"


def test_refine_needs_expanded_protocol(load):
    f = load("modular")
    with pytest.raises(UnexpandedInvoke):
        refine_protocol(f.defs["H"].body)


def test_refine_against_a_frontier(overview):
    before = collect(parse_protocol("C->A:c<v.t0>@9")).front
    refined = refine_protocol(overview, before)
    guards = guards_of(refined)
    assert "C^9 <HB A^1" in guards
    assert "A^9 <HB C^1" in guards
    assumed = {str(node.assertion) for node in walk(refined) if isinstance(node, Assume)}
    assert "A^9 <HB A^1" in assumed
    assert "C^9 <HB C^1" in assumed


def linked_pairs_ordered(g, refined) -> bool:
    store = assumptions_of(refined).closure()
    graph = build_graph(g)
    for i1, i2 in graph.linked_pairs():
        t1, t2 = graph.transmissions[i1], graph.transmissions[i2]
        for e1, e2 in ((t1.send_event, t2.send_event), (t1.recv_event, t2.recv_event)):
            if not entails(store, Ord(Ordering(OrderKind.HB, e1, e2))):
                return False
    return True


def test_guards_entailed_iff_linked_pairs_ordered(corpus):
    for g in corpus:
        refined = refine_protocol(g)
        report = check_race_freedom(refined)
        assert report.race_free == linked_pairs_ordered(g, refined), render_protocol(g)


def test_guards_relate_linked_pairs_only(corpus):
    for g in corpus:
        graph = build_graph(g)
        linked = set(graph.linked_pairs())
        for node in walk(refine_protocol(g)):
            if isinstance(node, Guard):
                assert (node.assertion.src, node.assertion.dst) in linked
