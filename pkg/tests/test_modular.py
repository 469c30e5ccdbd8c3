import pytest

from mercurius.core import Channel, Invoke, Label, OrdT, Party, transmissions
from mercurius.errors import ArityMismatch, UnboundedRecursion, UnknownDefinition
from mercurius.modular import (
    check_recursion, check_site, check_usage, derive_presync, expand_main, instantiate,
    usage_sites,
)
from mercurius.parser import parse
from mercurius.refine import GuardStatus, check_race_freedom, refine_protocol


@pytest.fixture
def defs(load):
    return load("modular").defs


def test_presync_condition_of_single_transmission(defs):
    condition = derive_presync(defs, defs["H0"])
    assert {str(clause) for clause in condition.clauses} == {
        "send(F.Γ(c)) <=HB F.K(A)",
        "recv(F.Γ(c)) <=HB F.K(B)",
    }
    assert condition.no_candidate == []
    assert condition.to_dict()["definition"] == "H0"


def test_usage_where_receiver_starts_next_needs_sync(defs):
    (site,) = usage_sites(defs, "H")
    result = check_site(defs, site)
    assert not result.holds
    assert result.to_dict()["callee"] == "H0"
    assert result.to_dict()["label"] == "2"


def test_usage_with_same_sender_is_synchronized(defs):
    (site,) = usage_sites(defs, "H1")
    result = check_site(defs, site)
    assert result.holds
    assert all(ok for _, ok in result.obligations)


def test_tail_recursion(defs):
    assert check_recursion(defs, defs["H5"])
    assert not check_recursion(defs, defs["H5b"])
    assert check_recursion(defs, defs["H0"])


def test_unrolling_bound(defs):
    assert len(transmissions(expand_main(defs, "H5", max_unroll=2))) == 9
    assert len(transmissions(expand_main(defs, "H5", max_unroll=0))) == 3


def test_expand_main_inlines_invocations(defs):
    body = expand_main(defs, "H")
    sent = [(t.sender.name, t.receiver.name) for t in transmissions(body)]
    assert sent == [("A", "B"), ("B", "C")]


def test_instantiate_reroots_labels(defs):
    body = instantiate(defs, "H0", [Party("X"), Party("Y")], [Channel("d")], root=Label((5,)))
    (t,) = transmissions(body)
    assert str(t.label) == "5#1"
    assert (t.sender, t.receiver, t.channel) == (Party("X"), Party("Y"), Channel("d"))


def test_wrong_argument_count(defs):
    with pytest.raises(ArityMismatch):
        instantiate(defs, "H0", [Party("X")], [Channel("d")])


def test_unknown_definition(defs):
    with pytest.raises(UnknownDefinition):
        expand_main(defs, "Nope")


def test_mutual_recursion_is_rejected():
    f = parse("def P(A,B;c)<i,F> = A->B:c<v.t>; Q(A,B;c)@2;\n"
              "def Q(A,B;c)<i,F> = B->A:c<v.t>; P(A,B;c)@2;\n"
              "main P;")
    with pytest.raises(UnboundedRecursion):
        expand_main(f.defs, "P")


def test_non_tail_self_call_is_rejected():
    f = parse("def R(A,B;c)<i,F> = R(A,B;c)@5; A->B:c<v.t>;\nmain R;")
    with pytest.raises(UnboundedRecursion):
        check_recursion(f.defs, f.defs["R"])


def test_sites_skip_nothing_but_self_calls_are_marked(defs):
    sites = usage_sites(defs, "H5")
    assert [s.invoke.name for s in sites] == ["H5"]
    assert isinstance(sites[0].invoke, Invoke)


def test_check_usage_at_a_site(defs):
    (site,) = usage_sites(defs, "H1")
    callee = defs["H0"]
    assert check_usage(defs, callee, site.frontier, site.store,
                       site.invoke.parties, site.invoke.channels)
    with pytest.raises(ArityMismatch):
        check_usage(defs, callee, site.frontier, site.store, site.invoke.parties[:1],
                    site.invoke.channels)


SINGLE = "def H0(A,B;c)<i,F> = A->B:c<v.t>;\n"


def random_caller(rng):
    """A caller G whose prefix uses c at least once, then invokes H0 on c."""
    parties = ["A", "B", "C"]
    size = rng.randint(1, 3)
    items = []
    for position in range(size):
        sender, receiver = rng.sample(parties, 2)
        chan = "c" if position == size - 1 and not any(":c<" in i for i in items) \
            else rng.choice(["c", "d"])
        items.append(f"{sender}->{receiver}:{chan}<v.t>")
    p, q = rng.sample(parties, 2)
    call = f"H0({p},{q};c)@{size + 1}"
    text = SINGLE + f"def G(A,B,C;c,d)<i,F> = {'; '.join(items + [call])};\nmain G;"
    return parse(text), Label((size + 1, 1)), text


def test_usage_check_agrees_with_inlined_protocol(rng):
    verdicts = set()
    for _ in range(200):
        f, inlined_label, text = random_caller(rng)
        (site,) = usage_sites(f.defs, "G")
        modular = check_site(f.defs, site).holds
        report = check_race_freedom(refine_protocol(expand_main(f.defs, "G")))
        (entry,) = [e for e in report.entries
                    if isinstance(e.guard, OrdT) and e.guard.dst == inlined_label]
        inlined = entry.status is GuardStatus.IMPLICIT
        assert modular == inlined, text
        assert modular == check_usage(f.defs, f.defs["H0"], site.frontier, site.store,
                                      site.invoke.parties, site.invoke.channels)
        verdicts.add(modular)
    assert verdicts == {True, False}


def test_receiver_turning_sender_is_synchronized_by_its_receive():
    f = parse(SINGLE + "def G(A,B;c)<i,F> = A->B:c<v.t>; H0(B,A;c)@2;\nmain G;")
    (site,) = usage_sites(f.defs, "G")
    result = check_site(f.defs, site)
    assert dict(result.obligations) == {"A^1 <=HB B^1": True, "B^1 <=HB A^1": False}
    assert not result.holds


def random_library(rng):
    parties = ["A", "B", "C"]
    size = rng.randint(1, 3)
    items = []
    for _ in range(size):
        sender, receiver = rng.sample(parties, 2)
        items.append(f"{sender}->{receiver}:c<v.t>")
    calls = rng.random() < 0.5
    if calls:
        p, q = rng.sample(parties, 2)
        items.append(f"H0({p},{q};c)@{size + 1}")
    args = ",".join(rng.sample(parties, 3))
    items.append(f"R({args};c)@{size + 2}")
    text = SINGLE + f"def R(A,B,C;c)<i,F> = {'; '.join(items)};\nmain R;"
    return parse(text), size + int(calls)


def test_unrolled_labels_are_fresh(rng):
    for _ in range(100):
        f, per_round = random_library(rng)
        for unroll in range(4):
            body = expand_main(f.defs, "R", max_unroll=unroll)
            labels = [t.label for t in transmissions(body)]
            assert len(labels) == per_round * (unroll + 1)
            assert len(set(labels)) == len(labels)
            root = Label((rng.randint(1, 9),))
            placed = instantiate(f.defs, "R", [Party("X"), Party("Y"), Party("Z")],
                                 [Channel("e")], root=root, max_unroll=unroll)
            rooted = [t.label for t in transmissions(placed)]
            assert len(set(rooted)) == len(rooted) == len(labels)
            assert all(label.path[0] == root.path[0] for label in rooted)
