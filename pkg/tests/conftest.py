"""Shared fixtures: example protocols and seeded random generators."""

import itertools
import random
from pathlib import Path

import pytest

from mercurius.core import (
    Channel, Choice, Event, Label, Msg, OrderKind, Ordering, Par, Party, Seq, Trans,
    Transmission, seq_of,
)
from mercurius.parser import parse, parse_protocol
from mercurius.treeshare import EMPTY, FULL, TreeShare

PROTOCOLS = Path(__file__).resolve().parent.parent / "protocols"

OVERVIEW = "A->C:c<v.t1>; A->B:c2<v.t2>; B->C:c<v.t3>"
TWO_BUYER = (
    "B1->S:s<v.Order>; (S->B1:b1<v.Price> * S->B2:b2<v.Price>); B1->B2:b2<v.Amt>; "
    "(B2->S:s<v.No> \\/ (B2->S:s<v.Yes>; B2->S:s<v.Addr>))"
)
TREE_SHARE = "A->B:c<v.t1>; (A->B:c<v.t2> \\/ emp); A->B:c<v.t3>"

PARTIES = ["A", "B", "C", "D"]
CHANNELS = ["c1", "c2", "c3"]


@pytest.fixture
def overview():
    return parse_protocol(OVERVIEW)


@pytest.fixture
def two_buyer():
    return parse_protocol(TWO_BUYER)


@pytest.fixture
def tree_share_protocol():
    return parse_protocol(TREE_SHARE)


@pytest.fixture
def load():
    """Parse a file from protocols/ by stem."""
    def _load(name: str):
        return parse((PROTOCOLS / f"{name}.mpp").read_text(encoding="utf-8"))
    return _load


@pytest.fixture
def protocol_path():
    return lambda name: PROTOCOLS / f"{name}.mpp"


def event(text: str) -> Event:
    party, label = text.split("^")
    return Event(Party(party), Label.of(label))


def hb(src: str, dst: str) -> Ordering:
    return Ordering(OrderKind.HB, event(src), event(dst))


def cb(src: str, dst: str) -> Ordering:
    return Ordering(OrderKind.CB, event(src), event(dst))


def random_protocol(rng: random.Random, max_transmissions: int = 6):
    """
    A well-formed, Invoke-free protocol with at most `max_transmissions`.

    Concurrent operands get disjoint channel sets; every choice starts with
    two transmissions between the same peers on the same channel and stays
    between those peers.
    """
    counter = itertools.count(1)

    def trans(sender: str, receiver: str, channel: str):
        n = next(counter)
        return Trans(Transmission(Party(sender), Party(receiver), Msg("v", f"t{n}"),
                                  Channel(channel), Label((n,))))

    def gen(budget: int, chans):
        if budget == 1 or rng.random() < 0.2:
            sender, receiver = rng.sample(PARTIES, 2)
            node = trans(sender, receiver, rng.choice(chans))
            return node if budget == 1 else Seq(node, gen(budget - 1, chans))
        kind = rng.choice(["seq", "seq", "par", "choice"])
        split = rng.randint(1, budget - 1)
        if kind == "par" and len(chans) >= 2:
            shuffled = rng.sample(chans, len(chans))
            cut = rng.randint(1, len(chans) - 1)
            return Par(gen(split, shuffled[:cut]), gen(budget - split, shuffled[cut:]))
        if kind == "choice":
            sender, receiver = rng.sample(PARTIES, 2)
            channel = rng.choice(chans)

            def branch(size: int):
                items = [trans(sender, receiver, channel)]
                for _ in range(size - 1):
                    a, b = rng.sample([sender, receiver], 2)
                    items.append(trans(a, b, rng.choice(chans)))
                return seq_of(items)

            return Choice(branch(split), branch(budget - split))
        return Seq(gen(split, chans), gen(budget - split, chans))

    return gen(rng.randint(1, max_transmissions), CHANNELS)


def random_share(rng: random.Random, depth: int = 3) -> TreeShare:
    if depth == 0 or rng.random() < 0.3:
        return FULL if rng.random() < 0.5 else EMPTY
    return TreeShare.node(random_share(rng, depth - 1), random_share(rng, depth - 1))


@pytest.fixture
def rng():
    return random.Random(20240611)


@pytest.fixture
def corpus():
    """500 random well-formed protocols."""
    generator = random.Random(7)
    return [random_protocol(generator) for _ in range(500)]
