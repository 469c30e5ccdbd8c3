"""
The ordering-constraint store and its closure.

A store holds occurred events and CB / HB / weak-HB facts. Closure adds
the HB facts derivable by the sound propagation rules:

    HB ∘ HB   -> HB    [HB-HB]
    CB ∘ HB   -> HB    [CB-HB]
    HB ∘ WHB  -> HB    [HB-HB(a)]
    WHB ∘ HB  -> HB    [HB-HB(b)]
    WHB ∘ WHB -> WHB   [HB-HB(c)]

HB ∘ CB is never composed: a receive can still race ahead of an event that
merely happened before its send.
"""

import logging
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Deque, Dict, FrozenSet, Iterable, List, Optional, Tuple

from .core import (
    And, Assertion, Assume, Event, Implies, NotEvent, OccEvent, OccTrans, Ord,
    OrderKind, Ordering, OrdT, Protocol, ord_decompose, walk,
)
from .errors import InconsistentStore, MercuriusError
from .treeshare import FULL, TreeShare, fractional_closure

logger = logging.getLogger(__name__)

CB, HB, WHB = OrderKind.CB, OrderKind.HB, OrderKind.WHB

RULE_ASSUMED = "assumed"
RULE_FRACTIONAL = "[fractional]"

PROPAGATION_RULES: Dict[Tuple[OrderKind, OrderKind], Tuple[OrderKind, str]] = {
    (HB, HB): (HB, "[HB-HB]"),
    (CB, HB): (HB, "[CB-HB]"),
    (HB, WHB): (HB, "[HB-HB(a)]"),
    (WHB, HB): (HB, "[HB-HB(b)]"),
    (WHB, WHB): (WHB, "[HB-HB(c)]"),
}

FactKey = Tuple[OrderKind, object, object]


@dataclass
class Derivation:
    """How a fact entered the closed store: assumed, or a rule over two premises."""
    fact: Ordering
    rule: str
    premises: List["Derivation"] = field(default_factory=list)

    def rules_used(self) -> List[str]:
        used = [] if self.rule == RULE_ASSUMED else [self.rule]
        for premise in self.premises:
            used.extend(premise.rules_used())
        return used

    def render(self, indent: int = 0) -> str:
        pad = "  " * indent
        lines = [f"{pad}{self.fact}  {self.rule}"]
        for premise in self.premises:
            lines.append(premise.render(indent + 1))
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "fact": str(self.fact),
            "rule": self.rule,
            "premises": [p.to_dict() for p in self.premises],
        }


def _key(o: Ordering) -> FactKey:
    return o.kind, o.src, o.dst


def _is_must(o: Ordering) -> bool:
    return o.share is None or o.share.is_full


class OrderStore:
    """
    Proof context: occurred events plus ordering facts.

    Stores are values. `closure()` returns a new store whose closed facts are
    cached; `with_*` helpers return extended copies.
    """

    def __init__(self, occurred: Iterable[Event] = (), facts: Iterable[Ordering] = (),
                 conditional: Iterable[Implies] = ()):
        self.occurred: FrozenSet[Event] = frozenset(occurred)
        self.facts: FrozenSet[Ordering] = frozenset(facts)
        self.conditional: Tuple[Implies, ...] = tuple(conditional)
        self._derivations: Optional[Dict[FactKey, Derivation]] = None
        self._shares: Dict[FactKey, TreeShare] = {}

    def __repr__(self) -> str:
        return f"OrderStore(occurred={len(self.occurred)}, facts={len(self.facts)})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, OrderStore):
            return NotImplemented
        return self.occurred == other.occurred and self.facts == other.facts

    def __hash__(self) -> int:
        return hash((self.occurred, self.facts))

    def with_facts(self, facts: Iterable[Ordering]) -> "OrderStore":
        return OrderStore(self.occurred, self.facts | frozenset(facts), self.conditional)

    def with_occurred(self, events: Iterable[Event]) -> "OrderStore":
        return OrderStore(self.occurred | frozenset(events), self.facts, self.conditional)

    @property
    def is_closed(self) -> bool:
        return self._derivations is not None

    def closure(self) -> "OrderStore":
        if self.is_closed:
            return self
        closed = OrderStore(self.occurred, self.facts, self.conditional)
        closed._derivations, closed._shares = _close(self.facts)
        logger.debug(f"closure: {len(self.facts)} facts -> {len(closed._derivations)}")
        return closed

    @property
    def closed_facts(self) -> FrozenSet[Ordering]:
        derivations = self.closure()._derivations
        return frozenset(d.fact for d in derivations.values())

    def has(self, kind: OrderKind, src: object, dst: object) -> bool:
        return (kind, src, dst) in self.closure()._derivations

    def share_of(self, kind: OrderKind, src: object, dst: object) -> Optional[TreeShare]:
        """Share under which the ordering is derivable (None if not at all)."""
        store = self.closure()
        if (kind, src, dst) in store._derivations:
            return FULL
        return store._shares.get((kind, src, dst))

    def derivation(self, kind: OrderKind, src: object, dst: object) -> Optional[Derivation]:
        return self.closure()._derivations.get((kind, src, dst))

    def to_dict(self) -> dict:
        return {
            "occurred": sorted(str(e) for e in self.occurred),
            "facts": sorted(str(f) for f in self.facts),
        }


def _close(facts: FrozenSet[Ordering]) -> Tuple[Dict[FactKey, Derivation], Dict[FactKey, TreeShare]]:
    must = [f for f in facts if _is_must(f)]
    partial = [f for f in facts if not _is_must(f)]
    derivations = _saturate(must)
    shares: Dict[FactKey, TreeShare] = {}
    if not partial:
        return derivations, shares

    # Partial facts are combined by share; whatever reaches the full share
    # becomes a must-fact and is fed back into the main closure.
    promoted_keys: set = set()
    while True:
        inputs = [(kind.value, src, dst, None) for (kind, src, dst) in derivations
                  if kind in (CB, HB)]
        inputs += [(f.kind.value, f.src, f.dst, f.share) for f in partial]
        fractional = fractional_closure(inputs)
        promoted = []
        shares = {}
        for (kind_name, src, dst), share in fractional.items():
            key = (OrderKind(kind_name), src, dst)
            if share.is_full:
                if key not in derivations:
                    promoted.append(Ordering(key[0], src, dst))
            else:
                shares[key] = share
        if not promoted:
            return derivations, shares
        promoted_keys.update(map(_key, promoted))
        seeded = [d.fact for d in derivations.values()
                  if d.rule in (RULE_ASSUMED, RULE_FRACTIONAL)]
        derivations = _saturate(seeded + promoted, fractional=promoted_keys)


def _saturate(facts: Iterable[Ordering], fractional: Optional[set] = None) -> Dict[FactKey, Derivation]:
    """Worklist fixpoint of the propagation rules."""
    known: Dict[FactKey, Derivation] = {}
    outgoing: Dict[object, List[FactKey]] = defaultdict(list)
    incoming: Dict[object, List[FactKey]] = defaultdict(list)
    worklist: Deque[FactKey] = deque()
    fractional = fractional or set()

    def add(key: FactKey, derivation: Derivation):
        kind, src, dst = key
        if src == dst:
            if kind is HB:
                raise InconsistentStore(f"happens-before cycle through {src}", [src])
            if kind is WHB:
                return
        if key in known:
            return
        known[key] = derivation
        outgoing[src].append(key)
        incoming[dst].append(key)
        worklist.append(key)

    def compose(k1: FactKey, k2: FactKey):
        rule = PROPAGATION_RULES.get((k1[0], k2[0]))
        if rule is None:
            return
        kind, name = rule
        key = (kind, k1[1], k2[2])
        if key not in known:
            add(key, Derivation(Ordering(kind, k1[1], k2[2]), name, [known[k1], known[k2]]))

    for fact in facts:
        key = _key(fact)
        rule = RULE_FRACTIONAL if key in fractional else RULE_ASSUMED
        add(key, Derivation(Ordering(fact.kind, fact.src, fact.dst), rule))

    while worklist:
        key = worklist.popleft()
        _, src, dst = key
        for after in list(outgoing[dst]):
            compose(key, after)
        for before in list(incoming[src]):
            compose(before, key)

    return known


def closure(s: OrderStore) -> OrderStore:
    """Least fixpoint of the propagation rules. Raises InconsistentStore on an HB cycle."""
    return s.closure()


def entails(s: OrderStore, a: Assertion) -> bool:
    """
    Decide s ⊨ a for an OrdT-free assertion.

    Weak HB holds on equal events or when HB/WHB is derivable. A fact with
    a partial share holds when the derivable share covers it.
    """
    if isinstance(a, OccEvent):
        return a.event in s.occurred
    if isinstance(a, NotEvent):
        return a.event not in s.occurred
    if isinstance(a, OccTrans):
        return entails(s, a.expand())
    if isinstance(a, And):
        return entails(s, a.left) and entails(s, a.right)
    if isinstance(a, Implies):
        return a.event not in s.occurred or entails(s, a.body)
    if isinstance(a, Ord):
        return _entails_ordering(s, a.ordering)
    if isinstance(a, OrdT):
        raise MercuriusError(f"Decompose {a} before checking entailment")
    raise MercuriusError(f"Unsupported assertion {a!r}")


def _entails_ordering(s: OrderStore, o: Ordering) -> bool:
    if o.kind is WHB:
        return o.src == o.dst or s.has(HB, o.src, o.dst) or s.has(WHB, o.src, o.dst)
    if o.kind is CB:
        return Ordering(CB, o.src, o.dst) in {Ordering(f.kind, f.src, f.dst) for f in s.facts}
    if _is_must(o):
        return s.has(HB, o.src, o.dst)
    share = s.share_of(HB, o.src, o.dst)
    return share is not None and share.covers(o.share)


def release(a: Assertion, occurred: set, facts: set, conditional: list) -> None:
    """Add the content of an assumed assertion to the accumulators."""
    if isinstance(a, OccTrans):
        release(a.expand(), occurred, facts, conditional)
    elif isinstance(a, OccEvent):
        occurred.add(a.event)
    elif isinstance(a, Ord):
        facts.add(a.ordering)
    elif isinstance(a, And):
        release(a.left, occurred, facts, conditional)
        release(a.right, occurred, facts, conditional)
    elif isinstance(a, Implies):
        conditional.append(a)
    # NotEvent carries nothing to release


def assumptions_of(g: Protocol) -> OrderStore:
    """
    Load every assumption of a refined protocol into one store.

    Assumptions from all choice branches are loaded together; under
    well-formed choice this strengthening is sound.
    """
    occurred: set = set()
    facts: set = set()
    conditional: list = []
    for node in walk(g):
        if isinstance(node, Assume):
            assertion = node.assertion
            if any(isinstance(n, OrdT) for n in _assertion_nodes(assertion)):
                assertion = ord_decompose(assertion, g)
            release(assertion, occurred, facts, conditional)

    pending = list(conditional)
    progress = True
    while progress:
        progress = False
        for implication in list(pending):
            if implication.event in occurred:
                release(implication.body, occurred, facts, conditional)
                pending.remove(implication)
                progress = True

    logger.debug(f"assumptions: {len(occurred)} events, {len(facts)} facts")
    return OrderStore(occurred, facts, pending)


def _assertion_nodes(a: Assertion):
    yield a
    if isinstance(a, And):
        yield from _assertion_nodes(a.left)
        yield from _assertion_nodes(a.right)
    elif isinstance(a, Implies):
        yield from _assertion_nodes(a.body)


def add_sync(s: OrderStore, e1: Event, e2: Event) -> OrderStore:
    """Add the HB edge a notifyAll(e1) / wait-before-e2 pair establishes."""
    if e1 == e2:
        raise InconsistentStore(f"sync edge {e1} < {e2} is reflexive", [e1])
    return s.with_facts([Ordering(HB, e1, e2)]).closure()


def explain(s: OrderStore, fact: Ordering) -> Optional[Derivation]:
    """Derivation tree of `fact` in the closed store, or None when not derivable."""
    if fact.kind is WHB and fact.src == fact.dst:
        return Derivation(fact, "[reflexive]")
    derivation = s.derivation(fact.kind, fact.src, fact.dst)
    if derivation is None and fact.kind is WHB:
        derivation = s.derivation(HB, fact.src, fact.dst)
    return derivation
