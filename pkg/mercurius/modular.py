"""
Named protocol definitions and their composition.

A definition H(P*;c*)<i,F> is analysed against a symbolic frontier F
standing for whatever ran before it. derive_presync() computes the weak-HB
condition under which the pre-context synchronizes H implicitly, and
check_usage() tests that condition at a concrete invocation site.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import networkx as nx

from .core import (
    Channel, Choice, EMP, Invoke, Label, Ord, OrderKind,
    Ordering, Par, Party, Protocol, Seq, Trans, Transmission, seq_items, seq_of, transmissions,
)
from .errors import ArityMismatch, DuplicateLabel, UnboundedRecursion, UnknownDefinition
from .orderings import OrderStore, entails, release
from .refine import Atom, Boundary, atoms, collect, frontier_relations, refine_protocol

logger = logging.getLogger(__name__)

DEFAULT_MAX_UNROLL = 2


@dataclass(frozen=True)
class ProtocolDef:
    name: str
    party_params: Tuple[Party, ...]
    chan_params: Tuple[Channel, ...]
    body: Protocol
    root_param: str = "i"
    frontier_param: str = "F"

    @property
    def arity(self) -> Tuple[int, int]:
        return len(self.party_params), len(self.chan_params)


# --- symbolic frontier ----------------------------------------------------------------

@dataclass(frozen=True, order=True)
class FrontierSlot:
    """F.K(P), or the send / receive end of F.Γ(c)."""
    kind: str
    key: str
    frontier: str = "F"

    def __str__(self) -> str:
        if self.kind == "K":
            return f"{self.frontier}.K({self.key})"
        return f"{self.kind}({self.frontier}.Γ({self.key}))"


@dataclass(frozen=True, order=True)
class FrontierTransmission:
    """The last transmission on a channel before the definition starts."""
    channel: Channel
    frontier: str = "F"

    @property
    def send_event(self) -> FrontierSlot:
        return FrontierSlot("send", self.channel.name, self.frontier)

    @property
    def recv_event(self) -> FrontierSlot:
        return FrontierSlot("recv", self.channel.name, self.frontier)

    def __str__(self) -> str:
        return f"{self.frontier}.Γ({self.channel})"


def symbolic_frontier(definition: ProtocolDef) -> Boundary:
    name = definition.frontier_param
    return Boundary(
        {p: Atom(FrontierSlot("K", p.name, name)) for p in definition.party_params},
        {c: Atom(FrontierTransmission(c, name)) for c in definition.chan_params},
    )


# --- instantiation --------------------------------------------------------------------

def _lookup(defs: Mapping[str, ProtocolDef], name: str) -> ProtocolDef:
    if name not in defs:
        raise UnknownDefinition(f"Protocol {name} is not defined")
    return defs[name]


def _check_tail_recursion(definition: ProtocolDef) -> None:
    """Self-invocation is only allowed as the last item of the body."""
    items = seq_items(definition.body)

    def self_calls(node: Protocol) -> int:
        if isinstance(node, Invoke):
            return int(node.name == definition.name)
        return sum(self_calls(child) for child in node.children())

    total = self_calls(definition.body)
    if total == 0:
        return
    tail = items[-1] if items else None
    if total > 1 or not (isinstance(tail, Invoke) and tail.name == definition.name):
        raise UnboundedRecursion(f"{definition.name} calls itself outside tail position")


def instantiate(defs: Mapping[str, ProtocolDef], name: str, parties: Sequence[Party],
                channels: Sequence[Channel], root: Optional[Label] = None,
                frontier: Optional[Boundary] = None,
                max_unroll: int = DEFAULT_MAX_UNROLL) -> Protocol:
    """
    Expand an invocation into an Invoke-free protocol.

    Parties and channels are substituted, every local label is re-rooted
    under `root`, nested invocations are expanded recursively and a tail
    self-invocation is unrolled `max_unroll` times. With a `frontier`, the
    orderings against that preceding frontier are spliced in.

    Raises:
        ArityMismatch: argument counts differ from the definition's parameters
        UnboundedRecursion: non-tail or mutual recursion
        UnknownDefinition: an invoked name has no definition
    """
    prefix = root.path if root is not None else ()
    body = _expand(defs, name, tuple(parties), tuple(channels), prefix, (), max_unroll, 0)
    labels = [t.label for t in transmissions(body)]
    if len(labels) != len(set(labels)):
        raise DuplicateLabel(f"Instantiating {name} produced clashing labels")
    if frontier is not None:
        body = refine_protocol(body, frontier)
    logger.debug(f"instantiated {name} with {len(labels)} transmission(s)")
    return body


def _expand(defs, name, parties, channels, prefix, stack, max_unroll, unrolled) -> Protocol:
    definition = _lookup(defs, name)
    if (len(parties), len(channels)) != definition.arity:
        raise ArityMismatch(f"{name} expects {definition.arity[0]} parties and "
                            f"{definition.arity[1]} channels, got {len(parties)} and {len(channels)}")
    if name in stack:
        raise UnboundedRecursion(f"mutual recursion through {' -> '.join(stack + (name,))}")
    _check_tail_recursion(definition)
    party_map = dict(zip(definition.party_params, parties))
    chan_map = dict(zip(definition.chan_params, channels))

    def visit(node: Protocol) -> Protocol:
        if isinstance(node, Trans):
            t = node.transmission
            return Trans(Transmission(party_map.get(t.sender, t.sender),
                                      party_map.get(t.receiver, t.receiver), t.msg,
                                      chan_map.get(t.channel, t.channel),
                                      Label(prefix + t.label.path)))
        if isinstance(node, Invoke):
            args = tuple(party_map.get(p, p) for p in node.parties)
            chans = tuple(chan_map.get(c, c) for c in node.channels)
            root = prefix + node.root.path
            if node.name == name:
                if unrolled >= max_unroll:
                    return EMP
                return _expand(defs, name, args, chans, root, stack, max_unroll, unrolled + 1)
            return _expand(defs, node.name, args, chans, root, stack + (name,), max_unroll, 0)
        if isinstance(node, (Seq, Par, Choice)):
            left, right = visit(node.left), visit(node.right)
            if isinstance(node, Seq):
                return seq_of(seq_items(left) + seq_items(right))
            return type(node)(left, right)
        return node

    return visit(definition.body)


def expand_body(defs: Mapping[str, ProtocolDef], definition: ProtocolDef, max_unroll: int = 0) -> Protocol:
    """A definition's own body, Invoke-free, labels unchanged."""
    return _expand(defs, definition.name, definition.party_params, definition.chan_params,
                   (), (), max_unroll, 0)


def expand_main(defs: Mapping[str, ProtocolDef], name: str,
                max_unroll: int = DEFAULT_MAX_UNROLL) -> Protocol:
    definition = _lookup(defs, name)
    return expand_body(defs, definition, max_unroll)


# --- pre-context condition -------------------------------------------------------------

@dataclass
class PreSyncClause:
    """A disjunction of weak-HB candidates discharging one frontier guard."""
    guard: Ordering
    candidates: Tuple[Ordering, ...]

    def __str__(self) -> str:
        if not self.candidates:
            return f"NoCandidate({self.guard})"
        return " \\/ ".join(str(c) for c in self.candidates)


@dataclass
class PreSyncCondition:
    definition: str
    clauses: List[PreSyncClause] = field(default_factory=list)

    @property
    def no_candidate(self) -> List[Ordering]:
        return [c.guard for c in self.clauses if not c.candidates]

    def orderings(self) -> List[Tuple[Ordering, ...]]:
        return [c.candidates for c in self.clauses if c.candidates]

    def __str__(self) -> str:
        return "{" + ", ".join(str(c) for c in self.clauses) + "}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "definition": self.definition,
            "clauses": [str(c) for c in self.clauses if c.candidates],
            "noCandidate": [str(g) for g in self.no_candidate],
        }


def _store_of(assertions) -> OrderStore:
    occurred: set = set()
    facts: set = set()
    conditional: list = []
    for a in assertions:
        release(a, occurred, facts, conditional)
    return OrderStore(occurred, facts, conditional)


def _ordering_graph(store: OrderStore) -> nx.DiGraph:
    graph = nx.DiGraph()
    for fact in store.facts:
        if fact.kind in (OrderKind.HB, OrderKind.CB):
            graph.add_edge(fact.src, fact.dst)
    return graph


def derive_presync(defs: Mapping[str, ProtocolDef], definition: ProtocolDef) -> PreSyncCondition:
    """
    Weak-HB condition on the pre-context that discharges every guard between
    the symbolic frontier F and the definition's backtier.

    For each such guard E1 < E2 the candidates relate E1 to the earliest
    frontier ancestors of E2; a candidate is kept when adding it alone makes
    the guard derivable.
    """
    body = expand_body(defs, definition)
    summary = collect(body)
    frontier = symbolic_frontier(definition)
    slot_assumes, slot_guards = frontier_relations(frontier, summary.back)
    store = _store_of(list(summary.assumes) + slot_assumes)
    graph = _ordering_graph(store)
    slots = {a.item for form in frontier.rmap.values() for a in atoms(form)}
    slots |= {e for form in frontier.cmap.values() for a in atoms(form)
              for e in (a.item.send_event, a.item.recv_event)}

    condition = PreSyncCondition(definition.name)
    for guard in slot_guards:
        target = guard.ordering
        e1, e2 = target.src, target.dst
        ancestors = (nx.ancestors(graph, e2) if e2 in graph else set()) & slots
        earliest = sorted(e for e in ancestors if not (nx.ancestors(graph, e) & ancestors))
        useful = []
        for e in earliest:
            candidate = Ordering(OrderKind.WHB, e1, e)
            if entails(store.with_facts([candidate]).closure(), Ord(target)):
                useful.append(candidate)
        if not useful:
            logger.info(f"{definition.name}: no pre-context edge discharges {target}")
        condition.clauses.append(PreSyncClause(target, tuple(useful)))
    logger.info(f"{definition.name}: pre-context condition {condition}")
    return condition


def post_frontier(defs: Mapping[str, ProtocolDef], definition: ProtocolDef) -> Boundary:
    """Frontier handed to the post-context: the body's frontier over the symbolic F."""
    summary = collect(expand_body(defs, definition))
    return summary.front.then(symbolic_frontier(definition))


# --- usage checks -------------------------------------------------------------------------

@dataclass
class UsageSite:
    caller: str
    invoke: Invoke
    frontier: Boundary
    store: OrderStore

    @property
    def label(self) -> Label:
        return self.invoke.root


@dataclass
class UsageResult:
    site: UsageSite
    holds: bool
    obligations: List[Tuple[str, bool]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "caller": self.site.caller,
            "callee": self.site.invoke.name,
            "label": str(self.site.label),
            "holds": self.holds,
            "obligations": [{"ordering": text, "holds": ok} for text, ok in self.obligations],
        }


def _slot_events(slot: FrontierSlot, frontier: Boundary, party_map: Dict[str, Party],
                 chan_map: Dict[str, Channel]) -> List[object]:
    if slot.kind == "K":
        return [a.item for a in atoms(frontier.party(party_map[slot.key]))]
    items = [a.item for a in atoms(frontier.channel(chan_map[slot.key]))]
    return [t.send_event if slot.kind == "send" else t.recv_event for t in items]


def check_usage(defs: Mapping[str, ProtocolDef], definition: ProtocolDef, usage_frontier: Boundary,
                usage_store: OrderStore, party_args: Sequence[Party],
                chan_args: Sequence[Channel],
                condition: Optional[PreSyncCondition] = None) -> bool:
    return evaluate_usage(defs, definition, usage_frontier, usage_store, party_args,
                          chan_args, condition)[0]


def _precedes(store: OrderStore, x, y, party_slot: bool) -> bool:
    if entails(store, Ord(Ordering(OrderKind.WHB, x, y))):
        return True
    return party_slot and entails(store, Ord(Ordering(OrderKind.CB, x, y)))


def evaluate_usage(defs, definition, usage_frontier, usage_store, party_args, chan_args,
                   condition=None) -> Tuple[bool, List[Tuple[str, bool]]]:
    """
    Instantiate the pre-context condition at a usage site and check it.

    A weak-HB candidate with an empty left side holds vacuously; otherwise
    every pair of instantiated events must be equal or HB / weak-HB ordered.
    A party frontier K(P) is HB-before P's first event in the callee, so
    against it a CB pair is enough: CB ∘ HB gives HB.
    """
    if condition is None:
        condition = derive_presync(defs, definition)
    if (len(party_args), len(chan_args)) != definition.arity:
        raise ArityMismatch(f"{definition.name} used with the wrong number of arguments")
    party_map = {p.name: a for p, a in zip(definition.party_params, party_args)}
    chan_map = {c.name: a for c, a in zip(definition.chan_params, chan_args)}
    store = usage_store.closure()

    obligations: List[Tuple[str, bool]] = []
    holds = True
    for clause in condition.clauses:
        if not clause.candidates:
            obligations.append((str(clause), False))
            holds = False
            continue
        clause_ok = False
        for candidate in clause.candidates:
            lefts = _slot_events(candidate.src, usage_frontier, party_map, chan_map)
            rights = _slot_events(candidate.dst, usage_frontier, party_map, chan_map)
            if not lefts:
                ok = True
            else:
                ok = bool(rights) and all(_precedes(store, x, y, candidate.dst.kind == "K")
                                          for x in lefts for y in rights)
            pairs = ", ".join(f"{x} <=HB {y}" for x in lefts for y in rights) or "vacuous"
            obligations.append((pairs, ok))
            clause_ok = clause_ok or ok
        holds = holds and clause_ok
    return holds, obligations


def usage_sites(defs: Mapping[str, ProtocolDef], name: str) -> List[UsageSite]:
    """Every invocation inside `name` with the frontier and store of what precedes it."""
    definition = _lookup(defs, name)
    outer = symbolic_frontier(definition)
    sites: List[UsageSite] = []

    def expand_prefix(items: List[Protocol]) -> Protocol:
        pieces = []
        for item in items:
            if isinstance(item, Invoke) and item.name == name:
                continue
            pieces.append(_expand_node(defs, definition, item))
        return seq_of(pieces)

    def visit(node: Protocol, before: List[Protocol]):
        if isinstance(node, Seq):
            items = seq_items(node)
            for position, item in enumerate(items):
                visit(item, before + items[:position])
        elif isinstance(node, (Par, Choice)):
            visit(node.left, before)
            visit(node.right, before)
        elif isinstance(node, Invoke):
            prefix = expand_prefix(before)
            summary = collect(prefix)
            frontier = summary.front.then(outer)
            slot_assumes, _ = frontier_relations(outer, summary.back)
            store = _store_of(list(summary.assumes) + slot_assumes)
            sites.append(UsageSite(name, node, frontier, store))

    visit(definition.body, [])
    return sites


def _expand_node(defs, definition: ProtocolDef, node: Protocol) -> Protocol:
    wrapper = ProtocolDef(f"{definition.name}.prefix", definition.party_params,
                          definition.chan_params, node)
    local = dict(defs)
    local[wrapper.name] = wrapper
    return expand_body(local, wrapper)


def check_site(defs: Mapping[str, ProtocolDef], site: UsageSite) -> UsageResult:
    callee = _lookup(defs, site.invoke.name)
    holds, obligations = evaluate_usage(defs, callee, site.frontier, site.store,
                                        site.invoke.parties, site.invoke.channels)
    logger.info(f"{site.caller}: {callee.name}@{site.label} "
                f"{'implicitly synchronized' if holds else 'needs synchronization'}")
    return UsageResult(site, holds, obligations)


def check_recursion(defs: Mapping[str, ProtocolDef], definition: ProtocolDef) -> bool:
    """True iff the pre-context condition holds at the tail self-invocation (vacuous if none)."""
    _check_tail_recursion(definition)
    recursive = [s for s in usage_sites(defs, definition.name) if s.invoke.name == definition.name]
    if not recursive:
        return True
    return check_site(defs, recursive[0]).holds
