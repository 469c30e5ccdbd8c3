"""
Projection of a refined global protocol.

Four views are produced:

    project_party     per-party local spec (sends, receives, own events)
    project_endpoint  a party's local spec restricted to one channel
    project_channel   the global protocol restricted to one channel
    project_all       the CB / HB facts shared by every party

Guards are split cooperatively: each party proves the components of a
guard whose target event it owns, and assumes the rest.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, List, Optional, Tuple

from .core import (
    Assertion, Assume, Channel, Choice, EMP, Emp, Event, Guard, Label, Msg, NotEvent,
    OccEvent, OccTrans, Ord, OrderKind, Ordering, OrdT, Par, Party, Protocol, Seq, Trans,
    Transmission, conjuncts, label_index, ord_decompose, seq_items, seq_of,
)
from .errors import UnknownParty
from .wellformed import channels, parties

logger = logging.getLogger(__name__)


# --- local leaves -----------------------------------------------------------------

@dataclass(frozen=True)
class SendC(Protocol):
    channel: Channel
    msg: Msg
    label: Label

    def __str__(self) -> str:
        return f"!{self.channel}<{self.msg}>"


@dataclass(frozen=True)
class RecvC(Protocol):
    channel: Channel
    msg: Msg
    label: Label

    def __str__(self) -> str:
        return f"?{self.channel}<{self.msg}>"


@dataclass(frozen=True)
class Send(Protocol):
    msg: Msg
    label: Label

    def __str__(self) -> str:
        return f"!{self.msg}"


@dataclass(frozen=True)
class Recv(Protocol):
    msg: Msg
    label: Label

    def __str__(self) -> str:
        return f"?{self.msg}"


@dataclass(frozen=True)
class Coop(Protocol):
    """
    One party's share of a global guard.

    `parts` pairs every decomposed component with whether this party must
    prove it (⊖) or may assume it (⊕).
    """
    source: Assertion
    party: Party
    parts: Tuple[Tuple[Assertion, bool], ...]
    anchor_channel: Optional[Channel] = None

    @property
    def obligations(self) -> List[Assertion]:
        return [part for part, proves in self.parts if proves]

    def expand(self) -> Protocol:
        return seq_of(Guard(part) if proves else Assume(part) for part, proves in self.parts)

    def __str__(self) -> str:
        return f"⊖({self.source})_{self.party}"


ACTIONS = (SendC, RecvC, Send, Recv, Trans)


# --- projected specs ---------------------------------------------------------------

@dataclass
class LocalSpec:
    party: Party
    body: Protocol
    label_channels: Dict[Label, Channel] = field(default_factory=dict)

    @property
    def channels(self) -> FrozenSet[Channel]:
        return frozenset(n.channel for n in _leaves(self.body) if isinstance(n, (SendC, RecvC)))

    def __str__(self) -> str:
        return render_spec(self.body)

    def to_dict(self) -> Dict[str, Any]:
        return {"party": self.party.name, "spec": str(self)}


@dataclass
class EndpointSpec:
    party: Party
    channel: Channel
    body: Protocol

    def __str__(self) -> str:
        return render_spec(self.body)

    def to_dict(self) -> Dict[str, Any]:
        return {"party": self.party.name, "channel": self.channel.name, "spec": str(self)}


@dataclass
class ChannelSpec:
    channel: Channel
    body: Protocol

    def __str__(self) -> str:
        return render_spec(self.body)

    def to_dict(self) -> Dict[str, Any]:
        return {"channel": self.channel.name, "spec": str(self)}


@dataclass
class SharedSpec:
    """Every CB fact and HB assumption of the refined protocol, in protocol order."""
    facts: List[Ordering]
    body: Protocol

    def __str__(self) -> str:
        return render_spec(self.body)

    def to_dict(self) -> Dict[str, Any]:
        return {"facts": [str(f) for f in self.facts], "spec": str(self)}


def render_spec(node: Protocol) -> str:
    """Render a projected spec with ⊕ for assumptions and ⊖ for guards."""
    if isinstance(node, Seq):
        left = render_spec(node.left)
        if isinstance(node.left, Seq):
            left = f"({left})"
        return f"{left}; {render_spec(node.right)}"
    if isinstance(node, (Par, Choice)):
        op = "*" if isinstance(node, Par) else "\\/"
        parts = []
        for operand in (node.left, node.right):
            text = render_spec(operand)
            parts.append(f"({text})" if isinstance(operand, Seq) else text)
        return f"({parts[0]} {op} {parts[1]})"
    if isinstance(node, Assume):
        return f"⊕({node.assertion})"
    if isinstance(node, Guard):
        return f"⊖({node.assertion})"
    return str(node)


def _leaves(node: Protocol):
    if isinstance(node, (Seq, Par, Choice)):
        yield from _leaves(node.left)
        yield from _leaves(node.right)
    else:
        yield node


def _has_action(node: Protocol) -> bool:
    return any(isinstance(leaf, ACTIONS) for leaf in _leaves(node))


def _is_event_guard(node: Protocol) -> bool:
    return isinstance(node, Guard) and isinstance(node.assertion, OccEvent)


def _guards_only(node: Protocol) -> bool:
    return all(_is_event_guard(leaf) or isinstance(leaf, Emp) for leaf in _leaves(node))


def _combine(node: Protocol, left: Protocol, right: Protocol) -> Protocol:
    if isinstance(node, Seq):
        return seq_of(seq_items(left) + seq_items(right))
    if isinstance(left, Emp) and isinstance(right, Emp):
        return EMP
    if isinstance(node, Par):
        if isinstance(left, Emp):
            return right
        if isinstance(right, Emp):
            return left
    return type(node)(left, right)


# --- per party ----------------------------------------------------------------------

def _target(part: Assertion) -> Optional[Party]:
    if isinstance(part, Ord) and isinstance(part.ordering.dst, Event):
        return part.ordering.dst.party
    if isinstance(part, (OccEvent, NotEvent)):
        return part.event.party
    return None


def _mentions(part: Assertion, p: Party) -> bool:
    if isinstance(part, Ord):
        return any(isinstance(e, Event) and e.party == p
                   for e in (part.ordering.src, part.ordering.dst))
    if isinstance(part, (OccEvent, NotEvent)):
        return part.event.party == p
    return False


def _guard_anchor(a: Assertion, index: Dict[Label, Transmission]) -> Optional[Channel]:
    if isinstance(a, OrdT) and a.dst in index:
        return index[a.dst].channel
    if isinstance(a, Ord) and isinstance(a.ordering.dst, Event) and a.ordering.dst.label in index:
        return index[a.ordering.dst.label].channel
    if isinstance(a, (OccEvent, NotEvent)) and a.event.label in index:
        return index[a.event.label].channel
    return None


def cooperative_split(guard: Assertion, g: Protocol, p: Party) -> Coop:
    """
    P's view of a guard: it proves the components whose target event it
    owns and assumes every other one. A party named in no component
    assumes the whole guard.
    """
    index = label_index(g)
    parts = conjuncts(ord_decompose(guard, g))
    if not any(_mentions(part, p) for part in parts):
        logger.debug(f"{p} takes no part in guard {guard}; assuming all of it")
    return Coop(guard, p, tuple((part, _target(part) == p) for part in parts),
                _guard_anchor(guard, index))


def project_party(g: Protocol, p: Party) -> LocalSpec:
    """
    Local spec of party `p`.

    Raises:
        UnknownParty: p takes part in no transmission of g.
    """
    if p not in parties(g):
        raise UnknownParty(f"Party {p} does not occur in the protocol")
    index = label_index(g)

    def visit(node: Protocol) -> Protocol:
        if isinstance(node, Trans):
            t = node.transmission
            if t.sender == p:
                return SendC(t.channel, t.msg, t.label)
            if t.receiver == p:
                return RecvC(t.channel, t.msg, t.label)
            return EMP
        if isinstance(node, Assume):
            a = node.assertion
            if isinstance(a, OccTrans):
                if p in (a.sender, a.receiver):
                    return Assume(OccEvent(Event(p, a.label)))
                return EMP
            if isinstance(a, OccEvent) and a.event.party == p:
                return node
            return EMP
        if isinstance(node, Guard):
            return cooperative_split(node.assertion, g, p)
        if isinstance(node, Choice):
            left, right = visit(node.left), visit(node.right)
            # a choice p takes no action in is invisible to it
            if not (_has_action(left) or _has_action(right)):
                return EMP
            return _combine(node, left, right)
        if isinstance(node, (Seq, Par)):
            return _combine(node, visit(node.left), visit(node.right))
        return EMP

    spec = LocalSpec(p, visit(g), {label: t.channel for label, t in index.items()})
    logger.debug(f"projected party {p}: {spec}")
    return spec


# --- per endpoint -------------------------------------------------------------------

def project_endpoint(l: LocalSpec, c: Channel) -> EndpointSpec:
    """
    Restrict a local spec to channel `c`, turning other-channel events into event guards.

    A concurrent operand without `c` stays a parallel block of its guards, so
    pruning never mixes them with the guards of the operand that uses `c`.
    """
    if c not in l.channels:
        logger.warning(f"channel {c} does not occur in the spec of {l.party}")
        return EndpointSpec(l.party, c, EMP)

    def visit(node: Protocol) -> Protocol:
        if isinstance(node, (SendC, RecvC)):
            if node.channel != c:
                return EMP
            return Send(node.msg, node.label) if isinstance(node, SendC) else Recv(node.msg, node.label)
        if isinstance(node, Assume) and isinstance(node.assertion, OccEvent):
            if l.label_channels.get(node.assertion.event.label) == c:
                return node
            return Guard(node.assertion)
        if isinstance(node, Coop):
            return node if node.anchor_channel == c else EMP
        if isinstance(node, (Guard, Assume)):
            return node
        if isinstance(node, (Seq, Par, Choice)):
            return _combine(node, visit(node.left), visit(node.right))
        return EMP

    body = prune_event_guards(visit(l.body), lambda action: {l.party})
    return EndpointSpec(l.party, c, body)


# --- per channel --------------------------------------------------------------------

def project_channel(g: Protocol, c: Channel) -> ChannelSpec:
    """Restrict the refined global protocol to channel `c`."""
    if c not in channels(g):
        return ChannelSpec(c, EMP)
    index = label_index(g)

    def chan_of(label: Label) -> Optional[Channel]:
        t = index.get(label)
        return t.channel if t is not None else None

    def visit(node: Protocol) -> Protocol:
        if isinstance(node, Trans):
            return node if node.transmission.channel == c else EMP
        if isinstance(node, Assume):
            a = node.assertion
            if isinstance(a, OccTrans):
                if chan_of(a.label) == c:
                    return node
                return seq_of([Guard(OccEvent(Event(a.sender, a.label))),
                               Guard(OccEvent(Event(a.receiver, a.label)))])
            if isinstance(a, Ord):
                dst = a.ordering.dst
                return node if isinstance(dst, Event) and chan_of(dst.label) == c else EMP
            if isinstance(a, OccEvent):
                return node if chan_of(a.event.label) == c else Guard(a)
            return EMP
        if isinstance(node, Guard):
            return node if _guard_anchor(node.assertion, index) == c else EMP
        if isinstance(node, (Seq, Par, Choice)):
            return _combine(node, visit(node.left), visit(node.right))
        return EMP

    def participants(action: Protocol) -> set:
        t = action.transmission
        return {t.sender, t.receiver}

    return ChannelSpec(c, prune_event_guards(visit(g), participants))


# --- shared facts ---------------------------------------------------------------------

def project_all(g: Protocol) -> SharedSpec:
    """CB facts of every transmission plus every HB assumption."""
    facts: List[Ordering] = []

    def visit(node: Protocol) -> Protocol:
        if isinstance(node, Assume):
            a = node.assertion
            if isinstance(a, OccTrans):
                fact = Ordering(OrderKind.CB, Event(a.sender, a.label), Event(a.receiver, a.label))
            elif isinstance(a, Ord) and a.ordering.kind in (OrderKind.CB, OrderKind.HB):
                fact = a.ordering
            else:
                return EMP
            facts.append(fact)
            return Assume(Ord(fact))
        if isinstance(node, (Seq, Par, Choice)):
            return _combine(node, visit(node.left), visit(node.right))
        return EMP

    body = visit(g)
    return SharedSpec(facts, body)


def split_projections(g: Protocol) -> Dict[Party, Tuple[LocalSpec, Dict[Channel, EndpointSpec]]]:
    """Party -> (local spec, channel -> endpoint spec) for every party of g."""
    result = {}
    for p in sorted(parties(g)):
        local = project_party(g, p)
        result[p] = (local, {c: project_endpoint(local, c) for c in sorted(local.channels)})
    return result


# --- redundant event guards -----------------------------------------------------------

def prune_event_guards(node: Protocol, participants) -> Protocol:
    """
    Remove redundant event guards ⊖(P^i).

    In each run of consecutive event guards only the latest guard of each
    party survives, and only if that party takes part in the action right
    after the run. Event guards with no action after them are dropped.
    """
    return _prune(node, participants, at_end=True)


def _prune(node: Protocol, participants, at_end: bool) -> Protocol:
    if isinstance(node, (Par, Choice)):
        left = _prune(node.left, participants, at_end)
        right = _prune(node.right, participants, at_end)
        return _combine(node, left, right)
    if not isinstance(node, Seq):
        return EMP if at_end and _is_event_guard(node) else node

    items = seq_items(node)
    if at_end:
        while items and _guards_only(items[-1]):
            items.pop()

    pruned: List[Protocol] = []
    run: List[Guard] = []

    def flush(next_item: Optional[Protocol]):
        latest: Dict[Party, Guard] = {}
        for guard in run:
            latest.pop(guard.assertion.event.party, None)
            latest[guard.assertion.event.party] = guard
        keep = list(latest.values())
        if next_item is not None and isinstance(next_item, ACTIONS):
            allowed = participants(next_item)
            keep = [guard for guard in keep if guard.assertion.event.party in allowed]
        pruned.extend(keep)
        run.clear()

    for position, item in enumerate(items):
        if _is_event_guard(item):
            run.append(item)
            continue
        flush(item)
        if isinstance(item, (Par, Choice)):
            last = position == len(items) - 1
            item = _prune(item, participants, at_end and last)
        pruned.append(item)
    flush(None)
    return seq_of(pruned)
