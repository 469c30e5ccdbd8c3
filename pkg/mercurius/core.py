"""
Domain types for global protocols: labels, parties, channels, events,
messages, transmissions, the protocol AST, orderings and assertions.

All values are frozen dataclasses so they can be hashed, shared and used
as keys in ordering stores.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, Iterator, List, Optional, Tuple, Union

from .errors import DuplicateParty, MercuriusError, UnknownLabel
from .treeshare import TreeShare

logger = logging.getLogger(__name__)


@dataclass(frozen=True, order=True)
class Label:
    """Hierarchical transmission label, rendered 2#1 for path (2, 1)."""
    path: Tuple[int, ...]

    def __post_init__(self):
        if not self.path:
            raise MercuriusError("Label path must be non-empty")
        if any(segment < 1 for segment in self.path):
            raise MercuriusError(f"Label segments must be positive: {self.path}")

    @classmethod
    def of(cls, value: Union["Label", int, str, Tuple[int, ...]]) -> "Label":
        if isinstance(value, Label):
            return value
        if isinstance(value, int):
            return cls((value,))
        if isinstance(value, tuple):
            return cls(value)
        return cls(tuple(int(part) for part in str(value).split("#")))

    def under(self, root: Tuple[int, ...]) -> "Label":
        """This label re-rooted below `root`."""
        return Label(tuple(root) + self.path)

    def __str__(self) -> str:
        return "#".join(str(segment) for segment in self.path)


@dataclass(frozen=True, order=True)
class Party:
    name: str

    def __post_init__(self):
        if not self.name:
            raise MercuriusError("Party name must be non-empty")

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True, order=True)
class Channel:
    name: str

    def __post_init__(self):
        if not self.name:
            raise MercuriusError("Channel name must be non-empty")

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True, order=True)
class Event:
    """The send or receive of transmission `label` performed by `party`."""
    party: Party
    label: Label

    def __str__(self) -> str:
        return f"{self.party}^{self.label}"


@dataclass(frozen=True)
class Msg:
    """Message v.Tag with an optional integer interval constraint on v."""
    var: str
    tag: str
    lo: Optional[int] = None
    hi: Optional[int] = None

    def __post_init__(self):
        if not self.tag:
            raise MercuriusError("Message tag must be non-empty")
        if (self.lo is None) != (self.hi is None):
            raise MercuriusError("Message interval needs both bounds")
        if self.lo is not None and self.lo > self.hi:
            raise MercuriusError(f"Empty message interval {{{self.lo}..{self.hi}}}")

    @property
    def interval(self) -> Optional[Tuple[int, int]]:
        if self.lo is None:
            return None
        return self.lo, self.hi

    def __str__(self) -> str:
        text = f"{self.var}.{self.tag}"
        if self.lo is not None:
            text += f"{{{self.lo}..{self.hi}}}"
        return text


@dataclass(frozen=True)
class Transmission:
    sender: Party
    receiver: Party
    msg: Msg
    channel: Channel
    label: Label

    def __post_init__(self):
        if self.sender == self.receiver:
            raise DuplicateParty(
                f"Transmission {self.label} has {self.sender} as both sender and receiver")

    @property
    def send_event(self) -> Event:
        return Event(self.sender, self.label)

    @property
    def recv_event(self) -> Event:
        return Event(self.receiver, self.label)

    @property
    def events(self) -> Tuple[Event, Event]:
        return self.send_event, self.recv_event

    def __str__(self) -> str:
        return f"{self.sender}->{self.receiver}:{self.channel}<{self.msg}>@{self.label}"


# --- orderings and assertions -------------------------------------------------

class OrderKind(Enum):
    CB = "CB"
    HB = "HB"
    WHB = "WHB"

    @property
    def symbol(self) -> str:
        return "<=HB" if self is OrderKind.WHB else f"<{self.value}"


@dataclass(frozen=True)
class Ordering:
    """
    A CB, HB or weak-HB fact between two events.

    `src` and `dst` are usually Events; the modular analysis also relates
    symbolic frontier slots, which only need to be hashable and printable.
    """
    kind: OrderKind
    src: object
    dst: object
    share: Optional[TreeShare] = None

    def __str__(self) -> str:
        text = f"{self.src} {self.kind.symbol} {self.dst}"
        if self.share is not None:
            text += f" @{self.share}"
        return text


class Assertion:
    """Base class of the ordering-constraint language."""


@dataclass(frozen=True)
class OccEvent(Assertion):
    event: Event

    def __str__(self) -> str:
        return str(self.event)


@dataclass(frozen=True)
class NotEvent(Assertion):
    event: Event

    def __str__(self) -> str:
        return f"!{self.event}"


@dataclass(frozen=True)
class OccTrans(Assertion):
    """Transmission assumption: both events of `label` occur, send CB receive."""
    label: Label
    sender: Party
    receiver: Party

    def expand(self) -> Assertion:
        send, recv = Event(self.sender, self.label), Event(self.receiver, self.label)
        return And(OccEvent(send), And(OccEvent(recv), Ord(Ordering(OrderKind.CB, send, recv))))

    def __str__(self) -> str:
        return f"{self.sender}->{self.receiver}:{self.label}"


@dataclass(frozen=True)
class Ord(Assertion):
    ordering: Ordering

    def __str__(self) -> str:
        return str(self.ordering)


@dataclass(frozen=True)
class And(Assertion):
    left: Assertion
    right: Assertion

    def __str__(self) -> str:
        return f"{_wrap_assertion(self.left)} & {_wrap_assertion(self.right)}"


@dataclass(frozen=True)
class Implies(Assertion):
    event: Event
    body: Assertion

    def __str__(self) -> str:
        return f"{self.event} => ({self.body})"


@dataclass(frozen=True)
class OrdT(Assertion):
    """Transmission-level ordering i1 < i2, decomposed into sender and receiver halves."""
    kind: OrderKind
    src: Label
    dst: Label
    share: Optional[TreeShare] = None

    def __str__(self) -> str:
        text = f"{self.src} {self.kind.symbol} {self.dst}"
        if self.share is not None:
            text += f" @{self.share}"
        return text


def _wrap_assertion(a: Assertion) -> str:
    return f"({a})" if isinstance(a, Implies) else str(a)


def conjuncts(a: Assertion) -> List[Assertion]:
    """Flatten nested And nodes."""
    if isinstance(a, And):
        return conjuncts(a.left) + conjuncts(a.right)
    return [a]


def conjoin(parts: Iterable[Assertion]) -> Optional[Assertion]:
    """Right-nested And of `parts`, or None when empty."""
    items = list(parts)
    if not items:
        return None
    result = items[-1]
    for item in reversed(items[:-1]):
        result = And(item, result)
    return result


# --- global protocol AST --------------------------------------------------------

class Protocol:
    """Base class for protocol nodes. The combinators are reused by local specs."""

    def children(self) -> Tuple["Protocol", ...]:
        return ()


@dataclass(frozen=True)
class Emp(Protocol):
    def __str__(self) -> str:
        return "emp"


@dataclass(frozen=True)
class Trans(Protocol):
    transmission: Transmission

    def __str__(self) -> str:
        return str(self.transmission)


@dataclass(frozen=True)
class Seq(Protocol):
    left: Protocol
    right: Protocol

    def children(self):
        return self.left, self.right


@dataclass(frozen=True)
class Par(Protocol):
    left: Protocol
    right: Protocol

    def children(self):
        return self.left, self.right


@dataclass(frozen=True)
class Choice(Protocol):
    left: Protocol
    right: Protocol

    def children(self):
        return self.left, self.right


@dataclass(frozen=True)
class Assume(Protocol):
    assertion: Assertion


@dataclass(frozen=True)
class Guard(Protocol):
    assertion: Assertion


@dataclass(frozen=True)
class Invoke(Protocol):
    """Call of a named protocol definition with a local label `root`."""
    name: str
    parties: Tuple[Party, ...]
    channels: Tuple[Channel, ...]
    root: Label
    frontier: Optional[str] = None


EMP = Emp()


def seq_items(g: Protocol) -> List[Protocol]:
    """Flatten a Seq chain into its items, dropping Emp."""
    if isinstance(g, Seq):
        return seq_items(g.left) + seq_items(g.right)
    if isinstance(g, Emp):
        return []
    return [g]


def seq_of(items: Iterable[Protocol]) -> Protocol:
    """Right-nested Seq of `items`; Emp when empty."""
    parts = [item for item in items if not isinstance(item, Emp)]
    if not parts:
        return EMP
    result = parts[-1]
    for item in reversed(parts[:-1]):
        result = Seq(item, result)
    return result


def walk(g: Protocol) -> Iterator[Protocol]:
    """Pre-order traversal of a protocol tree."""
    yield g
    for child in g.children():
        yield from walk(child)


def transmissions(g: Protocol) -> List[Transmission]:
    """Transmissions of `g` in left-to-right order."""
    return [node.transmission for node in walk(g) if isinstance(node, Trans)]


def label_index(g: Protocol) -> Dict[Label, Transmission]:
    return {t.label: t for t in transmissions(g)}


def ord_decompose(a: Assertion, g: Protocol) -> Assertion:
    """
    Replace every OrdT(kind, i1, i2) by the conjunction of its sender half
    send(i1) < send(i2) and its receiver half recv(i1) < recv(i2).

    Raises:
        UnknownLabel: an OrdT mentions a label that is not a transmission of g.
    """
    index = label_index(g)
    return _decompose(a, index)


def _decompose(a: Assertion, index: Dict[Label, Transmission]) -> Assertion:
    if isinstance(a, OrdT):
        for label in (a.src, a.dst):
            if label not in index:
                raise UnknownLabel(f"Label {label} does not occur in the protocol")
        t1, t2 = index[a.src], index[a.dst]
        return And(Ord(Ordering(a.kind, t1.send_event, t2.send_event, a.share)),
                   Ord(Ordering(a.kind, t1.recv_event, t2.recv_event, a.share)))
    if isinstance(a, And):
        return And(_decompose(a.left, index), _decompose(a.right, index))
    if isinstance(a, Implies):
        return Implies(a.event, _decompose(a.body, index))
    return a


def canonicalize(g: Protocol) -> Protocol:
    """
    Normal form under the congruence laws: Seq right-nested with Emp removed,
    Emp dropped from Par, Par/Choice operands ordered by rendering.
    """
    if isinstance(g, Seq):
        return seq_of(canonicalize(item) for item in seq_items(g))
    if isinstance(g, (Par, Choice)):
        left, right = canonicalize(g.left), canonicalize(g.right)
        if isinstance(g, Par):
            if isinstance(left, Emp):
                return right
            if isinstance(right, Emp):
                return left
        if _sort_key(right) < _sort_key(left):
            left, right = right, left
        return type(g)(left, right)
    return g


def _sort_key(g: Protocol) -> str:
    # late import: rendering lives with the parser
    from .parser import render_protocol
    return render_protocol(g)
