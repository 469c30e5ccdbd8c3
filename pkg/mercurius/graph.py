"""
Transmission DAG of a protocol and the sequencing relations built on it.

Edges follow the protocol structure: G1;G2 sequences every transmission of
G1 before every transmission of G2, while Par and Choice only union the
edges of their operands.
"""

import logging
from functools import lru_cache
from typing import Dict, FrozenSet, List, Set, Tuple, Union

import networkx as nx

from .core import (
    Assertion, Assume, Choice, Event, Guard, Implies, Invoke, Label, NotEvent,
    OccEvent, OccTrans, Ord, OrdT, And, Par, Protocol, Seq, Trans, Transmission,
)
from .errors import UnexpandedInvoke, UnknownLabel

logger = logging.getLogger(__name__)

LabelLike = Union[Label, int, str]


def tr(g: Protocol) -> FrozenSet[Transmission]:
    """All transmissions of an Invoke-free protocol."""
    if isinstance(g, Trans):
        return frozenset([g.transmission])
    if isinstance(g, (Seq, Par, Choice)):
        return tr(g.left) | tr(g.right)
    if isinstance(g, Invoke):
        raise UnexpandedInvoke(f"Invoke of {g.name} must be instantiated first")
    return frozenset()


def first(g: Protocol) -> FrozenSet[Transmission]:
    """
    Possible first transmissions.

    A Seq whose left operand carries no transmission (emp, assumptions,
    guards) falls through to its right operand.
    """
    if isinstance(g, Trans):
        return frozenset([g.transmission])
    if isinstance(g, Seq):
        return first(g.left) or first(g.right)
    if isinstance(g, (Par, Choice)):
        return first(g.left) | first(g.right)
    if isinstance(g, Invoke):
        raise UnexpandedInvoke(f"Invoke of {g.name} must be instantiated first")
    return frozenset()


def ev(x: Union[Protocol, Assertion, Transmission]) -> FrozenSet[Event]:
    """Events mentioned by a protocol, an assertion or a transmission."""
    if isinstance(x, Transmission):
        return frozenset(x.events)
    if isinstance(x, Trans):
        return frozenset(x.transmission.events)
    if isinstance(x, (Seq, Par, Choice)):
        return ev(x.left) | ev(x.right)
    if isinstance(x, (Assume, Guard)):
        return ev(x.assertion)
    if isinstance(x, (OccEvent, NotEvent)):
        return frozenset([x.event])
    if isinstance(x, OccTrans):
        return frozenset([Event(x.sender, x.label), Event(x.receiver, x.label)])
    if isinstance(x, Ord):
        return frozenset(e for e in (x.ordering.src, x.ordering.dst) if isinstance(e, Event))
    if isinstance(x, And):
        return ev(x.left) | ev(x.right)
    if isinstance(x, Implies):
        return frozenset([x.event]) | ev(x.body)
    if isinstance(x, Invoke):
        raise UnexpandedInvoke(f"Invoke of {x.name} must be instantiated first")
    # OrdT names labels, not events
    return frozenset()


def seq_edges(g: Protocol) -> Set[Tuple[Label, Label]]:
    if isinstance(g, Seq):
        cross = {(t1.label, t2.label) for t1 in tr(g.left) for t2 in tr(g.right)}
        return cross | seq_edges(g.left) | seq_edges(g.right)
    if isinstance(g, (Par, Choice)):
        return seq_edges(g.left) | seq_edges(g.right)
    return set()


class ProtocolGraph:
    """
    Transmission DAG G(G) = (V, O) with memoized reachability.

    Vertices are labels; `transmissions` maps each label back to its
    transmission.
    """

    def __init__(self, g: Protocol):
        self.transmissions: Dict[Label, Transmission] = {t.label: t for t in tr(g)}
        self.dag = nx.DiGraph()
        self.dag.add_nodes_from(self.transmissions)
        self.dag.add_edges_from(seq_edges(g))
        self._reach = nx.transitive_closure_dag(self.dag)
        self._adjacency = self._build_adjacency()
        logger.debug(f"graph: {self.dag.number_of_nodes()} transmissions, "
                     f"{self.dag.number_of_edges()} sequencing edges")

    @property
    def vertices(self) -> FrozenSet[Transmission]:
        return frozenset(self.transmissions.values())

    @property
    def edges(self) -> FrozenSet[Tuple[Label, Label]]:
        return frozenset(self.dag.edges)

    def _label(self, value: LabelLike) -> Label:
        label = Label.of(value)
        if label not in self.transmissions:
            raise UnknownLabel(f"Label {label} is not a transmission of the protocol")
        return label

    def sequenced(self, i1: LabelLike, i2: LabelLike) -> bool:
        return self._reach.has_edge(self._label(i1), self._label(i2))

    def _same_channel(self, i1: Label, i2: Label) -> bool:
        return self.transmissions[i1].channel == self.transmissions[i2].channel

    def _build_adjacency(self) -> nx.DiGraph:
        adjacency = nx.DiGraph()
        adjacency.add_nodes_from(self.transmissions)
        for i1, i2 in self._reach.edges:
            if not self._same_channel(i1, i2):
                continue
            between = any(
                self._same_channel(i1, k)
                and self._reach.has_edge(i1, k) and self._reach.has_edge(k, i2)
                for k in self.transmissions if k not in (i1, i2)
            )
            if not between:
                adjacency.add_edge(i1, i2)
        return adjacency

    def adjacent(self, i1: LabelLike, i2: LabelLike) -> bool:
        """Same channel, sequenced, and no same-channel transmission strictly between."""
        return self._adjacency.has_edge(self._label(i1), self._label(i2))

    def linked(self, i1: LabelLike, i2: LabelLike) -> bool:
        """Transitive closure of adjacency."""
        a, b = self._label(i1), self._label(i2)
        return a != b and nx.has_path(self._adjacency, a, b)

    def adjacent_pairs(self) -> List[Tuple[Label, Label]]:
        return sorted(self._adjacency.edges)

    def linked_pairs(self) -> List[Tuple[Label, Label]]:
        closure = nx.transitive_closure_dag(self._adjacency)
        return sorted(closure.edges)

    def to_dot(self, name: str = "protocol") -> str:
        """Graphviz rendering of the transitive reduction, same-channel edges solid."""
        reduced = nx.transitive_reduction(self.dag)
        lines = [f"digraph {name} {{", "  rankdir=TB;"]
        for label in sorted(self.transmissions):
            t = self.transmissions[label]
            lines.append(f'  "{label}" [label="{label}: {t.sender}->{t.receiver}:{t.channel}"];')
        for i1, i2 in sorted(reduced.edges):
            style = "solid" if self._same_channel(i1, i2) else "dashed"
            lines.append(f'  "{i1}" -> "{i2}" [style={style}];')
        lines.append("}")
        return "\n".join(lines) + "\n"


@lru_cache(maxsize=64)
def build_graph(g: Protocol) -> ProtocolGraph:
    return ProtocolGraph(g)


def sequenced(g: Protocol, i1: LabelLike, i2: LabelLike) -> bool:
    return build_graph(g).sequenced(i1, i2)


def adjacent(g: Protocol, i1: LabelLike, i2: LabelLike) -> bool:
    return build_graph(g).adjacent(i1, i2)


def linked(g: Protocol, i1: LabelLike, i2: LabelLike) -> bool:
    return build_graph(g).linked(i1, i2)
