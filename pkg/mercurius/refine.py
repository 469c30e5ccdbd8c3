"""
Protocol refinement: boundary summaries, assumption/guard generation and
guard discharge.

collect() summarizes every sub-protocol by its backtier (first events per
party, first transmissions per channel), its frontier (the last ones), and
the assumptions and guards produced so far. Sequencing two summaries pairs
the left frontier with the right backtier: same-party events become HB
assumptions, same-channel transmissions become race-freedom guards.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from .core import (
    Assertion, Assume, Channel, Choice, Event, Guard, Invoke, Label, Ord,
    OrderKind, Ordering, OrdT, OccTrans, Par, Party, Protocol, Seq, Trans, Transmission,
    conjuncts, ord_decompose, seq_items, seq_of, walk,
)
from .errors import UnexpandedInvoke
from .graph import tr
from .orderings import Derivation, add_sync, assumptions_of, entails, explain
from .treeshare import FULL, TreeShare, meet

logger = logging.getLogger(__name__)


# --- boundary forms -------------------------------------------------------------

class EForm:
    """Boundary entry: ⊥, an atom, a concurrent pair (∗) or a disjunction (∨)."""


@dataclass(frozen=True)
class Bot(EForm):
    # a ⊥ inside a disjunction remembers the share of its branch
    share: Optional[TreeShare] = None

    def __str__(self) -> str:
        return "⊥"


@dataclass(frozen=True)
class Atom(EForm):
    item: object
    share: Optional[TreeShare] = None

    def __str__(self) -> str:
        text = str(self.item.label) if isinstance(self.item, Transmission) else str(self.item)
        return text if self.share is None else f"{text}@{self.share}"


@dataclass(frozen=True)
class Star(EForm):
    left: EForm
    right: EForm

    def __str__(self) -> str:
        return f"({self.left} * {self.right})"


@dataclass(frozen=True)
class Or(EForm):
    left: EForm
    right: EForm

    def __str__(self) -> str:
        return f"({self.left} \\/ {self.right})"


BOT = Bot()


def atoms(form: EForm) -> List[Atom]:
    if isinstance(form, Atom):
        return [form]
    if isinstance(form, (Star, Or)):
        return atoms(form.left) + atoms(form.right)
    return []


def restrict(form: EForm, share: Optional[TreeShare]) -> EForm:
    """Narrow every atom of `form` to the given share."""
    if share is None:
        return form
    if isinstance(form, Atom):
        return Atom(form.item, meet(form.share, share))
    if isinstance(form, Bot):
        return Bot(meet(form.share, share))
    return type(form)(restrict(form.left, share), restrict(form.right, share))


def seq_fuse(first_form: EForm, second_form: EForm) -> EForm:
    """β1 ⌊;⌋ β2: β1 unless it is ⊥; a ⊥ disjunct is filled from β2."""
    if isinstance(first_form, Bot):
        return restrict(second_form, first_form.share)
    if isinstance(first_form, Or):
        return Or(seq_fuse(first_form.left, second_form), seq_fuse(first_form.right, second_form))
    return first_form


def par_fuse(f1: EForm, f2: EForm) -> EForm:
    """β1 ⌊∗⌋ β2, distributing ∨ outwards so ∗ only joins plain forms."""
    if isinstance(f1, Bot):
        return f2
    if isinstance(f2, Bot):
        return f1
    if isinstance(f1, Or):
        return Or(par_fuse(f1.left, f2), par_fuse(f1.right, f2))
    if isinstance(f2, Or):
        return Or(par_fuse(f1, f2.left), par_fuse(f1, f2.right))
    return Star(f1, f2)


def or_fuse(f1: EForm, f2: EForm, shares: Optional[Tuple[TreeShare, TreeShare]] = None) -> EForm:
    """β1 ⌊∨⌋ β2; with branch shares, a missing side keeps its share as ⊥."""
    if isinstance(f1, Bot) and isinstance(f2, Bot):
        return BOT
    if shares is not None:
        if isinstance(f1, Bot):
            f1 = Bot(shares[0])
        if isinstance(f2, Bot):
            f2 = Bot(shares[1])
    return Or(f1, f2)


@dataclass
class Boundary:
    """K (party -> event form) and Γ (channel -> transmission form). Absent key means ⊥."""
    rmap: Dict[Party, EForm] = field(default_factory=dict)
    cmap: Dict[Channel, EForm] = field(default_factory=dict)

    def party(self, p: Party) -> EForm:
        return self.rmap.get(p, BOT)

    def channel(self, c: Channel) -> EForm:
        return self.cmap.get(c, BOT)

    def combine(self, other: "Boundary", op: Callable[[EForm, EForm], EForm]) -> "Boundary":
        def fuse_map(m1: Dict, m2: Dict) -> Dict:
            result = {}
            for key in sorted(set(m1) | set(m2)):
                form = op(m1.get(key, BOT), m2.get(key, BOT))
                if not isinstance(form, Bot):
                    result[key] = form
            return result
        return Boundary(fuse_map(self.rmap, other.rmap), fuse_map(self.cmap, other.cmap))

    def then(self, other: "Boundary") -> "Boundary":
        return self.combine(other, seq_fuse)

    def par(self, other: "Boundary") -> "Boundary":
        return self.combine(other, par_fuse)

    def choice(self, other: "Boundary", shares=None) -> "Boundary":
        return self.combine(other, lambda a, b: or_fuse(a, b, shares))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "K": {p.name: str(form) for p, form in sorted(self.rmap.items())},
            "Γ": {c.name: str(form) for c, form in sorted(self.cmap.items())},
        }


@dataclass
class Summary:
    back: Boundary = field(default_factory=Boundary)
    front: Boundary = field(default_factory=Boundary)
    assumes: List[Assertion] = field(default_factory=list)
    guards: List[Assertion] = field(default_factory=list)


def _unique(items: Iterable[Assertion]) -> List[Assertion]:
    return list(dict.fromkeys(items))


def merge_forms(f1: EForm, f2: EForm) -> List[Tuple[Atom, Atom]]:
    """merge(β1, β2): all atom pairs, distributing over ∗ and ∨; ⊥ yields nothing."""
    pairs = []
    for a1 in atoms(f1):
        for a2 in atoms(f2):
            share = meet(a1.share, a2.share)
            if share is not None and share.is_empty:
                continue
            pairs.append((a1, a2))
    return pairs


def merge_adjacent(front: Boundary, back: Boundary) -> Tuple[List[Assertion], List[Assertion]]:
    """HB assumptions between consecutive same-party events, guards between same-channel transmissions."""
    assumes: List[Assertion] = []
    guards: List[Assertion] = []
    for p in sorted(set(front.rmap) & set(back.rmap)):
        for a1, a2 in merge_forms(front.rmap[p], back.rmap[p]):
            assumes.append(Ord(Ordering(OrderKind.HB, a1.item, a2.item, meet(a1.share, a2.share))))
    for c in sorted(set(front.cmap) & set(back.cmap)):
        for a1, a2 in merge_forms(front.cmap[c], back.cmap[c]):
            guards.append(OrdT(OrderKind.HB, a1.item.label, a2.item.label,
                               meet(a1.share, a2.share)))
    return assumes, guards


def collect(g: Protocol, share: Optional[TreeShare] = None) -> Summary:
    """
    Bottom-up summary of a well-formed, Invoke-free protocol.

    Args:
        g: protocol to summarize
        share: portion of the runs `g` executes in; None for all runs

    Returns:
        Summary with backtier, frontier, assumptions and guards
    """
    if isinstance(g, Trans):
        t = g.transmission
        rmap = {t.sender: Atom(t.send_event, share), t.receiver: Atom(t.recv_event, share)}
        cmap = {t.channel: Atom(t, share)}
        return Summary(Boundary(dict(rmap), dict(cmap)), Boundary(dict(rmap), dict(cmap)),
                       [OccTrans(t.label, t.sender, t.receiver)], [])
    if isinstance(g, Seq):
        s1, s2 = collect(g.left, share), collect(g.right, share)
        assumes, guards = merge_adjacent(s1.front, s2.back)
        return Summary(s1.back.then(s2.back), s2.front.then(s1.front),
                       _unique(s1.assumes + s2.assumes + assumes),
                       _unique(s1.guards + s2.guards + guards))
    if isinstance(g, Par):
        s1, s2 = collect(g.left, share), collect(g.right, share)
        return Summary(s1.back.par(s2.back), s1.front.par(s2.front),
                       _unique(s1.assumes + s2.assumes), _unique(s1.guards + s2.guards))
    if isinstance(g, Choice):
        shares = None
        if not tr(g.left) or not tr(g.right):
            shares = (share or FULL).halves()
        s1 = collect(g.left, shares[0] if shares else share)
        s2 = collect(g.right, shares[1] if shares else share)
        return Summary(s1.back.choice(s2.back, shares), s1.front.choice(s2.front, shares),
                       _unique(s1.assumes + s2.assumes), _unique(s1.guards + s2.guards))
    if isinstance(g, Invoke):
        raise UnexpandedInvoke(f"Invoke of {g.name} must be instantiated before refinement")
    return Summary()


# --- splicing ---------------------------------------------------------------------

def frontier_relations(frontier: Boundary, back: Boundary) -> Tuple[List[Assertion], List[Assertion]]:
    """
    Orderings between a preceding frontier and a backtier.

    Same-party pairs become HB assumptions. Same-channel pairs become one
    guard per end: the sends are ordered and so are the receives.
    """
    assumes: List[Assertion] = []
    guards: List[Assertion] = []
    for p in sorted(set(frontier.rmap) & set(back.rmap)):
        for a1, a2 in merge_forms(frontier.rmap[p], back.rmap[p]):
            assumes.append(Ord(Ordering(OrderKind.HB, a1.item, a2.item, meet(a1.share, a2.share))))
    for c in sorted(set(frontier.cmap) & set(back.cmap)):
        for a1, a2 in merge_forms(frontier.cmap[c], back.cmap[c]):
            share = meet(a1.share, a2.share)
            guards.append(Ord(Ordering(OrderKind.HB, a1.item.send_event, a2.item.send_event, share)))
            guards.append(Ord(Ordering(OrderKind.HB, a1.item.recv_event, a2.item.recv_event, share)))
    return assumes, guards


def _anchor(a: Assertion) -> Tuple[Label, tuple]:
    """Anchor label and tie-break key: transmission assumption, orderings, OrdT guards."""
    if isinstance(a, OccTrans):
        return a.label, (0,)
    if isinstance(a, Ord):
        src, dst = a.ordering.src, a.ordering.dst
        if isinstance(src, Event):
            return dst.label, (1, 0, src.label, src.party.name, dst.party.name)
        return dst.label, (1, 1, str(src), dst.party.name)
    if isinstance(a, OrdT):
        return a.dst, (2, a.src)
    raise ValueError(f"Cannot anchor {a}")


def splice(g: Protocol, assumes: Sequence[Assertion], guards: Sequence[Assertion]) -> Protocol:
    """Insert Assume/Guard nodes right after the transmission each one is anchored on."""
    inserts: Dict[Label, List[Tuple[tuple, Protocol]]] = {}
    for is_guard, items in ((False, assumes), (True, guards)):
        for a in items:
            label, key = _anchor(a)
            node = Guard(a) if is_guard else Assume(a)
            inserts.setdefault(label, []).append(((is_guard,) + key, node))
    for label in inserts:
        inserts[label].sort(key=lambda entry: entry[0])

    def rebuild(node: Protocol) -> Protocol:
        if isinstance(node, Trans):
            extra = [item for _, item in inserts.get(node.transmission.label, [])]
            return seq_of([node] + extra)
        if isinstance(node, Seq):
            items: List[Protocol] = []
            for item in seq_items(node):
                items.extend(seq_items(rebuild(item)))
            return seq_of(items)
        if isinstance(node, (Par, Choice)):
            return type(node)(rebuild(node.left), rebuild(node.right))
        return node

    return rebuild(g)


def refine_protocol(g: Protocol, frontier: Optional[Boundary] = None) -> Protocol:
    """
    Splice collect(g)'s assumptions and guards after their anchor transmissions.

    With a `frontier`, the orderings between that preceding frontier and
    g's backtier are spliced in as well.
    """
    summary = collect(g)
    assumes, guards = list(summary.assumes), list(summary.guards)
    if frontier is not None:
        extra_assumes, extra_guards = frontier_relations(frontier, summary.back)
        assumes.extend(extra_assumes)
        guards.extend(extra_guards)
    refined = splice(g, assumes, guards)
    logger.info(f"refined protocol: {len(assumes)} assumptions, {len(guards)} guards")
    return refined


# --- guard discharge ----------------------------------------------------------

class GuardStatus(Enum):
    IMPLICIT = "Implicit"
    DISCHARGED_BY_SYNC = "DischargedBySync"
    NEEDS_SYNC = "NeedsSync"


@dataclass
class GuardComponent:
    assertion: Assertion
    status: GuardStatus
    derivation: Optional[Derivation] = None

    def to_dict(self) -> Dict[str, Any]:
        result = {"assertion": str(self.assertion), "status": self.status.value}
        if self.derivation is not None:
            result["derivation"] = self.derivation.to_dict()
        return result


@dataclass
class GuardEntry:
    guard: Assertion
    status: GuardStatus
    components: List[GuardComponent] = field(default_factory=list)
    provenance: str = ""

    @property
    def witness(self) -> List[str]:
        """Unproven event pairs for NeedsSync, otherwise the rules used."""
        if self.status is GuardStatus.NEEDS_SYNC:
            return [str(c.assertion) for c in self.components
                    if c.status is GuardStatus.NEEDS_SYNC]
        rules: List[str] = []
        for c in self.components:
            if c.derivation is not None:
                rules.extend(c.derivation.rules_used())
        return rules

    def to_dict(self) -> Dict[str, Any]:
        return {
            "assertion": str(self.guard),
            "status": self.status.value,
            "provenance": self.provenance,
            "witness": self.witness,
            "components": [c.to_dict() for c in self.components],
        }


@dataclass
class GuardReport:
    entries: List[GuardEntry] = field(default_factory=list)

    @property
    def race_free(self) -> bool:
        return all(e.status is not GuardStatus.NEEDS_SYNC for e in self.entries)

    def status_of(self, guard: Assertion) -> Optional[GuardStatus]:
        for entry in self.entries:
            if entry.guard == guard:
                return entry.status
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {"race_free": self.race_free, "guards": [e.to_dict() for e in self.entries]}


def _provenance(a: Assertion) -> str:
    if isinstance(a, OrdT):
        return f"adjacent transmissions {a.src} and {a.dst}"
    return "explicit guard"


def check_race_freedom(refined: Protocol,
                       sync: Sequence[Tuple[Event, Event]] = ()) -> GuardReport:
    """
    Classify every guard of a refined protocol.

    A component entailed by the protocol's own assumptions is Implicit; one
    entailed only after adding the sync edges is DischargedBySync; anything
    else NeedsSync.
    """
    base = assumptions_of(refined).closure()
    synced = base
    for e1, e2 in sync:
        synced = add_sync(synced, e1, e2)

    report = GuardReport()
    for node in walk(refined):
        if not isinstance(node, Guard):
            continue
        components = []
        for part in conjuncts(ord_decompose(node.assertion, refined)):
            if entails(base, part):
                status, store = GuardStatus.IMPLICIT, base
            elif entails(synced, part):
                status, store = GuardStatus.DISCHARGED_BY_SYNC, synced
            else:
                status, store = GuardStatus.NEEDS_SYNC, None
            derivation = None
            if store is not None and isinstance(part, Ord):
                derivation = explain(store, part.ordering)
            components.append(GuardComponent(part, status, derivation))

        statuses = {c.status for c in components}
        if GuardStatus.NEEDS_SYNC in statuses:
            status = GuardStatus.NEEDS_SYNC
        elif GuardStatus.DISCHARGED_BY_SYNC in statuses:
            status = GuardStatus.DISCHARGED_BY_SYNC
        else:
            status = GuardStatus.IMPLICIT
        report.entries.append(GuardEntry(node.assertion, status, components,
                                         _provenance(node.assertion)))

    unproven = sum(1 for e in report.entries if e.status is GuardStatus.NEEDS_SYNC)
    logger.info(f"race check: {len(report.entries)} guards, {unproven} need synchronization")
    return report
