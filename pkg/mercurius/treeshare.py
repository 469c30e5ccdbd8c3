"""
Tree-share algebra for orderings that hold on only part of a protocol's runs.

A share is a binary tree with Boolean leaves. The full share (written F)
marks a must-ordering; the halves L and R mark the two branches of a
disjunction, LL/LR/RL/RR the quarters, and so on. Shares are kept in
canonical form: (0,0) collapses to 0 and (1,1) collapses to 1.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TreeShare:
    """A canonical tree-share. Leaves have `leaf` set; nodes have both children."""
    leaf: Optional[bool] = None
    left: Optional["TreeShare"] = None
    right: Optional["TreeShare"] = None

    @staticmethod
    def full() -> "TreeShare":
        return FULL

    @staticmethod
    def empty() -> "TreeShare":
        return EMPTY

    @staticmethod
    def node(left: "TreeShare", right: "TreeShare") -> "TreeShare":
        """Build a node, collapsing equal leaves."""
        if left.is_leaf and right.is_leaf and left.leaf == right.leaf:
            return left
        return TreeShare(None, left, right)

    @property
    def is_leaf(self) -> bool:
        return self.leaf is not None

    @property
    def is_full(self) -> bool:
        return self.leaf is True

    @property
    def is_empty(self) -> bool:
        return self.leaf is False

    def halves(self) -> Tuple["TreeShare", "TreeShare"]:
        """Split this share into a left and a right portion covering it exactly."""
        if self.is_empty:
            return EMPTY, EMPTY
        if self.is_full:
            return LEFT, RIGHT
        ll, lr = self.left.halves()
        rl, rr = self.right.halves()
        return TreeShare.node(ll, rl), TreeShare.node(lr, rr)

    def covers(self, other: "TreeShare") -> bool:
        """True when every portion of `other` is also in this share."""
        return ts_and(self, other) == other

    def __str__(self) -> str:
        if self.is_full:
            return "F"
        if self.is_empty:
            return "0"
        path = self._as_path()
        if path is not None:
            return path
        return f"({_literal(self.left)},{_literal(self.right)})"

    def _as_path(self) -> Optional[str]:
        # L / R / LL / LR ... : one full leaf reached along a single path
        if self.is_full:
            return ""
        if self.is_empty:
            return None
        if self.right.is_empty:
            rest = self.left._as_path()
            return None if rest is None else "L" + rest
        if self.left.is_empty:
            rest = self.right._as_path()
            return None if rest is None else "R" + rest
        return None


def _literal(share: TreeShare) -> str:
    if share.is_full:
        return "1"
    return str(share)


FULL = TreeShare(True)
EMPTY = TreeShare(False)
LEFT = TreeShare(None, FULL, EMPTY)
RIGHT = TreeShare(None, EMPTY, FULL)


def from_path(path: str) -> TreeShare:
    """Share for a letter path such as "L", "RL" or "" (full)."""
    share = FULL
    for letter in reversed(path.upper()):
        if letter == "L":
            share = TreeShare.node(share, EMPTY)
        elif letter == "R":
            share = TreeShare.node(EMPTY, share)
        else:
            raise ValueError(f"Invalid share path letter: {letter!r}")
    return share


def _unfold(share: TreeShare) -> Tuple[TreeShare, TreeShare]:
    if share.is_leaf:
        return share, share
    return share.left, share.right


def ts_and(f1: TreeShare, f2: TreeShare) -> TreeShare:
    """Meet of two shares: 0 ∧ x = 0, 1 ∧ x = x, componentwise on nodes."""
    if f1.is_empty or f2.is_empty:
        return EMPTY
    if f1.is_full:
        return f2
    if f2.is_full:
        return f1
    l1, r1 = _unfold(f1)
    l2, r2 = _unfold(f2)
    return TreeShare.node(ts_and(l1, l2), ts_and(r1, r2))


def ts_or(f1: TreeShare, f2: TreeShare) -> TreeShare:
    """Join of two shares: 1 ∨ x = 1, 0 ∨ x = x, componentwise on nodes."""
    if f1.is_full or f2.is_full:
        return FULL
    if f1.is_empty:
        return f2
    if f2.is_empty:
        return f1
    l1, r1 = _unfold(f1)
    l2, r2 = _unfold(f2)
    return TreeShare.node(ts_or(l1, l2), ts_or(r1, r2))


def meet(f1: Optional[TreeShare], f2: Optional[TreeShare]) -> Optional[TreeShare]:
    """ts_and where None stands for the full share."""
    if f1 is None:
        return f2
    if f2 is None:
        return f1
    result = ts_and(f1, f2)
    return None if result.is_full else result


# Ordering kinds are passed as plain strings here so this module stays
# independent of the protocol types.
_COMPOSE = {
    ("HB", "HB"): "HB",
    ("CB", "HB"): "HB",
}

Edge = Tuple[str, object, object]


def fractional_closure(facts: Iterable[Tuple[str, object, object, Optional[TreeShare]]]
                       ) -> Dict[Edge, TreeShare]:
    """
    Close share-annotated orderings under fractional propagation.

    Args:
        facts: (kind, src, dst, share) tuples; a share of None means full.

    Returns:
        Map from (kind, src, dst) to the combined share. Transitive steps take
        the meet of the two premises' shares; facts on the same edge combine by
        join. Edges whose share is 0 are dropped.
    """
    shares: Dict[Edge, TreeShare] = {}
    for kind, src, dst, share in facts:
        key = (kind, src, dst)
        shares[key] = ts_or(shares.get(key, EMPTY), share if share is not None else FULL)

    changed = True
    rounds = 0
    while changed:
        changed = False
        rounds += 1
        outgoing: Dict[object, List[Tuple[str, object, TreeShare]]] = {}
        for (kind, src, dst), share in shares.items():
            outgoing.setdefault(src, []).append((kind, dst, share))
        for (kind1, src, mid), share1 in list(shares.items()):
            for kind2, dst, share2 in outgoing.get(mid, []):
                kind = _COMPOSE.get((kind1, kind2))
                if kind is None:
                    continue
                derived = ts_and(share1, share2)
                if derived.is_empty:
                    continue
                key = (kind, src, dst)
                combined = ts_or(shares.get(key, EMPTY), derived)
                if combined != shares.get(key):
                    shares[key] = combined
                    changed = True

    logger.debug(f"fractional closure: {len(shares)} edges after {rounds} rounds")
    return {key: share for key, share in shares.items() if not share.is_empty}
