"""
Well-formedness of global protocols.

Concurrent operands must use disjoint channels; a choice must start with
transmissions that share channel, sender and receiver, carry mutually
exclusive messages, and involve no other parties.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Any, Dict, FrozenSet, List

from .core import Channel, Choice, Msg, Par, Party, Protocol, Seq
from .graph import first, tr

logger = logging.getLogger(__name__)

TREE_SHARE_NOTE = "tree-share required"


class WfRule(Enum):
    PAR = "WF-PAR"
    CHOICE_A = "WF-CHOICE-(a)"   # same first channel
    CHOICE_B = "WF-CHOICE-(b)"   # same first sender
    CHOICE_C = "WF-CHOICE-(c)"   # same first receiver
    CHOICE_D = "WF-CHOICE-(d)"   # mutually exclusive first messages
    CHOICE_E = "WF-CHOICE-(e)"   # same peers throughout
    CHOICE_F = "WF-CHOICE-(f)"   # branches well-formed


@dataclass
class WfViolation:
    rule: WfRule
    location: str
    detail: str

    def to_dict(self) -> Dict[str, Any]:
        return {"rule": self.rule.value, "location": self.location, "detail": self.detail}


@dataclass
class WfReport:
    violations: List[WfViolation] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def rules(self) -> List[WfRule]:
        return [v.rule for v in self.violations]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ok": self.ok,
            "violations": [v.to_dict() for v in self.violations],
            "notes": list(self.notes),
        }


def msg_disjoint(m1: Msg, m2: Msg) -> bool:
    """True iff no value satisfies both messages: different tags or disjoint intervals."""
    if m1.tag != m2.tag:
        return True
    if m1.interval is None or m2.interval is None:
        return False
    lo1, hi1 = m1.interval
    lo2, hi2 = m2.interval
    return hi1 < lo2 or hi2 < lo1


def channels(g: Protocol) -> FrozenSet[Channel]:
    return frozenset(t.channel for t in tr(g))


def parties(g: Protocol) -> FrozenSet[Party]:
    return frozenset(p for t in tr(g) for p in (t.sender, t.receiver))


def check_wf(g: Protocol) -> WfReport:
    report = WfReport()
    _visit(g, "ε", report)
    if report.ok:
        logger.debug("protocol is well-formed")
    else:
        logger.info(f"protocol has {len(report.violations)} well-formedness violation(s)")
    return report


def _child(location: str, step: str) -> str:
    return step if location == "ε" else f"{location}.{step}"


def _visit(g: Protocol, location: str, report: WfReport) -> None:
    if isinstance(g, (Seq, Par, Choice)):
        _visit(g.left, _child(location, "L"), report)
        _visit(g.right, _child(location, "R"), report)
    if isinstance(g, Par):
        shared = channels(g.left) & channels(g.right)
        if shared:
            names = ", ".join(sorted(c.name for c in shared))
            report.violations.append(WfViolation(
                WfRule.PAR, location, f"concurrent operands share channel(s) {names}"))
    elif isinstance(g, Choice):
        _check_choice(g, location, report)


def _check_choice(g: Choice, location: str, report: WfReport) -> None:
    if not tr(g.left) or not tr(g.right):
        report.notes.append(f"{location}: choice with a transmission-free branch, "
                            f"{TREE_SHARE_NOTE}")
        return

    def flag(rule: WfRule, detail: str):
        report.violations.append(WfViolation(rule, location, detail))

    firsts = sorted(first(g.left) | first(g.right), key=lambda t: t.label)
    first_channels = {t.channel for t in firsts}
    senders = {t.sender for t in firsts}
    receivers = {t.receiver for t in firsts}

    if len(first_channels) > 1:
        flag(WfRule.CHOICE_A, "first transmissions use channels "
             + ", ".join(sorted(c.name for c in first_channels)))
    if len(senders) > 1:
        flag(WfRule.CHOICE_B, "first senders " + ", ".join(sorted(p.name for p in senders)))
    if len(receivers) > 1:
        flag(WfRule.CHOICE_C, "first receivers " + ", ".join(sorted(p.name for p in receivers)))

    for t1, t2 in combinations(firsts, 2):
        if t1.label != t2.label and not msg_disjoint(t1.msg, t2.msg):
            flag(WfRule.CHOICE_D, f"messages of {t1.label} and {t2.label} overlap "
                 f"({t1.msg} / {t2.msg})")

    if len(senders) == 1 and len(receivers) == 1:
        peers = senders | receivers
        for t in sorted(tr(g), key=lambda t: t.label):
            if {t.sender, t.receiver} - peers:
                flag(WfRule.CHOICE_E, f"transmission {t.label} ({t.sender}->{t.receiver}) "
                     f"leaves the choice peers")

    nested = [v for v in report.violations
              if v.location != location and v.location.startswith(_child(location, ""))]
    if nested:
        flag(WfRule.CHOICE_F, f"{len(nested)} violation(s) inside the branches")
