"""
Bounded exhaustive simulator for party programs.

Threads run statements against FIFO channel queues and notifyAll/wait sync
points. Every send and receive is matched against a per-channel cursor over
the channel projection of the refined protocol, so a message overtaking
another is reported as a race and an off-protocol action as a protocol
error. explore() enumerates schedules depth-first with a visited set.
"""

import logging
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import product
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

from .core import Choice, Event, Label, Par, Party, Protocol, Seq, Trans, Transmission
from .errors import MercuriusError, SoundnessViolation
from .project import RecvC, SendC, project_channel, project_party
from .refine import check_race_freedom
from .wellformed import channels, parties

logger = logging.getLogger(__name__)

DEFAULT_MAX_STEPS = 2000
DEFAULT_MAX_UNROLL = 2
BOUNDS_ENV = "MERCURIUS_BOUNDS"


# --- program statements ---------------------------------------------------------------

@dataclass(frozen=True)
class SendStmt:
    channel: str
    tag: str
    value: int = 0

    def __str__(self) -> str:
        return f"send {self.channel} {self.tag}({self.value});"


@dataclass(frozen=True)
class ForwardStmt:
    """Send a previously received value; each bound value may be sent once."""
    channel: str
    var: str

    def __str__(self) -> str:
        return f"send {self.channel} {self.var};"


@dataclass(frozen=True)
class RecvStmt:
    channel: str
    var: str

    def __str__(self) -> str:
        return f"{self.var} = recv {self.channel};"


@dataclass(frozen=True)
class OpenStmt:
    channel: str
    parties: Tuple[str, ...]

    def __str__(self) -> str:
        return f"open {self.channel} with {','.join(self.parties)};"


@dataclass(frozen=True)
class CloseStmt:
    channel: str

    def __str__(self) -> str:
        return f"close {self.channel};"


@dataclass(frozen=True)
class NotifyAllStmt:
    sync_id: str

    def __str__(self) -> str:
        return f"notifyAll {self.sync_id};"


@dataclass(frozen=True)
class WaitStmt:
    sync_id: str

    def __str__(self) -> str:
        return f"wait {self.sync_id};"


@dataclass(frozen=True)
class SkipStmt:
    def __str__(self) -> str:
        return "skip;"


@dataclass(frozen=True)
class ParStmt:
    left: Tuple["Stmt", ...]
    right: Tuple["Stmt", ...]

    def __str__(self) -> str:
        return "par { ... } { ... }"


@dataclass(frozen=True)
class IfTagStmt:
    var: str
    tag: str
    then: Tuple["Stmt", ...]
    otherwise: Tuple["Stmt", ...] = ()

    def __str__(self) -> str:
        return f"if {self.var} is {self.tag} {{ ... }}"


Stmt = Union[SendStmt, ForwardStmt, RecvStmt, OpenStmt, CloseStmt, NotifyAllStmt,
             WaitStmt, SkipStmt, ParStmt, IfTagStmt]


@dataclass(frozen=True)
class PartyProgram:
    party: Party
    body: Tuple[Stmt, ...]


# --- configuration -------------------------------------------------------------------------

@dataclass(frozen=True)
class SimBounds:
    max_steps: int = DEFAULT_MAX_STEPS
    max_unroll: int = DEFAULT_MAX_UNROLL

    def __post_init__(self):
        if self.max_steps <= 0 or self.max_unroll < 0:
            raise MercuriusError(f"Invalid simulator bounds {self}")


def parse_bounds(text: str, base: Optional[SimBounds] = None) -> SimBounds:
    """Parse "steps=2000,unroll=2"; missing keys keep the values of `base`."""
    base = base or SimBounds()
    values = {"steps": base.max_steps, "unroll": base.max_unroll}
    for item in filter(None, (part.strip() for part in text.split(","))):
        key, sep, raw = item.partition("=")
        if not sep or key.strip() not in values:
            raise MercuriusError(f"Unknown bound {item!r}; expected steps=N or unroll=N")
        try:
            values[key.strip()] = int(raw)
        except ValueError:
            raise MercuriusError(f"Bound {key} needs an integer, got {raw!r}") from None
    return SimBounds(values["steps"], values["unroll"])


def bounds_from_env() -> SimBounds:
    text = os.getenv(BOUNDS_ENV, "")
    return parse_bounds(text) if text else SimBounds()


# --- machine state ---------------------------------------------------------------------------

Value = Tuple[str, int]
Config = Tuple[int, FrozenSet[int], int]


class Verdict(Enum):
    SAFE = "Safe"
    RACE_ERR = "RaceErr"
    PROT_ERR = "ProtErr"
    LEAK_ERR = "LeakErr"
    DEADLOCK_ERR = "DeadlockErr"
    RES_ERR = "ResErr"
    BOUND_EXCEEDED = "BoundExceeded"

    @property
    def is_error(self) -> bool:
        return self not in (Verdict.SAFE, Verdict.BOUND_EXCEEDED)


@dataclass(frozen=True)
class Message:
    tag: str
    value: int
    sender: Party
    labels: FrozenSet[Label]

    @property
    def label(self) -> Optional[Label]:
        """The transmission this message belongs to, once only one candidate is left."""
        return next(iter(self.labels)) if len(self.labels) == 1 else None

    def describe(self) -> str:
        return "|".join(sorted(str(l) for l in self.labels))


@dataclass(frozen=True)
class Thread:
    tid: str
    party: Party
    code: Tuple[Stmt, ...]
    env: Tuple[Tuple[str, Value], ...] = ()
    consumed: FrozenSet[str] = frozenset()
    joining: Tuple[str, ...] = ()
    parent: Optional[str] = None

    def lookup(self, var: str) -> Optional[Value]:
        return dict(self.env).get(var)

    def bind(self, var: str, value: Value) -> "Thread":
        env = dict(self.env)
        env[var] = value
        return replace(self, env=tuple(sorted(env.items())))


@dataclass(frozen=True)
class MachineState:
    threads: Tuple[Thread, ...]
    queues: Tuple[Tuple[str, Tuple[Message, ...]], ...]
    open_channels: FrozenSet[str]
    occurred: FrozenSet[Event] = frozenset()
    fired: FrozenSet[str] = frozenset()
    cursors: Tuple[Tuple[str, FrozenSet[Config]], ...] = ()

    def thread(self, tid: str) -> Thread:
        for t in self.threads:
            if t.tid == tid:
                return t
        raise MercuriusError(f"No thread {tid}")

    def queue(self, channel: str) -> Tuple[Message, ...]:
        return dict(self.queues).get(channel, ())

    def cursor(self, channel: str) -> FrozenSet[Config]:
        return dict(self.cursors).get(channel, frozenset())

    def with_queue(self, channel: str, messages: Tuple[Message, ...]) -> "MachineState":
        queues = dict(self.queues)
        queues[channel] = messages
        return replace(self, queues=tuple(sorted(queues.items())))

    def with_cursor(self, channel: str, configs: FrozenSet[Config]) -> "MachineState":
        cursors = dict(self.cursors)
        cursors[channel] = configs
        return replace(self, cursors=tuple(sorted(cursors.items(), key=lambda kv: kv[0])))

    def with_threads(self, threads: Iterable[Thread]) -> "MachineState":
        return replace(self, threads=tuple(sorted(threads, key=lambda t: t.tid)))


class Outcome(Enum):
    STEPPED = "stepped"
    BLOCKED = "blocked"
    ERROR = "error"


@dataclass
class StepResult:
    outcome: Outcome
    state: Optional[MachineState] = None
    verdict: Optional[Verdict] = None
    action: str = ""
    detail: str = ""


@dataclass(frozen=True)
class TraceStep:
    thread: str
    action: str

    def to_dict(self) -> Dict[str, str]:
        return {"thread": self.thread, "action": self.action}


@dataclass
class SimReport:
    verdict: Verdict
    trace: List[TraceStep] = field(default_factory=list)
    states_explored: int = 0
    traces_explored: int = 0
    detail: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "verdict": self.verdict.value,
            "detail": self.detail,
            "trace": [s.to_dict() for s in self.trace],
            "statesExplored": self.states_explored,
            "tracesExplored": self.traces_explored,
        }


# --- channel cursors -------------------------------------------------------------------------

def linearize(node: Protocol) -> List[Tuple[Transmission, ...]]:
    """Every order in which the transmissions of a channel spec may occur."""
    if isinstance(node, Trans):
        return [(node.transmission,)]
    if isinstance(node, Seq):
        return [a + b for a, b in product(linearize(node.left), linearize(node.right))]
    if isinstance(node, Choice):
        return linearize(node.left) + linearize(node.right)
    if isinstance(node, Par):
        left, right = linearize(node.left), linearize(node.right)
        paths = [a + b for a, b in product(left, right)]
        paths += [b + a for a, b in product(left, right) if a and b]
        return paths
    return [()]


def _complete(configs: FrozenSet[Config], paths: Sequence[Tuple[Transmission, ...]]) -> bool:
    return any(len(sent) == len(paths[pi]) and received == len(paths[pi])
               for pi, sent, received in configs)


# --- simulator ---------------------------------------------------------------------------------

class Simulator:
    """
    Transition system over MachineState for a set of party programs and a
    refined, Invoke-free global protocol.
    """

    def __init__(self, programs: Sequence[PartyProgram], spec: Protocol,
                 bounds: Optional[SimBounds] = None):

        self.programs = list(programs)
        self.spec = spec
        self.bounds = bounds or SimBounds()
        self.paths: Dict[str, List[Tuple[Transmission, ...]]] = {
            c.name: linearize(project_channel(spec, c).body) for c in sorted(channels(spec))
        }
        logger.debug(f"simulator: {len(self.programs)} program(s), "
                     f"{sum(len(p) for p in self.paths.values())} channel path(s)")

    def initial_state(self) -> MachineState:
        threads = [Thread(p.party.name, p.party, tuple(p.body)) for p in self.programs if p.body]
        state = MachineState(
            threads=tuple(sorted(threads, key=lambda t: t.tid)),
            queues=tuple((c, ()) for c in sorted(self.paths)),
            open_channels=frozenset(self.paths),
        )
        for c, paths in self.paths.items():
            state = state.with_cursor(c, frozenset((pi, frozenset(), 0) for pi in range(len(paths))))
        return state

    # --- one small step

    def step(self, state: MachineState, tid: str) -> StepResult:
        t = state.thread(tid)
        if t.joining or not t.code:
            return StepResult(Outcome.BLOCKED)
        stmt, rest = t.code[0], t.code[1:]
        action = f"{t.party}: {stmt}"

        def error(verdict: Verdict, detail: str) -> StepResult:
            return StepResult(Outcome.ERROR, None, verdict, action, detail)

        def advance(new_state: MachineState, thread: Thread, code: Tuple[Stmt, ...]) -> StepResult:
            return StepResult(Outcome.STEPPED, self._finish(new_state, replace(thread, code=code)),
                              None, action)

        if isinstance(stmt, SkipStmt):
            return advance(state, t, rest)

        if isinstance(stmt, (SendStmt, ForwardStmt)):
            if stmt.channel not in state.open_channels:
                return error(Verdict.PROT_ERR, f"send on closed channel {stmt.channel}")
            if isinstance(stmt, SendStmt):
                value: Value = (stmt.tag, stmt.value)
                thread = t
            else:
                value = t.lookup(stmt.var)
                if value is None:
                    return error(Verdict.PROT_ERR, f"{stmt.var} is unbound")
                if stmt.var in t.consumed:
                    return error(Verdict.RES_ERR, f"{stmt.var} was already sent")
                thread = replace(t, consumed=t.consumed | {stmt.var})
            matched = self._match_send(state, stmt.channel, t.party, value)
            if matched is None:
                return error(Verdict.PROT_ERR, f"{t.party} may not send {value[0]} on {stmt.channel} now")
            configs, labels = matched
            message = Message(value[0], value[1], t.party, labels)
            new_state = state.with_queue(stmt.channel, state.queue(stmt.channel) + (message,))
            new_state = new_state.with_cursor(stmt.channel, configs)
            if message.label is not None:
                new_state = replace(new_state, occurred=new_state.occurred | {Event(t.party, message.label)})
            return advance(new_state, thread, rest)

        if isinstance(stmt, RecvStmt):
            if stmt.channel not in state.open_channels:
                return error(Verdict.PROT_ERR, f"receive on closed channel {stmt.channel}")
            queue = state.queue(stmt.channel)
            if not queue:
                return StepResult(Outcome.BLOCKED)
            head = queue[0]
            configs, verdict = self._match_recv(state, stmt.channel, t.party, head)
            if verdict is not None:
                return error(verdict, f"{t.party} dequeued {head.tag} (label {head.describe()}) "
                                      f"on {stmt.channel}")
            new_state = state.with_queue(stmt.channel, queue[1:]).with_cursor(stmt.channel, configs)
            paths = self.paths[stmt.channel]
            taken = {paths[pi][received - 1].label for pi, _, received in configs}
            new_state = replace(new_state, occurred=new_state.occurred
                                | {Event(p, l) for l in taken for p in (head.sender, t.party)})
            return advance(new_state, t.bind(stmt.var, (head.tag, head.value)), rest)

        if isinstance(stmt, OpenStmt):
            new_state = replace(state, open_channels=state.open_channels | {stmt.channel})
            if not new_state.queue(stmt.channel):
                new_state = new_state.with_queue(stmt.channel, ())
            return advance(new_state, t, rest)

        if isinstance(stmt, CloseStmt):
            if state.queue(stmt.channel):
                return error(Verdict.LEAK_ERR, f"closing {stmt.channel} with "
                                               f"{len(state.queue(stmt.channel))} undelivered message(s)")
            new_state = replace(state, open_channels=state.open_channels - {stmt.channel})
            return advance(new_state, t, rest)

        if isinstance(stmt, NotifyAllStmt):
            return advance(replace(state, fired=state.fired | {stmt.sync_id}), t, rest)

        if isinstance(stmt, WaitStmt):
            if stmt.sync_id not in state.fired:
                return StepResult(Outcome.BLOCKED)
            return advance(state, t, rest)

        if isinstance(stmt, ParStmt):
            left = Thread(f"{t.tid}.1", t.party, stmt.left, t.env, t.consumed, (), t.tid)
            right = Thread(f"{t.tid}.2", t.party, stmt.right, t.env, t.consumed, (), t.tid)
            parent = replace(t, code=rest, joining=(left.tid, right.tid))
            others = [o for o in state.threads if o.tid != t.tid]
            new_state = state.with_threads(others + [parent, left, right])
            for child in (left, right):
                if not child.code:
                    new_state = self._finish(new_state, child)
            return StepResult(Outcome.STEPPED, new_state, None, action)

        if isinstance(stmt, IfTagStmt):
            value = t.lookup(stmt.var)
            if value is None:
                return error(Verdict.PROT_ERR, f"{stmt.var} is unbound")
            branch = stmt.then if value[0] == stmt.tag else stmt.otherwise
            return advance(state, t, tuple(branch) + rest)

        raise MercuriusError(f"Unknown statement {stmt!r}")

    def _finish(self, state: MachineState, thread: Thread) -> MachineState:
        """Store the updated thread; a finished child is merged into its parent."""
        others = [o for o in state.threads if o.tid != thread.tid]
        if thread.code or thread.joining:
            return state.with_threads(others + [thread])
        if thread.parent is None:
            return state.with_threads(others)
        parent = next(o for o in others if o.tid == thread.parent)
        env = dict(parent.env)
        env.update(dict(thread.env))
        merged = replace(parent, env=tuple(sorted(env.items())),
                         consumed=parent.consumed | thread.consumed,
                         joining=tuple(j for j in parent.joining if j != thread.tid))
        state = state.with_threads([o for o in others if o.tid != parent.tid] + [merged])
        return self._finish(state, merged)

    def _match_send(self, state: MachineState, channel: str, party: Party,
                    value: Value) -> Optional[Tuple[FrozenSet[Config], FrozenSet[Label]]]:
        """
        Advance every channel configuration that allows this send.

        Configurations on different choice paths may place the send at
        different transmissions; all of their labels are kept on the message
        and the receive that dequeues it decides which one it was.
        """
        paths = self.paths.get(channel)
        if not paths:
            return None
        survivors = set()
        labels = set()
        for pi, sent, received in state.cursor(channel):
            path = paths[pi]
            j = next((k for k in range(len(path)) if k not in sent and path[k].sender == party), None)
            if j is None:
                continue
            msg = path[j].msg
            if msg.tag != value[0]:
                continue
            if msg.interval is not None and not msg.lo <= value[1] <= msg.hi:
                continue
            survivors.add((pi, sent | {j}, received))
            labels.add(path[j].label)
        if not survivors:
            return None
        if len(labels) > 1:
            logger.debug(f"send by {party} on {channel} matches {sorted(map(str, labels))}")
        return frozenset(survivors), frozenset(labels)

    def _match_recv(self, state: MachineState, channel: str, party: Party,
                    head: Message) -> Tuple[FrozenSet[Config], Optional[Verdict]]:
        paths = self.paths.get(channel, [])
        survivors = set()
        addressed = False
        for pi, sent, received in state.cursor(channel):
            path = paths[pi]
            if received >= len(path):
                continue
            expected = path[received]
            if expected.receiver != party:
                continue
            addressed = True
            if expected.label not in head.labels:
                continue
            survivors.add((pi, sent, received + 1))
        if survivors:
            return frozenset(survivors), None
        return frozenset(), (Verdict.RACE_ERR if addressed else Verdict.PROT_ERR)

    # --- whole runs

    def terminal_verdict(self, state: MachineState) -> Tuple[Verdict, str]:
        """Verdict of a state where no thread can move."""
        if state.threads:
            waiting = [t for t in state.threads if t.code and isinstance(t.code[0], WaitStmt)]
            if waiting:
                return Verdict.DEADLOCK_ERR, f"{waiting[0].party} waits on {waiting[0].code[0].sync_id} forever"
            stuck = [t for t in state.threads if t.code and not t.joining]
            name = stuck[0].party if stuck else state.threads[0].party
            return Verdict.PROT_ERR, f"{name} is stuck"
        for channel, paths in self.paths.items():
            if not _complete(state.cursor(channel), paths):
                return Verdict.PROT_ERR, f"protocol on {channel} is incomplete"
        return Verdict.SAFE, ""

    def explore(self) -> SimReport:
        stack: List[Tuple[MachineState, Tuple[TraceStep, ...]]] = [(self.initial_state(), ())]
        visited = set()
        states = traces = 0
        while stack:
            state, trace = stack.pop()
            if state in visited:
                continue
            visited.add(state)
            states += 1
            if states > self.bounds.max_steps:
                logger.warning(f"exploration stopped after {self.bounds.max_steps} states")
                return SimReport(Verdict.BOUND_EXCEEDED, [], states - 1, traces,
                                 f"more than {self.bounds.max_steps} states")
            successors = []
            for t in state.threads:
                result = self.step(state, t.tid)
                if result.outcome is Outcome.ERROR:
                    report = SimReport(result.verdict, list(trace) + [TraceStep(t.tid, result.action)],
                                       states, traces + 1, result.detail)
                    logger.info(f"simulation: {report.verdict.value} after {states} states")
                    return report
                if result.outcome is Outcome.STEPPED:
                    successors.append((result.state, trace + (TraceStep(t.tid, result.action),)))
            if not successors:
                traces += 1
                verdict, detail = self.terminal_verdict(state)
                if verdict is not Verdict.SAFE:
                    logger.info(f"simulation: {verdict.value} after {states} states")
                    return SimReport(verdict, list(trace), states, traces, detail)
            stack.extend(reversed(successors))
        logger.info(f"simulation: Safe, {states} states, {traces} traces")
        return SimReport(Verdict.SAFE, [], states, traces)

    def replay(self, schedule: Sequence[str]) -> SimReport:
        """Run the given thread ids in order and report where that schedule ends up."""
        state = self.initial_state()
        trace: List[TraceStep] = []
        for tid in schedule:
            result = self.step(state, tid)
            if result.outcome is Outcome.ERROR:
                trace.append(TraceStep(tid, result.action))
                return SimReport(result.verdict, trace, len(trace), 1, result.detail)
            if result.outcome is Outcome.BLOCKED:
                raise MercuriusError(f"thread {tid} cannot move at step {len(trace) + 1}")
            trace.append(TraceStep(tid, result.action))
            state = result.state
        if any(self.step(state, t.tid).outcome is not Outcome.BLOCKED for t in state.threads):
            return SimReport(Verdict.SAFE, trace, len(trace), 0, "schedule ended before termination")
        verdict, detail = self.terminal_verdict(state)
        return SimReport(verdict, trace, len(trace), 1, detail)


def step(sim: Simulator, m: MachineState, tid: str) -> StepResult:
    return sim.step(m, tid)


def explore(programs: Sequence[PartyProgram], spec: Protocol,
            bounds: Optional[SimBounds] = None) -> SimReport:
    return Simulator(programs, spec, bounds).explore()


def replay(programs: Sequence[PartyProgram], spec: Protocol, schedule: Sequence[str]) -> SimReport:
    return Simulator(programs, spec).replay(schedule)


# --- derived programs and cross-validation ----------------------------------------------------

def programs_from_protocol(g: Protocol) -> List[PartyProgram]:
    """
    One straightforward program per party, without explicit synchronization.

    Each party performs its projected actions in order; at a choice every
    party follows the left branch.
    """

    def emit(node) -> Tuple[Stmt, ...]:
        if isinstance(node, SendC):
            value = node.msg.lo if node.msg.lo is not None else 0
            return (SendStmt(node.channel.name, node.msg.tag, value),)
        if isinstance(node, RecvC):
            return (RecvStmt(node.channel.name, f"x{'_'.join(map(str, node.label.path))}"),)
        if isinstance(node, Seq):
            return emit(node.left) + emit(node.right)
        if isinstance(node, Par):
            left, right = emit(node.left), emit(node.right)
            if left and right:
                return (ParStmt(left, right),)
            return left + right
        if isinstance(node, Choice):
            return emit(node.left)
        return ()

    return [PartyProgram(p, emit(project_party(g, p).body)) for p in sorted(parties(g))]


@dataclass
class CrossReport:
    static_race_free: bool
    dynamic: SimReport
    consistent: bool
    note: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "staticRaceFree": self.static_race_free,
            "dynamic": self.dynamic.to_dict(),
            "consistent": self.consistent,
            "note": self.note,
        }


def cross_validate(spec: Protocol, programs: Sequence[PartyProgram],
                   sync: Sequence[Tuple[Event, Event]] = (),
                   bounds: Optional[SimBounds] = None, strict: bool = True) -> CrossReport:
    """
    Compare the static race verdict with exhaustive simulation.

    Programs written by hand may be wrong on their own; with strict=False a
    RaceErr or ProtErr under a race-free verdict is reported as inconsistent
    instead of raised.

    Raises:
        SoundnessViolation: statically race-free but the simulator found a race
            or a protocol error
    """

    static = check_race_freedom(spec, sync)
    dynamic = explore(programs, spec, bounds)
    consistent = not (static.race_free and dynamic.verdict in (Verdict.RACE_ERR, Verdict.PROT_ERR))
    if not consistent and strict:
        raise SoundnessViolation(f"race-free by analysis, but schedule "
                                 f"{[s.thread for s in dynamic.trace]} ends in "
                                 f"{dynamic.verdict.value}: {dynamic.detail}")
    if not consistent:
        note = f"static race-free, but the programs reach {dynamic.verdict.value}"
    elif static.race_free:
        note = "static race-free, no race or protocol error found by simulation"
    elif dynamic.verdict is Verdict.RACE_ERR:
        note = "static NeedsSync, simulation found a racing schedule"
    else:
        note = "static NeedsSync, no racing schedule within bounds"
    return CrossReport(static.race_free, dynamic, consistent, note)
