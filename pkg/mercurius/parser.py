"""
Text DSL for protocol files and the canonical serializer.

    // overview
    A->C:c<v.t1>; A->B:c2<v.t2>; B->C:c<v.t3>

    def H0(A,B;c)<i,F> = A->B:c<v.t>;
    def H(A,B,C;c)<i,F> = A->B:c<v.t>; H0(B,C;c)@2;
    main H;
    sync A^1 < B^2;
    impl A { send c t(1); notifyAll w; }

Operators bind from loosest to tightest as `;`, `\\/`, `*`. Transmission
and invocation labels are assigned left to right per definition unless
written `@n`.
"""

import logging
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

from .core import (
    And, Assertion, Assume, Channel, Choice, EMP, Emp, Event, Guard, Implies, Invoke,
    Label, Msg, NotEvent, OccEvent, OccTrans, Ord, OrderKind, Ordering, OrdT, Par, Party,
    Protocol, Seq, Trans, Transmission,
)
from .errors import (
    ArityMismatch, DuplicateLabel, DslSyntaxError, MercuriusError, UnknownDefinition,
)
from .modular import ProtocolDef
from .sim import (
    CloseStmt, ForwardStmt, IfTagStmt, NotifyAllStmt, OpenStmt, ParStmt, PartyProgram,
    RecvStmt, SendStmt, SkipStmt, Stmt, WaitStmt,
)
from .treeshare import EMPTY, FULL, TreeShare, from_path

logger = logging.getLogger(__name__)

TOP_KEYWORDS = {"def", "main", "sync", "impl"}
RESERVED = TOP_KEYWORDS | {"emp", "assume", "guard"}
BARE_MAIN = "main"

TOKEN_SPEC = [
    ("COMMENT", r"//[^\n]*"),
    ("WS", r"[ \t\r\n]+"),
    ("ARROW", r"->"),
    ("IMPLIES", r"=>"),
    ("LE", r"<="),
    ("OR", r"\\/"),
    ("RANGE", r"\.\."),
    ("NUMBER", r"-?\d+"),
    ("IDENT", r"[A-Za-z_][A-Za-z0-9_]*"),
    ("SYM", r"[;*:.,(){}<>^#@!&=]"),
    ("MISMATCH", r"."),
]
TOKEN_RE = re.compile("|".join(f"(?P<{name}>{pattern})" for name, pattern in TOKEN_SPEC))


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> List[Token]:
    tokens = []
    line, line_start = 1, 0
    for match in TOKEN_RE.finditer(text):
        kind, value = match.lastgroup, match.group()
        col = match.start() - line_start + 1
        if kind == "MISMATCH":
            raise DslSyntaxError(f"Unexpected character {value!r}", line, col)
        if kind not in ("WS", "COMMENT"):
            tokens.append(Token(kind, value, line, col))
        newlines = value.count("\n")
        if newlines:
            line += newlines
            line_start = match.start() + value.rindex("\n") + 1
    tokens.append(Token("EOF", "", line, len(text) - line_start + 1))
    return tokens


@dataclass
class ProtocolFile:
    defs: Dict[str, ProtocolDef] = field(default_factory=dict)
    main: str = BARE_MAIN
    syncs: List[Tuple[Event, Event]] = field(default_factory=list)
    programs: Dict[str, PartyProgram] = field(default_factory=dict)

    @property
    def main_def(self) -> ProtocolDef:
        return self.defs[self.main]


class Parser:
    """Recursive-descent parser over the token list."""

    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.pos = 0
        self._counter = 0
        self._labels: Set[Label] = set()
        self._unsplit: Set[int] = set()

    # --- token helpers

    @property
    def current(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def at(self, text: str) -> bool:
        return self.current.text == text and self.current.kind != "EOF"

    def advance(self) -> Token:
        token = self.current
        self.pos += 1
        return token

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.advance()
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.error(f"Expected {text!r}")
        return self.advance()

    def error(self, message: str):
        token = self.current
        found = token.text or "end of input"
        raise DslSyntaxError(f"{message}, found {found!r}", token.line, token.col)

    def ident(self) -> str:
        if self.current.kind != "IDENT":
            self.error("Expected identifier")
        return self.advance().text

    def number(self) -> int:
        if self.current.kind != "NUMBER":
            self.error("Expected number")
        return int(self.advance().text)

    # --- file level

    def parse_file(self) -> ProtocolFile:
        result = ProtocolFile()
        declared_main: Optional[str] = None
        while self.current.kind != "EOF":
            if self.accept("def"):
                definition = self.parse_def()
                if definition.name in result.defs:
                    self.error(f"Definition {definition.name} declared twice")
                result.defs[definition.name] = definition
            elif self.accept("main"):
                declared_main = self.ident()
                self.expect(";")
            elif self.accept("sync"):
                result.syncs.append(self.parse_sync())
            elif self.accept("impl"):
                program = self.parse_impl()
                result.programs[program.party.name] = program
            else:
                if BARE_MAIN in result.defs:
                    self.error("Only one bare protocol is allowed per file")
                self._start_definition()
                body = self.parse_protocol()
                self.accept(";")
                result.defs[BARE_MAIN] = ProtocolDef(BARE_MAIN, (), (), body)

        if declared_main is not None:
            result.main = declared_main
        elif BARE_MAIN not in result.defs and result.defs:
            result.main = list(result.defs)[-1]
            logger.warning(f"No main declared; using last definition {result.main}")
        if result.main not in result.defs:
            raise UnknownDefinition(f"Main protocol {result.main} is not defined")

        for name, definition in list(result.defs.items()):
            body = self._resolve_invokes(definition.body, result.defs)
            result.defs[name] = ProtocolDef(definition.name, definition.party_params,
                                            definition.chan_params, body,
                                            definition.root_param, definition.frontier_param)
        logger.info(f"parsed {len(result.defs)} definition(s), main={result.main}, "
                    f"{len(result.programs)} program(s)")
        return result

    def _start_definition(self):
        self._counter = 0
        self._labels = set()

    def parse_def(self) -> ProtocolDef:
        name = self.ident()
        self.expect("(")
        party_names, chan_names = self.parse_args(")")
        self.expect(")")
        root_param, frontier_param = "i", "F"
        if self.accept("<"):
            root_param = self.ident()
            self.expect(",")
            frontier_param = self.ident()
            self.expect(">")
        self.expect("=")
        self._start_definition()
        body = self.parse_protocol()
        self.accept(";")
        return ProtocolDef(name, tuple(Party(p) for p in party_names),
                           tuple(Channel(c) for c in chan_names), body,
                           root_param, frontier_param)

    def parse_args(self, closing: str) -> Tuple[List[str], Optional[List[str]]]:
        """Comma-separated names, optionally split into parties ; channels."""
        groups: List[List[str]] = [[]]
        while not self.at(closing):
            if self.accept(";"):
                groups.append([])
                continue
            groups[-1].append(self.ident())
            if not self.at(closing) and not self.at(";"):
                self.expect(",")
        if len(groups) > 2:
            self.error("At most one ';' separates parties from channels")
        return groups[0], (groups[1] if len(groups) == 2 else None)

    def parse_sync(self) -> Tuple[Event, Event]:
        e1 = self.parse_event()
        self.expect("<")
        if self.at("HB"):
            self.advance()
        e2 = self.parse_event()
        self.expect(";")
        return e1, e2

    # --- protocols

    def _ends_protocol(self) -> bool:
        token = self.current
        return (token.kind == "EOF" or token.text in (")", "}")
                or (token.kind == "IDENT" and token.text in TOP_KEYWORDS))

    def parse_protocol(self) -> Protocol:
        items = [self.parse_choice()]
        while self.at(";"):
            self.advance()
            if self._ends_protocol():
                # trailing ';' terminates the item
                self.pos -= 1
                break
            items.append(self.parse_choice())
        result = items[-1]
        for item in reversed(items[:-1]):
            result = Seq(item, result)
        return result

    def parse_choice(self) -> Protocol:
        items = [self.parse_par()]
        while self.accept("\\/"):
            items.append(self.parse_par())
        result = items[-1]
        for item in reversed(items[:-1]):
            result = Choice(item, result)
        return result

    def parse_par(self) -> Protocol:
        items = [self.parse_atom()]
        while self.accept("*"):
            items.append(self.parse_atom())
        result = items[-1]
        for item in reversed(items[:-1]):
            result = Par(item, result)
        return result

    def parse_atom(self) -> Protocol:
        if self.accept("("):
            inner = self.parse_protocol()
            self.expect(")")
            return inner
        if self.accept("emp"):
            return EMP
        if self.at("assume") or self.at("guard"):
            kind = self.advance().text
            self.expect("(")
            assertion = self.parse_assertion()
            self.expect(")")
            return Assume(assertion) if kind == "assume" else Guard(assertion)
        if self.current.kind == "IDENT" and self.peek().text == "->":
            return Trans(self.parse_transmission())
        if self.current.kind == "IDENT" and self.peek().text == "(":
            return self.parse_invoke()
        self.error("Expected a protocol")

    def _claim_label(self, explicit: Optional[Label]) -> Label:
        if explicit is None:
            self._counter += 1
            while Label((self._counter,)) in self._labels:
                self._counter += 1
            label = Label((self._counter,))
        else:
            label = explicit
            if len(label.path) == 1:
                self._counter = max(self._counter, label.path[0])
        if label in self._labels:
            raise DuplicateLabel(f"Label {label} is used twice in one definition")
        self._labels.add(label)
        return label

    def parse_label(self) -> Label:
        path = [self.number()]
        while self.accept("#"):
            path.append(self.number())
        try:
            return Label(tuple(path))
        except MercuriusError as e:
            self.error(str(e))

    def _explicit_label(self) -> Optional[Label]:
        if self.accept("@"):
            return self.parse_label()
        return None

    def parse_transmission(self) -> Transmission:
        start = self.current
        sender = Party(self.ident())
        self.expect("->")
        receiver = Party(self.ident())
        self.expect(":")
        channel = Channel(self.ident())
        self.expect("<")
        msg = self.parse_msg()
        self.expect(">")
        label = self._claim_label(self._explicit_label())
        try:
            return Transmission(sender, receiver, msg, channel, label)
        except MercuriusError as e:
            raise type(e)(f"{e} (line {start.line}, col {start.col})") from None

    def parse_msg(self) -> Msg:
        first_name = self.ident()
        var, tag = "v", first_name
        if self.accept("."):
            var, tag = first_name, self.ident()
        lo = hi = None
        if self.accept("{"):
            lo = self.number()
            self.expect("..")
            hi = self.number()
            self.expect("}")
            if lo > hi:
                self.error(f"Empty interval {{{lo}..{hi}}}")
        return Msg(var, tag, lo, hi)

    def parse_invoke(self) -> Invoke:
        name = self.ident()
        self.expect("(")
        first_group, second_group = self.parse_args(")")
        self.expect(")")
        root = self._claim_label(self._explicit_label())
        node = Invoke(name, tuple(Party(p) for p in first_group),
                      tuple(Channel(c) for c in (second_group or [])), root)
        if second_group is None:
            self._unsplit.add(id(node))
        return node

    def _resolve_invokes(self, g: Protocol, defs: Dict[str, ProtocolDef]) -> Protocol:
        if isinstance(g, (Seq, Par, Choice)):
            return type(g)(self._resolve_invokes(g.left, defs), self._resolve_invokes(g.right, defs))
        if not isinstance(g, Invoke):
            return g
        if g.name not in defs:
            raise UnknownDefinition(f"Invoke of undefined protocol {g.name}")
        callee = defs[g.name]
        names = list(g.parties) + list(g.channels)
        if id(g) in self._unsplit:
            if len(names) != len(callee.party_params) + len(callee.chan_params):
                raise ArityMismatch(f"{g.name} expects {len(callee.party_params)} parties and "
                                    f"{len(callee.chan_params)} channels, got {len(names)} names")
            split = len(callee.party_params)
            return Invoke(g.name, tuple(Party(str(n)) for n in names[:split]),
                          tuple(Channel(str(n)) for n in names[split:]), g.root, g.frontier)
        if len(g.parties) != len(callee.party_params) or len(g.channels) != len(callee.chan_params):
            raise ArityMismatch(f"{g.name} expects ({len(callee.party_params)};"
                                f"{len(callee.chan_params)}) arguments, got "
                                f"({len(g.parties)};{len(g.channels)})")
        return g

    # --- assertions

    def parse_event(self) -> Event:
        party = Party(self.ident())
        self.expect("^")
        return Event(party, self.parse_label())

    def parse_relation(self) -> OrderKind:
        if self.accept("<="):
            if self.ident() != "HB":
                self.error("Weak ordering must be <=HB")
            return OrderKind.WHB
        self.expect("<")
        name = self.ident()
        if name not in ("HB", "CB"):
            self.error("Expected HB or CB")
        return OrderKind(name)

    def parse_share(self) -> TreeShare:
        if self.accept("("):
            left = self.parse_share()
            self.expect(",")
            right = self.parse_share()
            self.expect(")")
            return TreeShare.node(left, right)
        if self.current.kind == "NUMBER":
            value = self.number()
            if value not in (0, 1):
                self.error("Share leaves are 0 or 1")
            return FULL if value else EMPTY
        word = self.ident()
        if word == "F":
            return FULL
        if not set(word) <= {"L", "R"}:
            self.error(f"Invalid share literal {word!r}")
        return from_path(word)

    def _optional_share(self) -> Optional[TreeShare]:
        if self.accept("@"):
            return self.parse_share()
        return None

    def parse_assertion(self) -> Assertion:
        parts = [self.parse_conjunct()]
        while self.accept("&"):
            parts.append(self.parse_conjunct())
        result = parts[-1]
        for part in reversed(parts[:-1]):
            result = And(part, result)
        return result

    def parse_conjunct(self) -> Assertion:
        if self.accept("("):
            inner = self.parse_assertion()
            self.expect(")")
            return inner
        if self.accept("!"):
            return NotEvent(self.parse_event())
        if self.current.kind == "NUMBER":
            src = self.parse_label()
            kind = self.parse_relation()
            dst = self.parse_label()
            return OrdT(kind, src, dst, self._optional_share())
        if self.current.kind == "IDENT" and self.peek().text == "->":
            sender = Party(self.ident())
            self.expect("->")
            receiver = Party(self.ident())
            self.expect(":")
            return OccTrans(self.parse_label(), sender, receiver)
        event = self.parse_event()
        if self.at("<") or self.at("<="):
            kind = self.parse_relation()
            other = self.parse_event()
            return Ord(Ordering(kind, event, other, self._optional_share()))
        if self.accept("=>"):
            return Implies(event, self.parse_conjunct())
        return OccEvent(event)

    # --- programs

    def parse_impl(self) -> PartyProgram:
        party = Party(self.ident())
        return PartyProgram(party, self.parse_block())

    def parse_block(self) -> Tuple[Stmt, ...]:
        self.expect("{")
        body = []
        while not self.accept("}"):
            body.append(self.parse_stmt())
        return tuple(body)

    def parse_stmt(self) -> Stmt:
        if self.current.kind == "IDENT" and self.peek().text == "=":
            var = self.ident()
            self.expect("=")
            if self.ident() != "recv":
                self.error("Only recv can be assigned")
            channel = self.ident()
            self.expect(";")
            return RecvStmt(channel, var)
        word = self.ident()
        if word == "send":
            channel = self.ident()
            name = self.ident()
            if self.accept("("):
                value = self.number()
                self.expect(")")
                self.expect(";")
                return SendStmt(channel, name, value)
            self.expect(";")
            return ForwardStmt(channel, name)
        if word == "open":
            channel = self.ident()
            if self.ident() != "with":
                self.error("Expected 'with'")
            names = [self.ident()]
            while self.accept(","):
                names.append(self.ident())
            self.expect(";")
            return OpenStmt(channel, tuple(names))
        if word in ("close", "notifyAll", "wait"):
            name = self.ident()
            self.expect(";")
            return {"close": CloseStmt, "notifyAll": NotifyAllStmt, "wait": WaitStmt}[word](name)
        if word == "skip":
            self.expect(";")
            return SkipStmt()
        if word == "par":
            return ParStmt(self.parse_block(), self.parse_block())
        if word == "if":
            var = self.ident()
            if self.ident() != "is":
                self.error("Expected 'is'")
            tag = self.ident()
            then = self.parse_block()
            otherwise: Tuple[Stmt, ...] = ()
            if self.accept("else"):
                otherwise = self.parse_block()
            return IfTagStmt(var, tag, then, otherwise)
        self.pos -= 1
        self.error("Unknown statement")


def parse(text: str) -> ProtocolFile:
    """Parse a protocol file. Raises DslSyntaxError, ArityMismatch or DuplicateLabel."""
    return Parser(text).parse_file()


def parse_protocol(text: str) -> Protocol:
    """Parse a single protocol expression (labels numbered from 1)."""
    parser = Parser(text)
    body = parser.parse_protocol()
    parser.accept(";")
    if parser.current.kind != "EOF":
        parser.error("Unexpected trailing input")
    return body


def parse_assertion(text: str) -> Assertion:
    parser = Parser(text)
    result = parser.parse_assertion()
    if parser.current.kind != "EOF":
        parser.error("Unexpected trailing input")
    return result


def parse_event(text: str) -> Event:
    parser = Parser(text)
    result = parser.parse_event()
    if parser.current.kind != "EOF":
        parser.error("Unexpected trailing input")
    return result


def parse_sync_edge(text: str) -> Tuple[Event, Event]:
    """Parse "A^1<B^2" (or "A^1 <HB B^2") into an event pair."""
    return Parser(text.strip().rstrip(";") + ";").parse_sync()


# --- rendering ------------------------------------------------------------------

def render_assertion(a: Assertion) -> str:
    return str(a)


def _operand(g: Protocol) -> str:
    text = render_protocol(g)
    return f"({text})" if isinstance(g, Seq) else text


def render_protocol(g: Protocol) -> str:
    """Canonical text of a protocol; also renders local-spec trees."""
    if isinstance(g, Seq):
        left = render_protocol(g.left)
        if isinstance(g.left, Seq):
            left = f"({left})"
        return f"{left}; {render_protocol(g.right)}"
    if isinstance(g, Par):
        return f"({_operand(g.left)} * {_operand(g.right)})"
    if isinstance(g, Choice):
        return f"({_operand(g.left)} \\/ {_operand(g.right)})"
    if isinstance(g, Assume):
        return f"assume({render_assertion(g.assertion)})"
    if isinstance(g, Guard):
        return f"guard({render_assertion(g.assertion)})"
    if isinstance(g, Invoke):
        parties = ",".join(p.name for p in g.parties)
        chans = ",".join(c.name for c in g.channels)
        return f"{g.name}({parties};{chans})@{g.root}"
    if isinstance(g, Emp):
        return "emp"
    return str(g)


def render_stmt(stmt: Stmt, indent: int = 1) -> List[str]:
    pad = "  " * indent
    if isinstance(stmt, ParStmt):
        lines = [f"{pad}par {{"]
        for inner in stmt.left:
            lines.extend(render_stmt(inner, indent + 1))
        lines.append(f"{pad}}} {{")
        for inner in stmt.right:
            lines.extend(render_stmt(inner, indent + 1))
        lines.append(f"{pad}}}")
        return lines
    if isinstance(stmt, IfTagStmt):
        lines = [f"{pad}if {stmt.var} is {stmt.tag} {{"]
        for inner in stmt.then:
            lines.extend(render_stmt(inner, indent + 1))
        lines.append(f"{pad}}} else {{")
        for inner in stmt.otherwise:
            lines.extend(render_stmt(inner, indent + 1))
        lines.append(f"{pad}}}")
        return lines
    return [f"{pad}{stmt}"]


def render_program(program: PartyProgram) -> str:
    lines = [f"impl {program.party} {{"]
    for stmt in program.body:
        lines.extend(render_stmt(stmt))
    lines.append("}")
    return "\n".join(lines)


def render_def(definition: ProtocolDef) -> str:
    parties = ",".join(p.name for p in definition.party_params)
    chans = ",".join(c.name for c in definition.chan_params)
    return (f"def {definition.name}({parties};{chans})"
            f"<{definition.root_param},{definition.frontier_param}> = "
            f"{render_protocol(definition.body)};")


def serialize(f: ProtocolFile) -> str:
    """Canonical text; parse(serialize(f)) reproduces f."""
    lines = []
    for name, definition in f.defs.items():
        if name == BARE_MAIN and not definition.party_params and not definition.chan_params:
            lines.append(render_protocol(definition.body) + ";")
        else:
            lines.append(render_def(definition))
    if f.main != BARE_MAIN:
        lines.append(f"main {f.main};")
    for e1, e2 in f.syncs:
        lines.append(f"sync {e1} < {e2};")
    for program in f.programs.values():
        lines.append(render_program(program))
    return "\n".join(lines) + "\n"
