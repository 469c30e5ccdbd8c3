#!/usr/bin/env python3
"""
Mercurius CLI - refine, project, check and simulate multiparty protocols.
Usage: mercurius <command> FILE [options]
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .core import Channel, Event, Ord, Party, conjuncts, ord_decompose
from .errors import DslSyntaxError, MercuriusError, UnknownDefinition
from .graph import build_graph
from .modular import check_recursion, check_site, derive_presync, expand_main, usage_sites
from .orderings import add_sync, assumptions_of, explain
from .parser import ProtocolFile, parse, parse_assertion, parse_sync_edge, render_protocol
from .project import project_all, project_channel, project_endpoint, project_party, split_projections
from .refine import check_race_freedom, refine_protocol
from .report import GuardModel, ProjectionBundle, RunReport, SharedModel, render_text
from .sim import (
    DEFAULT_MAX_STEPS, DEFAULT_MAX_UNROLL, SimBounds, Verdict, bounds_from_env,
    cross_validate, parse_bounds, programs_from_protocol,
)
from .wellformed import channels, check_wf

logger = logging.getLogger(__name__)

DEBUG_ENV = "MERCURIUS_DEBUG"
CHECK_KINDS = ("wf", "race", "graph", "modular")

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2


# Pydantic models
class RunConfig(BaseModel):
    input: Path
    command: Literal["refine", "project", "check", "simulate", "explain", "modular"]
    check: Optional[Literal["wf", "race", "graph", "modular"]] = None
    party: Optional[str] = None
    channel: Optional[str] = None
    shared: bool = False
    definition: Optional[str] = None
    usage: Optional[str] = None
    fact: Optional[str] = None
    dot: bool = False
    sync: List[str] = Field(default_factory=list)
    max_steps: int = Field(DEFAULT_MAX_STEPS, gt=0)
    max_unroll: int = Field(DEFAULT_MAX_UNROLL, ge=0)
    output_format: Literal["text", "json"] = "text"
    out: Optional[Path] = None

    @field_validator("sync")
    @classmethod
    def sync_edges_parse(cls, value: List[str]) -> List[str]:
        for text in value:
            try:
                parse_sync_edge(text)
            except DslSyntaxError as e:
                raise ValueError(f"sync edge {text!r} is not of the form A^1<B^2: {e}") from None
        return value

    @model_validator(mode="after")
    def command_arguments(self) -> "RunConfig":
        if self.command == "check" and self.check is None:
            raise ValueError(f"check needs one of {', '.join(CHECK_KINDS)}")
        if self.command == "explain" and not self.fact:
            raise ValueError("explain needs an ordering such as '1 <HB 3'")
        return self

    @property
    def stage(self) -> str:
        return self.check if self.command == "check" else self.command

    @property
    def label(self) -> str:
        return f"check {self.check}" if self.command == "check" else self.command

    @property
    def bounds(self) -> SimBounds:
        return SimBounds(self.max_steps, self.max_unroll)

    def sync_edges(self) -> List[Tuple[Event, Event]]:
        return [parse_sync_edge(text) for text in self.sync]


# --- pipeline -------------------------------------------------------------------------

Stage = Callable[[RunConfig, ProtocolFile, object, List[Tuple[Event, Event]], RunReport], bool]


def run(cfg: RunConfig) -> Tuple[int, RunReport]:
    """
    Parse, expand, check well-formedness, refine, then run the command's stage.

    Returns the exit code (0 ok, 1 violations) with the report. Malformed
    input raises MercuriusError and unreadable files OSError.
    """
    text = cfg.input.read_text(encoding="utf-8")
    pf = parse(text)
    logger.info(f"parsed {cfg.input.name}: {len(pf.defs)} definition(s), main {pf.main}")

    g = expand_main(pf.defs, pf.main, cfg.max_unroll)
    report = RunReport(command=cfg.label, protocol=render_protocol(g))
    wf = check_wf(g)
    report.wellformed = wf.to_dict()
    if not wf.ok:
        logger.warning(f"{pf.main} is not well-formed: {len(wf.violations)} violation(s)")
        report.ok = False
        return EXIT_VIOLATION, report
    if cfg.stage == "wf":
        return EXIT_OK, report

    refined = refine_protocol(g)
    syncs = list(pf.syncs) + cfg.sync_edges()
    ok = STAGES[cfg.stage](cfg, pf, refined, syncs, report)
    report.ok = ok
    return (EXIT_OK if ok else EXIT_VIOLATION), report


def _refine_stage(cfg, pf, refined, syncs, report: RunReport) -> bool:
    report.refined = render_protocol(refined)
    return True


def _race_stage(cfg, pf, refined, syncs, report: RunReport) -> bool:
    guards = check_race_freedom(refined, syncs)
    report.refined = render_protocol(refined)
    report.guards = [GuardModel(**entry.to_dict()) for entry in guards.entries]
    return guards.race_free


def _graph_stage(cfg, pf, refined, syncs, report: RunReport) -> bool:
    graph = build_graph(refined)
    summary = {
        "adjacent": [f"{a}->{b}" for a, b in graph.adjacent_pairs()],
        "linked": [f"{a}->{b}" for a, b in graph.linked_pairs()],
    }
    if cfg.dot:
        summary["dot"] = graph.to_dot()
    report.graph = summary
    return True


def _project_stage(cfg, pf, refined, syncs, report: RunReport) -> bool:
    bundle = ProjectionBundle()
    if cfg.shared:
        bundle.shared = SharedModel(**project_all(refined).to_dict())
    elif cfg.party:
        local = project_party(refined, Party(cfg.party))
        bundle.party[cfg.party] = str(local)
        wanted = [Channel(cfg.channel)] if cfg.channel else sorted(local.channels)
        bundle.endpoint[cfg.party] = {c.name: str(project_endpoint(local, c)) for c in wanted}
    elif cfg.channel:
        bundle.channel[cfg.channel] = str(project_channel(refined, Channel(cfg.channel)))
    else:
        for party, (local, endpoints) in sorted(split_projections(refined).items()):
            bundle.party[party.name] = str(local)
            bundle.endpoint[party.name] = {c.name: str(e) for c, e in sorted(endpoints.items())}
        for c in sorted(channels(refined)):
            bundle.channel[c.name] = str(project_channel(refined, c))
    report.projections = bundle
    return True


def _modular_stage(cfg, pf, refined, syncs, report: RunReport) -> bool:
    defs = pf.defs
    for name in filter(None, (cfg.definition, cfg.usage)):
        if name not in defs:
            raise UnknownDefinition(f"Protocol {name} is not defined")
    conditions = [cfg.definition] if cfg.definition else ([] if cfg.usage else sorted(defs))
    callers = [cfg.usage] if cfg.usage else ([] if cfg.definition else sorted(defs))

    ok = True
    for name in conditions:
        entry = derive_presync(defs, defs[name]).to_dict()
        if any(site.invoke.name == name for site in usage_sites(defs, name)):
            entry["recursion"] = check_recursion(defs, defs[name])
            ok = ok and entry["recursion"]
        report.modular.append(entry)
    for name in callers:
        for site in usage_sites(defs, name):
            if site.invoke.name == name and not cfg.usage:
                continue
            result = check_site(defs, site)
            report.modular.append(result.to_dict())
            ok = ok and result.holds
    return ok


def _simulate_stage(cfg, pf, refined, syncs, report: RunReport) -> bool:
    programs = [pf.programs[name] for name in sorted(pf.programs)]
    derived = not programs
    if derived:
        logger.info("no impl blocks; simulating programs derived from the protocol")
        programs = programs_from_protocol(refined)
    cross = cross_validate(refined, programs, syncs, cfg.bounds, strict=derived)
    if not cross.consistent:
        logger.warning(cross.note)
    entry = cross.dynamic.to_dict()
    entry["staticRaceFree"] = cross.static_race_free
    entry["note"] = cross.note
    report.sim_reports.append(entry)
    return cross.dynamic.verdict is Verdict.SAFE


def _explain_stage(cfg, pf, refined, syncs, report: RunReport) -> bool:
    fact = parse_assertion(cfg.fact)
    store = assumptions_of(refined).closure()
    for e1, e2 in syncs:
        store = add_sync(store, e1, e2)

    derivations = []
    lines = []
    for part in conjuncts(ord_decompose(fact, refined)):
        if not isinstance(part, Ord):
            raise MercuriusError(f"explain needs an ordering, got {part}")
        derivation = explain(store, part.ordering)
        derivations.append({"ordering": str(part.ordering),
                            "derivation": derivation.to_dict() if derivation else None})
        lines.append(derivation.render() if derivation else f"{part.ordering}  not derivable")
    report.explanation = {"fact": str(fact), "derivations": derivations, "text": "\n".join(lines)}
    return all(d["derivation"] is not None for d in derivations)


STAGES: Dict[str, Stage] = {
    "refine": _refine_stage,
    "race": _race_stage,
    "graph": _graph_stage,
    "project": _project_stage,
    "modular": _modular_stage,
    "simulate": _simulate_stage,
    "explain": _explain_stage,
}


def write_report(cfg: RunConfig, report: RunReport) -> None:
    text = report.to_json() if cfg.output_format == "json" else render_text(report)
    if cfg.out is not None:
        cfg.out.write_text(text, encoding="utf-8")
        logger.info(f"report written to {cfg.out}")
    else:
        sys.stdout.write(text)


# --- command line ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--format",
        dest="output_format",
        choices=("text", "json"),
        default="text",
        help="Report format (default: text)"
    )
    common.add_argument(
        "--out", "-o",
        type=Path,
        help="Write the report to a file instead of stdout"
    )
    common.add_argument(
        "--sync",
        action="append",
        default=[],
        metavar="EDGE",
        help="Explicit synchronization edge such as A^1<B^2 (repeatable)"
    )
    common.add_argument(
        "--bounds",
        help="Simulator and unrolling bounds, e.g. steps=2000,unroll=2"
    )
    common.add_argument(
        "--debug",
        action="store_true",
        help="Enable debug logging"
    )

    parser = argparse.ArgumentParser(
        prog="mercurius",
        description="Mercurius - race-freedom checking and projection for multiparty protocols",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  mercurius refine protocols/overview.mpp          Print the refined protocol
  mercurius check race protocols/twobuyer.mpp      Classify every guard
  mercurius check race protocols/intro_race.mpp --sync "A^1<B^2"
  mercurius project protocols/twobuyer.mpp --party B1
  mercurius project protocols/overview.mpp --all   Shared assumptions
  mercurius check modular protocols/modular.mpp --def H0
  mercurius simulate protocols/intro_sync.mpp --bounds steps=500
  mercurius explain protocols/overview.mpp "1 <HB 3"

Environment:
  MERCURIUS_BOUNDS   default bounds (steps=N,unroll=N)
  MERCURIUS_DEBUG    set to 1 for debug logging
"""
    )
    commands = parser.add_subparsers(dest="command", required=True)

    refine_cmd = commands.add_parser("refine", parents=[common], help="Insert assumptions and guards")
    refine_cmd.add_argument("input", type=Path, help="Protocol file (.mpp)")

    project_cmd = commands.add_parser("project", parents=[common], help="Project onto parties or channels")
    project_cmd.add_argument("input", type=Path, help="Protocol file (.mpp)")
    project_cmd.add_argument("--party", "-p", help="Project onto one party")
    project_cmd.add_argument("--channel", "-c", help="Restrict to one channel")
    project_cmd.add_argument("--all", dest="shared", action="store_true",
                             help="Print the shared ordering spec")

    check_cmd = commands.add_parser("check", parents=[common], help="Run one analysis")
    check_cmd.add_argument("check", choices=CHECK_KINDS, help="Analysis to run")
    check_cmd.add_argument("input", type=Path, help="Protocol file (.mpp)")
    check_cmd.add_argument("--def", dest="definition", help="Derive the pre-context condition of a definition")
    check_cmd.add_argument("--usage", help="Check every invocation inside a definition")
    check_cmd.add_argument("--dot", action="store_true", help="Include Graphviz output (check graph)")

    modular_cmd = commands.add_parser("modular", parents=[common], help="Same as check modular")
    modular_cmd.add_argument("input", type=Path, help="Protocol file (.mpp)")
    modular_cmd.add_argument("--def", dest="definition", help="Derive the pre-context condition of a definition")
    modular_cmd.add_argument("--usage", help="Check every invocation inside a definition")

    simulate_cmd = commands.add_parser("simulate", parents=[common], help="Explore program schedules")
    simulate_cmd.add_argument("input", type=Path, help="Protocol file (.mpp) with impl blocks")

    explain_cmd = commands.add_parser("explain", parents=[common], help="Show how an ordering is derived")
    explain_cmd.add_argument("input", type=Path, help="Protocol file (.mpp)")
    explain_cmd.add_argument("fact", help="Ordering such as '1 <HB 3' or 'A^1 <HB C^3'")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    bounds = bounds_from_env()
    if args.bounds:
        bounds = parse_bounds(args.bounds, bounds)
    values = {key: value for key, value in vars(args).items()
              if key not in ("bounds", "debug") and value is not None}
    return RunConfig(max_steps=bounds.max_steps, max_unroll=bounds.max_unroll, **values)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.debug:
        os.environ[DEBUG_ENV] = "1"
    debug = os.getenv(DEBUG_ENV, "0") == "1"
    logging.basicConfig(
        level=logging.DEBUG if debug else logging.INFO,
        format="%(asctime)s [%(levelname)s] %(message)s",
        datefmt="%H:%M:%S"
    )

    try:
        cfg = config_from_args(args)
        code, report = run(cfg)
        write_report(cfg, report)
    except ValidationError as e:
        print(f"error: {e.errors()[0]['msg']}", file=sys.stderr)
        return EXIT_USAGE
    except (MercuriusError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return code


if __name__ == "__main__":
    sys.exit(main())
