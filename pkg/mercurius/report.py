"""
Report models shared by the CLI's text and JSON output.
"""

import json
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field


class GuardModel(BaseModel):
    assertion: str
    status: str
    provenance: str = ""
    witness: List[str] = Field(default_factory=list)
    components: List[Dict[str, Any]] = Field(default_factory=list)


class SharedModel(BaseModel):
    facts: List[str] = Field(default_factory=list)
    spec: str = ""


class ProjectionBundle(BaseModel):
    """Local specs by party, endpoint specs by party then channel, channel specs by channel."""
    party: Dict[str, str] = Field(default_factory=dict)
    endpoint: Dict[str, Dict[str, str]] = Field(default_factory=dict)
    channel: Dict[str, str] = Field(default_factory=dict)
    shared: Optional[SharedModel] = None


class RunReport(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    command: str
    protocol: str
    ok: bool = True
    wellformed: Optional[Dict[str, Any]] = None
    refined: Optional[str] = None
    guards: List[GuardModel] = Field(default_factory=list)
    projections: Optional[ProjectionBundle] = None
    graph: Optional[Dict[str, Any]] = None
    modular: List[Dict[str, Any]] = Field(default_factory=list)
    explanation: Optional[Dict[str, Any]] = None
    sim_reports: List[Dict[str, Any]] = Field(default_factory=list, alias="simReports")
    messages: List[str] = Field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(by_alias=True, exclude_none=True), indent=2,
                          ensure_ascii=False) + "\n"


def render_text(report: RunReport) -> str:
    """Human-readable rendering; sections appear only when populated."""
    lines: List[str] = []
    if report.wellformed is not None and not report.wellformed.get("ok", True):
        lines.append("Well-formedness violations:")
        for v in report.wellformed["violations"]:
            lines.append(f"  {v['rule']} at {v['location']}: {v['detail']}")
    if report.wellformed is not None:
        for note in report.wellformed.get("notes", []):
            lines.append(f"note: {note}")
    if report.refined is not None:
        lines.append(report.refined)
    if report.guards:
        lines.append("Guards:")
        for g in report.guards:
            extra = f"  [{', '.join(g.witness)}]" if g.witness else ""
            lines.append(f"  {g.status:<17} {g.assertion}{extra}")
    if report.projections is not None:
        bundle = report.projections
        for party, spec in bundle.party.items():
            lines.append(f"party {party}: {spec}")
        for party, by_channel in bundle.endpoint.items():
            for channel, spec in by_channel.items():
                lines.append(f"endpoint {party}@{channel}: {spec}")
        for channel, spec in bundle.channel.items():
            lines.append(f"channel {channel}: {spec}")
        if bundle.shared is not None:
            lines.append(f"shared: {bundle.shared.spec}")
            lines.extend(f"  {fact}" for fact in bundle.shared.facts)
    if report.graph is not None:
        if "dot" in report.graph:
            lines.append(report.graph["dot"].rstrip("\n"))
        for key in ("adjacent", "linked"):
            if key in report.graph:
                lines.append(f"{key}: {', '.join(report.graph[key]) or '-'}")
    for entry in report.modular:
        lines.append(_render_modular(entry))
    if report.explanation is not None:
        lines.append(report.explanation.get("text", ""))
    for sim in report.sim_reports:
        lines.append(f"simulation: {sim['verdict']} ({sim['statesExplored']} states, "
                     f"{sim['tracesExplored']} traces)")
        if sim.get("detail"):
            lines.append(f"  {sim['detail']}")
        for step in sim.get("trace", []):
            lines.append(f"  {step['thread']}: {step['action']}")
        if sim.get("note"):
            lines.append(f"  {sim['note']}")
    lines.extend(report.messages)
    return "\n".join(lines) + "\n"


def _render_modular(entry: Dict[str, Any]) -> str:
    if "clauses" in entry:
        text = f"{entry['definition']}: pre {{{', '.join(entry['clauses'])}}}"
        if entry.get("noCandidate"):
            text += f"  no candidate for {', '.join(entry['noCandidate'])}"
        if "recursion" in entry:
            text += f"  recursion {'self-contained' if entry['recursion'] else 'needs sync'}"
        return text
    status = "holds" if entry["holds"] else "fails"
    details = "; ".join(f"{o['ordering']} {'ok' if o['holds'] else 'no'}" for o in entry["obligations"])
    return f"{entry['caller']}: {entry['callee']}@{entry['label']} {status} ({details})"
