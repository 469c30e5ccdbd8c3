"""
Mercurius - race-freedom analysis for asynchronous multiparty protocols.

Refines a global protocol with ordering assumptions and guards, checks the
guards against an HB/CB ordering store, projects the result onto parties,
endpoints and channels, and cross-checks verdicts with a bounded simulator.
"""

from .core import Channel, Event, Label, Msg, Party, Transmission
from .errors import MercuriusError
from .parser import parse, parse_protocol, render_protocol, serialize
from .project import project_all, project_channel, project_endpoint, project_party
from .refine import check_race_freedom, collect, refine_protocol
from .wellformed import check_wf

__version__ = "1.0.0"

__all__ = [
    "Channel", "Event", "Label", "Msg", "Party", "Transmission",
    "MercuriusError",
    "parse", "parse_protocol", "render_protocol", "serialize",
    "project_all", "project_channel", "project_endpoint", "project_party",
    "check_race_freedom", "collect", "refine_protocol",
    "check_wf",
]
