"""Scenario files, the simulation engine and log tooling."""
from .engine import RunResult, run
from .logtools import EventLog, MalformedLogError, read_log, render, replay, report, summarize
from .spec import Diagnostic, Scenario, ScenarioError, load, packaged_scenarios, parse, validate, validate_doc

__all__ = [
    "Diagnostic",
    "EventLog",
    "MalformedLogError",
    "RunResult",
    "Scenario",
    "ScenarioError",
    "load",
    "packaged_scenarios",
    "parse",
    "read_log",
    "render",
    "replay",
    "report",
    "run",
    "summarize",
    "validate",
    "validate_doc",
]
