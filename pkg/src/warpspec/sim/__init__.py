"""Discrete-event model of a Hopper-like SM."""
from .engine import (
    COMPLETED, DEADLOCK, RACE, BlockedAgent, DeadlockReport, Interval,
    SimResult, SimTrace, detect_deadlock, simulate,
)
from .machine import MachineConfig, format_machine, load_machine, parse_machine
from .report import gantt, trace_dict, trace_json, utilization

__all__ = [
    "COMPLETED", "DEADLOCK", "RACE", "BlockedAgent", "DeadlockReport",
    "Interval", "MachineConfig", "SimResult", "SimTrace", "detect_deadlock",
    "format_machine", "gantt", "load_machine", "parse_machine", "simulate",
    "trace_dict", "trace_json", "utilization",
]
