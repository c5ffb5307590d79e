"""Trace post-processing: utilization, a text Gantt chart and JSON export."""
from __future__ import annotations

import json
from collections import defaultdict

from .engine import UNITS, SimTrace

GANTT_WIDTH = 80
MARKS = {"TMA": "=", "TensorCore": "#", "CudaCore": "+"}


def _union(spans):
    total, cur_s, cur_e = 0, None, None
    for s, e in sorted(spans):
        if cur_e is None or s > cur_e:
            if cur_e is not None:
                total += cur_e - cur_s
            cur_s, cur_e = s, e
        else:
            cur_e = max(cur_e, e)
    if cur_e is not None:
        total += cur_e - cur_s
    return total


def utilization(trace: SimTrace, cycles=None):
    """Busy fraction per unit: union of busy spans per SM over cycles x SMs."""
    cycles = trace.cycles if cycles is None else cycles
    if not cycles:
        return {u: 0.0 for u in UNITS}
    spans = defaultdict(list)
    for iv in trace.intervals:
        spans[(iv.unit, iv.sm)].append((iv.start, iv.end))
    out = {}
    for u in UNITS:
        busy = sum(_union(v) for (unit, _), v in spans.items() if unit == u)
        out[u] = min(1.0, busy / (cycles * max(1, trace.num_sms)))
    return out


def gantt(trace: SimTrace, width=GANTT_WIDTH, sm=0):
    """One row per unit; each column is a bucket of cycles, marked when busy."""
    cycles = trace.cycles or max((iv.end for iv in trace.intervals), default=0)
    bucket = max(1, -(-cycles // width)) if cycles else 1
    lines = [f"cycles {cycles}  sm {sm}  {bucket} cycles/column"]
    if not trace.intervals:
        return "\n".join(lines) + "\n"
    for u in UNITS:
        row = [" "] * width
        for iv in trace.intervals:
            if iv.unit != u or iv.sm != sm or iv.end <= iv.start:
                continue
            for col in range(iv.start // bucket, min(width, -(-iv.end // bucket))):
                row[col] = MARKS[u]
        lines.append(f"{u:<10} |{''.join(row)}|")
    return "\n".join(lines) + "\n"


def trace_dict(trace: SimTrace, verdict):
    return {
        "intervals": [
            {"unit": iv.unit, "wg": iv.wg, "start": iv.start, "end": iv.end,
             "label": iv.label, "sm": iv.sm, "lane": iv.lane}
            for iv in trace.intervals
        ],
        "summary": {
            "cycles": trace.cycles,
            "utilization": utilization(trace),
            "verdict": verdict,
        },
        "events": trace.events,
    }


def trace_json(trace: SimTrace, verdict) -> str:
    return json.dumps(trace_dict(trace, verdict), sort_keys=True, indent=1)
