"""Consumer-side pipelining.

Two mutually exclusive rewrites of the consumer loop:

* fine-grained: a bounded MMA pipeline of depth P.  Iteration k issues its
  dot without waiting for it; the slot read by iteration k-P is released
  once at most P-1 issue groups remain in flight.
* coarse-grained: a three-stage T/C/U schedule that overlaps the tensor-core
  stage of iteration j with the CUDA-core stage of iteration j-1.  The loop
  is fully unrolled (trip counts are concrete), renaming values to
  ``name.j``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import ConfigError, PipelineInfeasible, StagePlanAmbiguous
from .program import (
    CONSUMER, Consumed, Get, It, Marker, MmaIssue, MmaWait, Region,
    WarpSpecProgram,
)
from .tile_ir.core import KernelGraph, Op

CUDA_KINDS = ("ew", "reduce", "store")
GLUE_KINDS = ("const", "idx")
FINE_GROUP = "mma"


@dataclass(frozen=True)
class MmaPipelineConfig:
    P: int = 1

    def __post_init__(self):
        if self.P < 1:
            raise ConfigError(f"pipeline depth P must be >= 1, got {self.P}")


# ------------------------------------------------------------ fine-grained

def _consumer_loop(program):
    region = program.region(CONSUMER)
    if region is None or region.loop is None:
        raise PipelineInfeasible("consumer warp group has no loop to pipeline")
    return region


def apply_fine_grained(program: WarpSpecProgram, cfg: MmaPipelineConfig, check=True) -> WarpSpecProgram:
    """Issue dots asynchronously, keep at most P groups in flight.

    Per iteration: wait until <= P-1 groups are pending, release the slots
    read by iteration k-P, fetch iteration k, issue.  A drain after the loop
    waits everything and releases the last min(P, N) iterations.
    ``check=False`` skips the P <= D test (used to demonstrate the deadlock).
    """
    region = _consumer_loop(program)
    loop = region.loop
    P, N = cfg.P, loop.trip
    gets, ops = [], []
    for s in loop.body:
        if isinstance(s, Get):
            gets.append(s)
        elif isinstance(s, Op):
            if s.kind in CUDA_KINDS:
                raise PipelineInfeasible(
                    f"fine-grained pipelining needs a dot-only loop body; found {s.kind} {s.result or ''}".rstrip())
            ops.append(s)
        elif not isinstance(s, Consumed):
            raise PipelineInfeasible(f"consumer loop is already pipelined ({type(s).__name__})")
    if not any(op.kind == "dot" for op in ops):
        raise PipelineInfeasible("consumer loop has no dot to pipeline")
    chans = [g.chan for g in gets]
    if check:
        for c in chans:
            depth = program.channels[c].depth
            if P > depth:
                raise PipelineInfeasible(
                    f"P={P} exceeds depth D={depth} of {program.channels[c].name}; "
                    "the producer could never refill a slot held by an in-flight MMA")
    body = [MmaWait(pendings=P - 1)]
    body += [Consumed(c, It(-P), min_iter=P) for c in chans]
    body += gets
    body += [MmaIssue(op, FINE_GROUP) if op.kind == "dot" else op for op in ops]
    drain = [MmaWait(pendings=0)]
    drain += [Consumed(c, It(j, True)) for j in range(max(0, N - P), N) for c in chans]
    new = Region(region.partition, region.prologue, replace(loop, body=tuple(body)),
                 tuple(drain) + tuple(region.epilogue))
    return program.replace_region(new)


def inflight_profile(stmts, trip):
    """In-flight issue groups after every statement of the unrolled stream.

    ``stmts`` is (prologue, loop, epilogue).  A ``mma_wait pendings=n``
    leaves at most n groups; a group wait retires that group.
    """
    pro, loop, epi = stmts
    pending, trace = [], []

    def step(s, k):
        if isinstance(s, MmaIssue):
            key = (s.group, k)
            if key not in pending:
                pending.append(key)
        elif isinstance(s, MmaWait):
            if s.group is not None:
                pending[:] = [p for p in pending if p[0] != s.group]
            else:
                del pending[:max(0, len(pending) - s.pendings)]
        trace.append(len(pending))

    for s in pro:
        step(s, None)
    if loop is not None:
        for k in range(trip):
            for s in loop.body:
                step(s, k)
    for s in epi:
        step(s, None)
    return trace, len(pending)


def channel_balance(program: WarpSpecProgram, region: Region):
    """(chan, iteration) -> [gets, consumeds] over one tile of the region."""
    counts = {}

    def bump(s, k, i):
        decl = program.channels[s.chan]
        if isinstance(s, Consumed) and s.min_iter is not None and k is not None and k < s.min_iter:
            return
        it = 0 if decl.once else s.it.eval(k if k is not None else 0)
        counts.setdefault((s.chan, it), [0, 0])[i] += 1

    def walk(stmts, k):
        for s in stmts:
            if isinstance(s, Get):
                bump(s, k, 0)
            elif isinstance(s, Consumed):
                bump(s, k, 1)

    walk(region.prologue, None)
    if region.loop is not None:
        for k in range(region.loop.trip):
            walk(region.loop.body, k)
    walk(region.epilogue, None)
    return counts


# ---------------------------------------------------------- coarse-grained

@dataclass(frozen=True)
class StagePlan:
    T: tuple
    C: tuple
    U: tuple = ()

    @property
    def use_u(self):
        return bool(self.U)

    def stage_of(self, name):
        for tag in ("T", "C", "U"):
            if name in getattr(self, tag):
                return tag
        return None


def _body_ops(body):
    return [s for s in body if isinstance(s, Op)]


def identify_stages(source) -> StagePlan:
    """Split one iteration into T (first dots), C (CUDA-core ops), U (later dots).

    ``source`` is a kernel graph or a partitioned program (its consumer loop
    is used).  Keys are op result names; stores use ``store#i``.
    """
    if isinstance(source, KernelGraph):
        loop = source.loop
    else:
        loop = _consumer_loop(source).loop
    if loop is None:
        return StagePlan((), (), ())
    ops = [op for op in _body_ops(loop.body) if op.kind != "tma_load"]
    keys, n = [], 0
    for op in ops:
        if op.results:
            keys.append(op.result)
        else:
            keys.append(f"store#{n}")
            n += 1
    producer = {}
    for key, op in zip(keys, ops):
        for r in op.results:
            producer[r] = key
    kind = dict(zip(keys, (op.kind for op in ops)))
    preds = {key: {producer[o] for o in op.value_operands() if o in producer}
             for key, op in zip(keys, ops)}

    stage = {}
    for key in keys:                      # program order is topological
        k, ps = kind[key], [stage[p] for p in preds[key] if stage.get(p)]
        if k == "dot":
            stage[key] = "U" if any(s in ("C", "U") for s in ps) else "T"
        elif k in CUDA_KINDS:
            if "U" in ps:
                raise StagePlanAmbiguous(f"{key!r} reads a second-phase dot within the iteration")
            stage[key] = "C"
        else:
            stage[key] = None             # glue, placed with its first user
    for key in reversed(keys):
        if stage[key] is None:
            users = [u for u in keys if key in preds[u] and stage[u]]
            stage[key] = min((stage[u] for u in users), key="TCU".index, default="")
    # a value carried from C or U into T cannot be ready when T_j is issued
    args = {name: y for name, y in zip(loop.arg_names, loop.yields)}
    for key, op in zip(keys, ops):
        if stage[key] != "T":
            continue
        for o in op.value_operands():
            y = args.get(o)
            if y in producer and stage[producer[y]] in ("C", "U"):
                raise StagePlanAmbiguous(
                    f"{key!r} reads {o!r}, carried from stage {stage[producer[y]]} of the previous iteration")
    pick = lambda t: tuple(k for k in keys if stage[k] == t)  # noqa: E731
    return StagePlan(pick("T"), pick("C"), pick("U"))


def coarse_steps(N, use_u, chan_stages=frozenset({"T", "U"}), literal=False):
    """Abstract schedule as (action, stage, j) triples; ``store`` ends it.

    Gets/consumed are emitted only for stages in ``chan_stages``.  The
    default order primes T0 only and issues U_{j-1} after C_{j-1} has been
    computed; ``literal`` keeps the reference order verbatim, which computes
    C0 twice and issues U before its input exists.
    """
    out = []

    def get(st, j):
        if st in chan_stages:
            out.append(("get", st, j))

    def rel(st, j):
        if st in chan_stages:
            out.append(("consumed", st, j))

    def t_fetch(j):
        get("T", j)
        out.append(("issue", "T", j))

    def t_retire(j):
        out.append(("wait", "T", j))
        rel("T", j)

    def c(j):
        get("C", j)
        out.append(("compute", "C", j))
        rel("C", j)

    def u(j):
        get("U", j)
        out.append(("issue", "U", j))
        out.append(("wait", "U", j))
        rel("U", j)

    if N < 1:
        return [("store", None, None)]
    out.append(("prologue", None, None))
    t_fetch(0)
    if literal:
        t_retire(0)
        c(0)
    for j in range(1, N):
        out.append(("steady", None, j))
        t_fetch(j)
        if literal:
            if use_u:
                get("U", j - 1)
                out.append(("issue", "U", j - 1))
            t_retire(j - 1)
            c(j - 1)
            if use_u:
                out.append(("wait", "U", j - 1))
                rel("U", j - 1)
        else:
            t_retire(j - 1)
            c(j - 1)
            if use_u:
                u(j - 1)
    out.append(("epilogue", None, None))
    t_retire(N - 1)
    c(N - 1)
    if use_u:
        u(N - 1)
    out.append(("store", None, None))
    return out


def render_steps(steps):
    """One line per step, e.g. ``issue T0``; section headers as ``-- j=1``."""
    lines = []
    for action, st, j in steps:
        if action in ("prologue", "epilogue"):
            lines.append(f"-- {action}")
        elif action == "steady":
            lines.append(f"-- j={j}")
        elif action == "store":
            lines.append("store")
        else:
            lines.append(f"{action} {st}{j}")
    return lines


class _Renamer:
    """Maps names of the loop body to their per-iteration copies."""

    def __init__(self, loop, body_defs):
        self.loop = loop
        self.body_defs = body_defs
        self.args = dict(zip(loop.arg_names, loop.yields))
        self.inits = dict(loop.iter_args)

    def value(self, name, j):
        if not isinstance(name, str):
            return name
        if name == self.loop.induction:
            return j
        if name in self.args:
            if j == 0:
                return self.value(self.inits[name], None)
            return self.value(self.args[name], j - 1)
        if j is not None and name in self.body_defs:
            return f"{name}.{j}"
        return name

    def final(self, name):
        """Binding of a loop-carried name after the loop."""
        return self.value(name, self.loop.trip) if name in self.args else name

    def op(self, op, j):
        return replace(op, results=tuple(self.value(r, j) for r in op.results),
                       operands=tuple(self.value(o, j) for o in op.operands))


def apply_coarse_grained(program: WarpSpecProgram, plan: StagePlan = None, literal=False, check=True):
    """Unroll the consumer loop into the T/C/U schedule.

    Requires depth >= 2 on channels read by T when N >= 2 (T_j is fetched
    before T_{j-1} is released).  ``literal`` builds the reference order for
    listing; it is not semantics-preserving for N >= 3.
    """
    region = _consumer_loop(program)
    loop = region.loop
    plan = plan if plan is not None else identify_stages(program)
    N = loop.trip
    if not plan.T:
        raise StagePlanAmbiguous("no tensor-core stage in the loop body")

    ops = _body_ops(loop.body)
    keys, n = {}, 0
    for op in ops:
        if op.results:
            keys[id(op)] = op.result
        else:
            keys[id(op)] = f"store#{n}"
            n += 1
    stage_ops = {t: [op for op in ops if plan.stage_of(keys[id(op)]) == t] for t in "TCU"}
    # glue outside the plan (e.g. unused address math) runs with T
    stage_ops["T"] = [op for op in ops if plan.stage_of(keys[id(op)]) == "T"
                      or (op.kind in GLUE_KINDS and plan.stage_of(keys[id(op)]) is None)]
    unknown = [keys[id(op)] for op in ops
               if plan.stage_of(keys[id(op)]) is None and op.kind not in GLUE_KINDS]
    if unknown:
        raise StagePlanAmbiguous(f"ops outside the stage plan: {unknown}")

    gets = [s for s in loop.body if isinstance(s, Get)]
    chan_of = {r: g for g in gets for r in g.results}
    readers = {}
    for t in "TCU":
        for op in stage_ops[t]:
            for o in op.value_operands():
                if o in chan_of:
                    readers.setdefault(chan_of[o].chan, []).append(t)
    first = {c: min(ts, key="TCU".index) for c, ts in readers.items()}
    last = {c: max(ts, key="TCU".index) for c, ts in readers.items()}
    get_at = {t: [g for g in gets if first.get(g.chan) == t] for t in "TCU"}
    rel_at = {t: [g.chan for g in gets if last.get(g.chan) == t] for t in "TCU"}
    chan_stages = frozenset(t for t in "TCU" if get_at[t] or rel_at[t])

    if check and not literal and N >= 2:
        for g in get_at["T"]:
            decl = program.channels[g.chan]
            if decl.depth < 2:
                raise PipelineInfeasible(
                    f"coarse-grained schedule fetches T_j before releasing T_(j-1); {decl.name} needs depth >= 2")

    body_defs = {r for s in loop.body for r in (s.results if isinstance(s, (Op, Get)) else ())}
    ren = _Renamer(loop, body_defs)
    out = list(region.prologue)
    for action, st, j in coarse_steps(N, plan.use_u, chan_stages, literal):
        if action in ("prologue", "epilogue"):
            out.append(Marker(action))
        elif action == "steady":
            out.append(Marker(f"steady j={j}"))
        elif action == "get":
            out += [Get(g.chan, It(j, True), tuple(ren.value(r, j) for r in g.results)) for g in get_at[st]]
        elif action == "consumed":
            out += [Consumed(c, It(j, True)) for c in rel_at[st]]
        elif action == "issue":
            out += [MmaIssue(ren.op(op, j), f"{st}.{j}") if op.kind == "dot" else ren.op(op, j)
                    for op in stage_ops[st]]
        elif action == "wait":
            out.append(MmaWait(group=f"{st}.{j}"))
        elif action == "compute":
            out += [ren.op(op, j) for op in stage_ops["C"]]
        elif action == "store":
            out.append(Marker("final epilogue"))
            for s in region.epilogue:
                if isinstance(s, Op):
                    s = replace(s, operands=tuple(ren.final(o) if isinstance(o, str) else o for o in s.operands))
                out.append(s)
    new = Region(region.partition, tuple(out), None, ())
    return program.replace_region(new)


def coarse_outline(region: Region):
    """Recover ``issue T0``-style lines from a coarse-grained region."""
    lines = []
    for s in region.prologue:
        if isinstance(s, Marker):
            if s.text.startswith("steady j="):
                lines.append("-- j=" + s.text.split("=", 1)[1])
            elif s.text == "final epilogue":
                lines.append("store")
            else:
                lines.append(f"-- {s.text}")
        elif isinstance(s, MmaIssue):
            line = f"issue {s.group.replace('.', '')}"
            if not lines or lines[-1] != line:
                lines.append(line)
        elif isinstance(s, MmaWait) and s.group is not None:
            lines.append(f"wait {s.group.replace('.', '')}")
    return lines


def compute_counts(region: Region, plan: StagePlan):
    """How many times each C_j is computed in an unrolled coarse region."""
    counts = {}
    first_c = plan.C[0] if plan.C else None
    for s in region.prologue:
        if isinstance(s, Op) and s.results and first_c is not None:
            base, _, j = s.result.rpartition(".")
            if base == first_c and j.isdigit():
                counts[int(j)] = counts.get(int(j), 0) + 1
    return counts
