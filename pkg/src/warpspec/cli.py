"""Command-line driver.

    warpspec compile --kernel K [-D 2] [-P 1] [--mode auto] ...
    warpspec run     --kernel K [--trace-out t.json] [--gantt] ...
    warpspec sweep   --kernel K -D 1 2 3 -P 1 2 3 [--out sweep.csv]
    warpspec ablate  --kernel K [--out ladder.csv]

Exit codes: 0 success, 1 user error (bad kernel, flag or infeasible
configuration), 2 internal error, deadlock, race or oracle mismatch.
"""
from __future__ import annotations

import argparse
import sys

from . import __version__
from .driver import MODES, CompileOptions, compile_kernel, run_compiled, seed_from_env
from .errors import InternalError, WarpSpecError
from .experiments import LADDER_HEADER, SWEEP_HEADER, ablate, sweep
from .lowering import format_module
from .program import print_program
from .sim import COMPLETED, MachineConfig, gantt, load_machine, trace_json
from .tile_ir import parse_kernel

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


def read_kernel(path):
    try:
        with open(path) as f:
            return parse_kernel(f.read())
    except OSError as e:
        raise WarpSpecError(f"cannot read kernel {path}: {e.strerror}") from None


def machine(args):
    if not args.machine:
        return MachineConfig()
    try:
        return load_machine(args.machine)
    except OSError as e:
        raise WarpSpecError(f"cannot read machine config {args.machine}: {e.strerror}") from None


def write_out(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as f:
            f.write(text)


def options(args):
    return CompileOptions(
        D=args.D, P=args.P, mode=args.mode, coop_wgs=args.coop_wgs,
        persistent=args.persistent, tiles=args.tiles,
        literal_prologue=args.literal_prologue, drop_consumed=args.drop_consumed,
    )


def cmd_compile(args):
    opts = options(args)
    c = compile_kernel(read_kernel(args.kernel), opts, machine(args))
    write_out(args.listing_out, format_module(c.module))
    if args.program_out:
        write_out(args.program_out, print_program(c.program))
    return EXIT_OK


def cmd_run(args):
    opts = options(args)
    mc = machine(args)
    c = compile_kernel(read_kernel(args.kernel), opts, mc)
    if args.listing_out:
        write_out(args.listing_out, format_module(c.module))
    out = run_compiled(c, opts, mc, seed=seed_from_env())
    print(f"kernel {c.graph.name} mode {c.mode} D {opts.D} P {opts.P} "
          f"coop {opts.coop_wgs} persistent {int(opts.persistent)}")
    print(f"verdict {out.verdict}")
    print(f"cycles {out.cycles}")
    for unit, u in out.utilization.items():
        print(f"util {unit} {u:.4f}")
    if out.oracle_match is not None:
        print(f"oracle-match {str(out.oracle_match).lower()}")
    if out.mismatch:
        print(f"first-mismatch {out.mismatch}")
    if out.sim.deadlock is not None:
        print(str(out.sim.deadlock))
    if out.sim.race is not None:
        print(f"race: {out.sim.race}")
    if args.trace_out:
        write_out(args.trace_out, trace_json(out.sim.trace, out.verdict) + "\n")
    if args.gantt:
        write_out(args.gantt, gantt(out.sim.trace))
    return EXIT_OK if out.verdict == COMPLETED else EXIT_INTERNAL


def cmd_sweep(args):
    mc = machine(args)
    rows = sweep(read_kernel(args.kernel), mc, args.D, args.P, mode=args.mode, seed=seed_from_env())
    write_out(args.out, SWEEP_HEADER + "\n" + "".join(r.csv() + "\n" for r in rows))
    return EXIT_OK


def cmd_ablate(args):
    mc = machine(args)
    _, rungs = ablate(args.kernel, mc, read_kernel, seed=seed_from_env())
    base = rungs[0].cycles
    write_out(args.out, LADDER_HEADER + "\n" + "".join(r.csv(base) + "\n" for r in rungs))
    bad = [r for r in rungs if r.verdict != COMPLETED]
    return EXIT_OK if not bad else EXIT_INTERNAL


def _common(p, single=True):
    p.add_argument("--kernel", required=True, help="kernel source file (.k)")
    p.add_argument("--machine", help="machine config (key = value lines)")
    p.add_argument("--mode", choices=MODES, default="auto", help="consumer pipelining")
    if single:
        p.add_argument("-D", type=int, default=2, help="aref depth (slots per channel)")
        p.add_argument("-P", type=int, default=1, help="MMA pipeline depth")
        p.add_argument("--coop-wgs", type=int, default=1, help="cooperative consumer warp groups")
        p.add_argument("--persistent", action="store_true", help="resident CTAs over a work queue")
        p.add_argument("--tiles", type=int, help="number of output tiles to process (default: grid)")
        p.add_argument("--literal-prologue", action="store_true",
                       help="reference three-stage order, primes C0 in the prologue (listing only)")
        p.add_argument("--listing-out", help="write the lowered listing here ('-' = stdout)")
        p.add_argument("--drop-consumed", action="store_true", help=argparse.SUPPRESS)


def build_parser():
    ap = argparse.ArgumentParser(prog="warpspec", description="Warp-specialization compiler and SM simulator.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("compile", help="compile a kernel and print the lowered listing")
    _common(p)
    p.add_argument("--program-out", help="also write the warp-specialized program")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("run", help="compile, simulate and check against the sequential oracle")
    _common(p)
    p.add_argument("--trace-out", help="write the trace as JSON")
    p.add_argument("--gantt", nargs="?", const="-", help="write a text Gantt chart (default stdout)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="cycles over a D x P grid, with and without persistence")
    _common(p, single=False)
    p.add_argument("-D", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("-P", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="run the optimization ladder")
    p.add_argument("--kernel", required=True)
    p.add_argument("--machine")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except WarpSpecError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER
    except InternalError as e:
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
