"""The `tt` command: parse, emit, run, simulate, and check programs.

Every subcommand is reproducible by construction: randomness comes only
from the --seed flag (with a fixed default), so the same invocation
always writes the same trace bytes and reaches the same verdict.

Exit codes: 0 for success or a passing verdict, 1 for diagnostics and
failing or inconclusive verdicts, 2 for usage errors such as a missing
input file.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from .central import run_centralised
from .desugar import to_kernel
from .diagnostics import TimetideError
from .kernel import emit_kernel
from .hostfuncs import TABLES, get_table, table_is_pure
from .lsn import load_mapping, load_topology, plan_deployment
from .runtime import run_distributed
from .schedule import Greedy, RoundRobin, Schedule, Seeded
from .sockets import run_sockets
from .surface import parse_text, pretty_print, validate
from .trace import Trace
from .values import value_from_json
from .verify import (
    ObserverBinding,
    Verdict,
    check_determinism,
    check_equivalence,
    check_safety,
    compose_observer,
    replay_counterexample,
)

DEFAULT_SEED = 1729
SURFACE_HEADER = "timetide-surface v1"


# ----------------------------------------------------------------- helpers


def _read_file(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}")


class UsageError(Exception):
    pass


def _load_program(path: str):
    program = parse_text(_read_file(path), path)
    validate(program)
    return program


def _schedule(name: str, seed: int) -> Schedule:
    if name == "round-robin":
        return RoundRobin()
    if name == "greedy":
        return Greedy()
    if name == "greedy-last":
        return Greedy(from_end=True)
    if name == "random":
        return Seeded(seed)
    raise UsageError(f"unknown schedule {name!r}")


def _hosts(name: Optional[str]):
    return get_table(name) if name else None


def _stimulus(path: Optional[str]):
    if path is None:
        return None
    obj = json.loads(_read_file(path))
    if not isinstance(obj, dict):
        raise UsageError("stimulus file must map channel names to value lists")
    return {
        chan: [value_from_json(v) for v in values]
        for chan, values in obj.items()
    }


def _write_trace(path: Optional[str], trace: Trace) -> None:
    if path is None:
        return
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(trace.dumps())
    print(f"trace: {path} ({len(trace.records)} records)")


def _verdict_exit(v: Verdict) -> int:
    return 0 if v.status == "PASS" else 1


def _parse_pairs(pairs: Sequence[str], flag: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in pairs:
        key, sep, val = item.partition("=")
        if not sep or not key or not val:
            raise UsageError(f"{flag} wants NAME=VALUE, got {item!r}")
        out[key] = val
    return out


# ------------------------------------------------------------- subcommands


def _cmd_parse(args) -> int:
    program = _load_program(args.file)
    print(f"{args.file}: {len(program.modules)} modules, entry {program.entry}")
    return 0


def _cmd_emit(args) -> int:
    program = _load_program(args.file)
    if args.ast:
        sys.stdout.write(SURFACE_HEADER + "\n" + pretty_print(program))
    else:
        sys.stdout.write(emit_kernel(to_kernel(program)))
    return 0


def _cmd_run(args) -> int:
    kp = to_kernel(_load_program(args.file))
    result = run_centralised(
        kp,
        tick_limit=args.ticks,
        schedule=_schedule(args.schedule, args.seed),
        hosts=_hosts(args.hosts),
        stimulus=_stimulus(args.stimulus),
    )
    for name in sorted(result.clocks):
        print(
            f"{name}: tick {result.clocks[name]}, {result.statuses[name]}, "
            f"{result.reactions.get(name, 0)} reactions"
        )
    _write_trace(args.trace, result.trace)
    return 0


def _cmd_simulate(args) -> int:
    source = _read_file(args.file)
    topo_text = _read_file(args.lsn)
    map_text = _read_file(args.map)
    program = parse_text(source, args.file)
    validate(program)
    kp = to_kernel(program)
    deployment = plan_deployment(
        kp, load_topology(topo_text), load_mapping(map_text)
    )
    if args.spawn:
        if args.stimulus:
            raise UsageError("scripted stimulus only runs --in-process")
        result = run_sockets(
            source,
            args.file,
            deployment,
            topology_json=topo_text,
            mapping_json=map_text,
            tick_limit=args.ticks,
            host_table=args.hosts,
            latency_ms=args.latency,
        )
    else:
        result = run_distributed(
            kp,
            deployment,
            tick_limit=args.ticks,
            hosts=_hosts(args.hosts),
            stimulus=_stimulus(args.stimulus),
        )
    mode = "spawned processes" if args.spawn else "in-process threads"
    print(f"simulated {args.ticks} ticks on {mode}")
    for name in sorted(result.clocks):
        print(f"{name}: tick {result.clocks[name]}, {result.statuses[name]}")
    _write_trace(args.trace, result.trace)
    return 0


def _cmd_determinism(args) -> int:
    kp = to_kernel(_load_program(args.file))
    verdict = check_determinism(
        kp,
        runs=args.runs,
        tick_limit=args.ticks,
        hosts=_hosts(args.hosts),
        stimulus=_stimulus(args.stimulus),
    )
    print(verdict.summary())
    return _verdict_exit(verdict)


def _find_violation_port(module, override: Optional[str]) -> str:
    if override:
        return override
    candidates = [
        p.name
        for p in module.ports
        if p.direction == "output" and p.type.base == "bool"
    ]
    if len(candidates) != 1:
        raise UsageError(
            f"observer {module.name!r} has {len(candidates)} boolean output "
            "ports; pick one with --violation-port"
        )
    return candidates[0]


def _write_verdict(args, verdict: Verdict, program_file: str, prop: str) -> None:
    print(f"Program:  {program_file}")
    print(f"Property: {prop}")
    print(f"Result:   {verdict.summary()}")
    if args.verdict is None:
        return
    doc = verdict.to_json()
    if verdict.counterexample is not None:
        ce_path = args.verdict + ".counterexample.json"
        with open(ce_path, "w", encoding="utf-8") as fh:
            json.dump(verdict.counterexample, fh, indent=2)
        doc["counterexample"] = ce_path
        print(f"counterexample: {ce_path}")
    with open(args.verdict, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
    print(f"verdict: {args.verdict}")


def _cmd_verify(args) -> int:
    program = _load_program(args.file)
    observer_prog = parse_text(_read_file(args.observer), args.observer)
    if len(observer_prog.modules) != 1:
        raise UsageError(
            f"{args.observer} must hold exactly one observer module"
        )
    observer = observer_prog.modules[0]
    binding = ObserverBinding(
        observer=observer.name,
        channels=_parse_pairs(args.bind or (), "--bind"),
        violation=_find_violation_port(observer, args.violation_port),
        violation_channel=args.violation,
        consts={
            k: int(v)
            for k, v in _parse_pairs(args.const or (), "--const").items()
        },
    )
    composed = compose_observer(program, binding, observer=observer)
    validate(composed)
    kp = to_kernel(composed)
    hosts = _hosts(args.hosts)

    if args.replay:
        ce = json.loads(_read_file(args.replay))
        bound = args.bound if args.bound is not None else len(ce.get("picks", ()))
        sig = replay_counterexample(kp, ce, tick_limit=bound, hosts=hosts)
        if sig is None:
            print("replay: violation did not recur")
            return 0
        print(f"replay: {sig}")
        return 1

    verdict = check_safety(
        kp,
        args.violation,
        bound=args.bound,
        hosts=hosts,
        exhaustive=args.exhaustive,
        schedules=args.schedules,
        state_budget=args.budget,
        pure_hosts=table_is_pure(args.hosts) if args.hosts else True,
    )
    _write_verdict(args, verdict, args.file, observer.name)
    return _verdict_exit(verdict)


def _cmd_equiv(args) -> int:
    modes = tuple(m.strip() for m in args.modes.split(",") if m.strip())
    verdict = check_equivalence(
        _read_file(args.file),
        args.file,
        _read_file(args.lsn),
        _read_file(args.map),
        args.ticks,
        host_table=args.hosts,
        modes=[m.replace("-", "_") for m in modes],
    )
    print(verdict.summary())
    return _verdict_exit(verdict)


# ------------------------------------------------------------------ parser


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="tt", description="Logically synchronous programs: compile, run, check."
    )
    sub = top.add_subparsers(dest="command", required=True)

    def common(p, ticks=True):
        p.add_argument("file", help="program source file")
        if ticks:
            p.add_argument("--ticks", type=int, default=100,
                           help="tick limit (default 100)")
        p.add_argument("--hosts", choices=sorted(TABLES), default=None,
                       help="host function table")

    p = sub.add_parser("parse", help="check a file for errors")
    p.add_argument("file")
    p.set_defaults(fn=_cmd_parse)

    p = sub.add_parser("emit", help="print the lowered or surface form")
    p.add_argument("file")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--kernel", action="store_true", default=True,
                   help="lowered form (default)")
    g.add_argument("--ast", action="store_true",
                   help="parsed surface form, pretty printed")
    p.set_defaults(fn=_cmd_emit)

    p = sub.add_parser("run", help="run on the one-process scheduler")
    common(p)
    p.add_argument("--schedule", default="round-robin",
                   choices=["round-robin", "random", "greedy", "greedy-last"])
    p.add_argument("--seed", type=int, default=DEFAULT_SEED,
                   help=f"seed for --schedule random (default {DEFAULT_SEED})")
    p.add_argument("--trace", help="write the trace here as JSON lines")
    p.add_argument("--stimulus", help="JSON file of channel value scripts")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("simulate", help="run distributed over a topology")
    common(p)
    p.add_argument("--lsn", required=True, help="topology JSON file")
    p.add_argument("--map", required=True, help="thread-to-node JSON file")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--in-process", action="store_true",
                   help="one thread per node (default)")
    g.add_argument("--spawn", action="store_true",
                   help="one OS process per node, TCP links")
    p.add_argument("--latency", type=int, default=0,
                   help="per-frame link latency in ms (--spawn only)")
    p.add_argument("--trace", help="write the merged trace here")
    p.add_argument("--stimulus", help="JSON channel scripts (in-process only)")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("check-determinism",
                       help="compare traces across many schedules")
    common(p)
    p.add_argument("--runs", type=int, default=100,
                   help="number of schedules (default 100)")
    p.add_argument("--stimulus")
    p.set_defaults(fn=_cmd_determinism)

    p = sub.add_parser("verify", help="check a safety property via an observer")
    common(p, ticks=False)
    p.add_argument("--observer", required=True,
                   help="file holding the observer module")
    p.add_argument("--bind", action="append", metavar="PORT=CHANNEL",
                   help="wire an observer input to a watched channel")
    p.add_argument("--const", action="append", metavar="NAME=INT",
                   help="bind an observer const port")
    p.add_argument("--violation", default="violated",
                   help="name for the flag channel (default: violated)")
    p.add_argument("--violation-port",
                   help="observer output port (default: its sole bool output)")
    p.add_argument("--bound", type=int,
                   help="ticks to explore (default: prelude + one window)")
    p.add_argument("--exhaustive", action="store_true",
                   help="walk all interleavings instead of a schedule sweep")
    p.add_argument("--schedules", type=int, default=20,
                   help="sweep width when not exhaustive (default 20)")
    p.add_argument("--budget", type=int, default=200_000,
                   help="state budget for --exhaustive (default 200000)")
    p.add_argument("--verdict", default="verdict.json",
                   help="where to write the verdict (default verdict.json)")
    p.add_argument("--replay", metavar="CE.json",
                   help="re-run a saved counterexample; exit 1 if it recurs")
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("equiv",
                       help="distributed runs must match the one-process run")
    common(p)
    p.add_argument("--lsn", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--modes", default="in-process,sockets",
                   help="comma list of in-process,sockets (default both)")
    p.set_defaults(fn=_cmd_equiv)
    return top


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"tt: {exc}", file=sys.stderr)
        return 2
    except TimetideError as exc:
        print(f"tt: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"tt: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
