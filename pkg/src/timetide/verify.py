"""Program checking: schedule confluence, runtime equivalence, and
observer-based safety within a bounded window.

An observer is an ordinary module that watches copies of selected
channels and raises a boolean flag when the property it encodes fails.
compose_observer wires one into a program without disturbing the watched
channels: every tapped send is duplicated at the sender into a fresh
shadow channel with the same delay, so the observed program's own queues
never see the observer.

Safety checking runs the composed program and watches for a `true` push
on the flag channel. The default is a sweep over many distinct schedules;
the exhaustive mode walks every reaction interleaving depth-first with
memoized configurations, which is only tractable for small windows.
Confluence (checked independently) says the two agree.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import warnings
from dataclasses import dataclass, field, replace as dc_replace
from typing import Mapping, Optional, Sequence

from .central import CentralRun, StimulusRunner, run_centralised
from .desugar import to_kernel
from .diagnostics import ValidationError
from .hostfuncs import get_table
from .kernel import KernelProgram
from .lsn import load_mapping, load_topology, plan_deployment
from .runtime import run_distributed
from .schedule import Replay, standard_sweep
from .semantics import HostTable
from .sockets import run_sockets
from .surface import ast, parse_text
from .trace import Trace, projections_equal
from .values import Value, value_to_json

PASS = "PASS"
FAIL = "FAIL"
INCONCLUSIVE = "INCONCLUSIVE"


@dataclass
class Verdict:
    """Outcome of one check. A FAIL always carries enough to replay it."""

    status: str
    check: str
    bound: int
    detail: str = ""
    counterexample: Optional[dict] = None
    stats: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.status not in (PASS, FAIL, INCONCLUSIVE):
            raise ValueError(f"bad verdict status {self.status!r}")
        if self.status == FAIL and self.counterexample is None:
            raise ValueError("a failing verdict must carry a counterexample")

    def summary(self) -> str:
        tail = f": {self.detail}" if self.detail else ""
        return f"{self.status} {self.check} (bound {self.bound}){tail}"

    def to_json(self) -> dict:
        out = {
            "status": self.status,
            "check": self.check,
            "bound": self.bound,
            "detail": self.detail,
        }
        if self.counterexample is not None:
            out["counterexample"] = self.counterexample
        if self.stats:
            out["stats"] = self.stats
        return out


# ------------------------------------------------------------- observers


@dataclass(frozen=True)
class ObserverBinding:
    """How an observer module plugs into a program.

    channels maps observer input ports to watched channels, written as
    "name" or "name[index]" against the entry module's declarations.
    violation names the observer's boolean output port; its flag lands on
    a fresh channel (violation_channel) with the observer as sole writer.
    """

    observer: str
    channels: Mapping[str, str] = field(default_factory=dict)
    violation: str = "violated_out"
    violation_channel: str = "violated"
    consts: Mapping[str, int] = field(default_factory=dict)


def _parse_chan_ref(spec: str) -> tuple[str, Optional[int]]:
    m = re.fullmatch(r"(\w+)(?:\[(\d+)\])?", spec.strip())
    if m is None:
        raise ValidationError(f"bad channel reference {spec!r}")
    return m.group(1), int(m.group(2)) if m.group(2) is not None else None


def compose_observer(
    program: ast.SurfaceProgram,
    binding: ObserverBinding,
    observer: Optional[ast.ModuleDecl] = None,
) -> ast.SurfaceProgram:
    """Return the program with the observer running as an extra arm.

    Tapped channels are duplicated at the sender into shadow channels
    (same element type, delay and initial value) feeding only the
    observer, so watching never perturbs what is watched.
    """
    from .surface.resolve import eval_const_expr, fold_expr, module_const_env

    obs = observer if observer is not None else program.module(binding.observer)
    if obs is None:
        raise ValidationError(f"unknown observer module {binding.observer!r}")
    entry = program.module(program.entry)
    if entry is None:
        raise ValidationError(f"program has no entry module {program.entry!r}")

    viol_port = obs.port(binding.violation)
    if viol_port is None or viol_port.direction != "output":
        raise ValidationError(
            f"observer {obs.name!r} needs a boolean output port {binding.violation!r}"
        )
    if viol_port.type.base != "bool":
        raise ValidationError(f"violation port {binding.violation!r} must be bool")

    try:
        consts = module_const_env(entry)
    except Exception:
        consts = {}

    taken = {c.name for c in entry.channels}
    new_channels: list[ast.ChannelDecl] = []
    run_bindings: list[ast.Binding] = []
    taps = list(program.taps)

    for port_name, ref in binding.channels.items():
        port = obs.port(port_name)
        if port is None or port.direction != "input" or port.is_const:
            raise ValidationError(
                f"observer {obs.name!r} has no plain input port {port_name!r}"
            )
        base, index = _parse_chan_ref(ref)
        decl = next((c for c in entry.channels if c.name == base), None)
        if decl is None:
            raise ValidationError(f"observer watches unknown channel {base!r}")
        if decl.type.size is None:
            if index is not None:
                raise ValidationError(f"channel {base!r} is not an array")
            primary = base
            shadow = f"{base}_watch"
        else:
            if index is None:
                raise ValidationError(
                    f"channel {base!r} is an array; watch one element"
                )
            size = eval_const_expr(fold_expr(decl.type.size, consts))
            if isinstance(size, int) and not 0 <= index < size:
                raise ValidationError(
                    f"channel {base!r} has {size} elements; {index} is outside"
                )
            primary = f"{base}.{index}"
            shadow = f"{base}_{index}_watch"
        if shadow in taken:
            raise ValidationError(f"shadow channel name {shadow!r} is taken")
        taken.add(shadow)
        new_channels.append(
            ast.ChannelDecl(
                name=shadow,
                type=ast.TypeRef(decl.type.base, None),
                delay=decl.delay,
                init=decl.init,
            )
        )
        taps.append((primary, shadow))
        run_bindings.append(ast.Binding(ast.Name(shadow), port=port_name))

    if binding.violation_channel in taken:
        raise ValidationError(
            f"violation channel name {binding.violation_channel!r} is taken"
        )
    new_channels.append(
        ast.ChannelDecl(
            name=binding.violation_channel,
            type=ast.TypeRef("bool", None),
            delay=ast.IntLit(1),
        )
    )
    run_bindings.append(
        ast.Binding(ast.Name(binding.violation_channel), port=binding.violation)
    )
    for cname, cval in binding.consts.items():
        run_bindings.append(ast.Binding(ast.IntLit(cval), port=cname))

    arm = ast.Run(obs.name, tuple(run_bindings))
    new_entry = dc_replace(
        entry,
        channels=entry.channels + tuple(new_channels),
        body=ast.Par(entry.body, arm),
    )
    modules = tuple(
        new_entry if m.name == entry.name else m for m in program.modules
    )
    existing = program.module(obs.name)
    if existing is None:
        modules = modules + (obs,)
    elif existing is not obs:
        raise ValidationError(f"module name {obs.name!r} is already defined")
    return dc_replace(program, modules=modules, taps=tuple(taps))


# ------------------------------------------------------------ time windows


def hyperperiod(program: KernelProgram) -> Optional[tuple[int, int]]:
    """Return (H, P): window length and prelude, or None when undefined.

    H is the least common multiple of every task period. P is the largest
    task offset plus the deepest channel delay, rounded up to a whole
    multiple of H. A thread with no periodic task (or more than one) has
    no static window, so there is nothing to return.
    """
    by_thread: dict[str, int] = {}
    for t in program.tasks:
        if t.thread in by_thread:
            return None
        by_thread[t.thread] = t.period
    for name in program.threads:
        if name not in by_thread:
            return None
    if not by_thread:
        return None
    h = math.lcm(*by_thread.values())
    worst = max(t.offset for t in program.tasks)
    if program.channels:
        worst += max(spec.delta for spec in program.channels.values())
    p = ((worst + h - 1) // h) * h
    return h, p


# ----------------------------------------------------------- determinism


def check_determinism(
    program: KernelProgram,
    runs: int,
    tick_limit: int,
    *,
    hosts: Optional[HostTable] = None,
    stimulus: Optional[Mapping[str, Sequence[Value]]] = None,
) -> Verdict:
    """Run under many schedules; per-thread projections must all agree."""
    if runs < 2:
        raise ValueError("need at least two runs to compare")
    threads = sorted(program.threads)
    schedules = standard_sweep(runs)
    reference: Optional[Trace] = None
    ref_desc = ""
    for sched in schedules:
        trace = Trace()
        run_centralised(
            program, tick_limit=tick_limit, schedule=sched, hosts=hosts,
            trace=trace, stimulus=stimulus,
        )
        if reference is None:
            reference, ref_desc = trace, sched.describe()
            continue
        diff = projections_equal(reference, trace, threads)
        if diff is not None:
            return Verdict(
                FAIL,
                "determinism",
                tick_limit,
                detail=f"{ref_desc} and {sched.describe()} disagree",
                counterexample={
                    "schedule_a": ref_desc,
                    "schedule_b": sched.describe(),
                    "difference": diff,
                },
                stats={"runs": runs},
            )
    return Verdict(
        PASS,
        "determinism",
        tick_limit,
        detail=f"{runs} schedules agree on {len(threads)} threads",
        stats={"runs": runs, "threads": len(threads)},
    )


# ----------------------------------------------------------- equivalence


def check_equivalence(
    source: str,
    filename: str,
    topology_json: str,
    mapping_json: str,
    tick_limit: int,
    *,
    host_table: Optional[str] = None,
    stimulus: Optional[Mapping[str, Sequence[Value]]] = None,
    modes: Sequence[str] = ("in_process", "sockets"),
) -> Verdict:
    """Distributed runs must reproduce the one-process trace per thread."""
    program = to_kernel(parse_text(source, filename))
    hosts = get_table(host_table) if host_table else None
    deployment = plan_deployment(
        program, load_topology(topology_json), load_mapping(mapping_json)
    )
    threads = sorted(program.threads)

    central = Trace()
    run_centralised(
        program, tick_limit=tick_limit, hosts=hosts, trace=central,
        stimulus=stimulus,
    )

    checked = []
    for mode in modes:
        if mode == "in_process":
            result = run_distributed(
                program, deployment, tick_limit=tick_limit, hosts=hosts,
                stimulus=stimulus,
            )
        elif mode == "sockets":
            if stimulus:
                raise ValueError("scripted stimulus only runs in-process")
            result = run_sockets(
                source, filename, deployment,
                topology_json=topology_json, mapping_json=mapping_json,
                tick_limit=tick_limit, host_table=host_table,
            )
        else:
            raise ValueError(f"unknown equivalence mode {mode!r}")
        diff = projections_equal(central, result.trace, threads)
        if diff is not None:
            return Verdict(
                FAIL,
                "equivalence",
                tick_limit,
                detail=f"{mode} run diverged from the one-process run",
                counterexample={
                    "mode": mode,
                    "difference": diff,
                    "tick_limit": tick_limit,
                    "filename": filename,
                },
                stats={"threads": len(threads)},
            )
        checked.append(mode)
    return Verdict(
        PASS,
        "equivalence",
        tick_limit,
        detail=f"{' and '.join(checked)} match the one-process run",
        stats={"threads": len(threads), "records": len(central.records)},
    )


# ---------------------------------------------------------------- safety


class ViolationSignal(Exception):
    """Raised by the watch hook the moment the flag channel carries true."""

    def __init__(self, chan: str, writer: str, slot: int) -> None:
        super().__init__(f"{chan!r} raised by {writer!r} at tick {slot}")
        self.chan = chan
        self.writer = writer
        self.slot = slot


def _watch_hook(violation_channel: str):
    def hook(chan: str, writer: str, slot: int, value: Value) -> None:
        if chan == violation_channel and value is True:
            raise ViolationSignal(chan, writer, slot)

    return hook


def _counterexample(run: CentralRun, sig: ViolationSignal, schedule: str) -> dict:
    picks = [[name, theta] for name, theta in run.pick_log]
    if not picks or picks[-1][0] != sig.writer:
        # the raising reaction was cut short before it was logged
        picks.append([sig.writer, run.runners[sig.writer].theta])
    tail = [r.line() for r in run.trace.records[-30:]]
    return {
        "schedule": schedule,
        "picks": picks,
        "violation": {"channel": sig.chan, "writer": sig.writer, "tick": sig.slot},
        "trace_tail": tail,
    }


def _digest(run: CentralRun) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    for name in sorted(run.runners):
        r = run.runners[name]
        h.update(name.encode())
        h.update(str(r.theta).encode())
        h.update(run.state[name].encode())
        if isinstance(r, StimulusRunner):
            continue
        h.update(repr(r.residual).encode())
        data = {k: value_to_json(v) for k, v in r.data.items()}
        h.update(json.dumps(data, sort_keys=True).encode())
    for key in sorted(run.reader_ports):
        port = run.reader_ports[key]
        for w in sorted(port.streams):
            s = port.streams[w]
            h.update(f"{key}|{w}|{s.state}".encode())
            h.update(json.dumps([value_to_json(v) for v in s.frames]).encode())
    return h.digest()


def check_safety(
    program: KernelProgram,
    violation_channel: str,
    *,
    bound: Optional[int] = None,
    hosts: Optional[HostTable] = None,
    stimulus: Optional[Mapping[str, Sequence[Value]]] = None,
    exhaustive: bool = False,
    schedules: int = 20,
    state_budget: int = 200_000,
    pure_hosts: bool = True,
) -> Verdict:
    """Look for any reachable `true` on the flag channel within a bound.

    The default bound is one full window after the prelude (P + H); an
    explicit larger bound widens the search, a smaller one leaves a clean
    result INCONCLUSIVE. The schedule sweep relies on confluence to stand
    in for all interleavings; exhaustive=True walks them all with a
    memoized depth-first search instead, within a state budget. Host
    functions must be pure for either search to be sound; flagging them
    impure drops to a single-schedule run with a warning.
    """
    spec = program.channels.get(violation_channel)
    if spec is None:
        raise ValueError(f"no channel {violation_channel!r} in the program")
    if len(spec.writers) != 1:
        raise ValidationError(
            f"flag channel {violation_channel!r} needs exactly one writer"
        )

    window = hyperperiod(program)
    default_bound = window[0] + window[1] if window else None
    used = bound if bound is not None else default_bound
    if used is None:
        return Verdict(
            INCONCLUSIVE,
            "safety",
            0,
            detail="no static window for an aperiodic thread; pass a bound",
        )
    short = default_bound is not None and used < default_bound

    def clean_status(explored: str, stats: dict) -> Verdict:
        if short:
            return Verdict(
                INCONCLUSIVE,
                "safety",
                used,
                detail=f"clean, but the bound stops short of the "
                f"{default_bound}-tick window",
                stats=stats,
            )
        return Verdict(PASS, "safety", used, detail=explored, stats=stats)

    hook = _watch_hook(violation_channel)

    if not pure_hosts:
        warnings.warn(
            "host functions not marked pure: checking one schedule only",
            stacklevel=2,
        )
        exhaustive = False
        schedules = 1

    if not exhaustive:
        for sched in standard_sweep(schedules):
            run = CentralRun(
                program, tick_limit=used, schedule=sched, hosts=hosts,
                trace=Trace(), stimulus=stimulus, push_hooks=[hook],
            )
            try:
                run.run()
            except ViolationSignal as sig:
                return Verdict(
                    FAIL,
                    "safety",
                    used,
                    detail=f"{violation_channel!r} raised at tick {sig.slot} "
                    f"under {sched.describe()}",
                    counterexample=_counterexample(run, sig, sched.describe()),
                    stats={"schedules": schedules},
                )
        return clean_status(
            f"no flag under {schedules} schedules", {"schedules": schedules}
        )

    run = CentralRun(
        program, tick_limit=used, hosts=hosts, trace=Trace(),
        stimulus=stimulus, push_hooks=[hook],
    )
    seen: set[bytes] = set()
    states = 0
    enabled = run.settle()
    seen.add(_digest(run))
    frames: list[tuple[dict, list[str]]] = []
    if enabled:
        frames.append((run.snapshot(), list(enabled)))
    while frames:
        snap, untried = frames[-1]
        if not untried:
            frames.pop()
            continue
        pick = untried.pop()
        run.restore(snap)
        try:
            run.advance(pick)
            enabled = run.settle()
        except ViolationSignal as sig:
            return Verdict(
                FAIL,
                "safety",
                used,
                detail=f"{violation_channel!r} raised at tick {sig.slot} "
                f"(exhaustive search)",
                counterexample=_counterexample(run, sig, "replay of listed picks"),
                stats={"states": states},
            )
        digest = _digest(run)
        if digest in seen:
            continue
        seen.add(digest)
        states += 1
        if states > state_budget:
            return Verdict(
                INCONCLUSIVE,
                "safety",
                used,
                detail=f"state budget of {state_budget} exhausted",
                stats={"states": states, "frontier": len(frames)},
            )
        if enabled:
            frames.append((run.snapshot(), list(enabled)))
    return clean_status(
        f"all interleavings explored ({states} states)", {"states": states}
    )


def replay_counterexample(
    program: KernelProgram,
    counterexample: Mapping[str, object],
    *,
    tick_limit: int,
    hosts: Optional[HostTable] = None,
    stimulus: Optional[Mapping[str, Sequence[Value]]] = None,
) -> Optional[ViolationSignal]:
    """Re-run a failing pick sequence; returns the signal it hits again."""
    raw = list(counterexample.get("picks", ()))
    picks = [p[0] if isinstance(p, (list, tuple)) else p for p in raw]
    violation = counterexample.get("violation", {})
    chan = violation.get("channel") if isinstance(violation, Mapping) else None
    if not picks or not isinstance(chan, str):
        raise ValueError("counterexample lacks picks or a violation channel")
    run = CentralRun(
        program, tick_limit=tick_limit, schedule=Replay(picks), hosts=hosts,
        trace=Trace(), stimulus=stimulus, push_hooks=[_watch_hook(chan)],
    )
    try:
        for _ in picks:
            if not run.step():
                break
    except ViolationSignal as sig:
        return sig
    return None
