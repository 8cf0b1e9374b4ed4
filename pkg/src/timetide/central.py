"""One-process execution of a kernel program.

Every thread runs as a ThreadRunner against in-memory ports. A channel is
stored per (reader, writer) pair as a FIFO of frames pre-loaded with delta
initial tokens, so the frame a reader pops at local tick n is the one the
writer pushed at tick n - delta. The scheduler picks any thread whose
pending sync is covered by buffered frames; the choice is arbitrary and
must not affect per-thread traces.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .diagnostics import DeadlockError, RuntimeFault, SchedulerBug
from .kernel import ChannelSpec, KernelProgram
from .schedule import RoundRobin, Schedule
from .semantics import HostTable, ReactionStatus, ThreadRunner, TraceSink
from .trace import Trace
from .values import EMPTY, Value, is_empty

OPEN = "open"
DONE = "done"  # writer terminated; missing frames read as empty
CUT = "cut"  # writer stopped early; missing frames never arrive

PushHook = Callable[[str, str, int, Value], None]  # chan, writer, slot, value
PopHook = Callable[[str, str, int, Value], None]  # chan, reader, slot, value

STIMULUS_THREAD = "stimulus"


def merge_frames(spec: ChannelSpec, frames: Mapping[str, Value], slot: int) -> Value:
    """Combine one frame per writer into the value the reader sees.

    Plain channels have one stream. Replica-merged channels take the frame
    of the writer that owns the slot and fault on any stray data.
    """
    mux = spec.mux
    if mux is None:
        return next(iter(frames.values()))
    owner = mux.owner(slot - spec.delta)
    for w, frame in frames.items():
        if w != owner and not is_empty(frame):
            raise RuntimeFault(
                f"channel {spec.name!r} slot {slot}: writer {w!r} pushed "
                f"outside its turn"
            )
    if owner is None:
        return EMPTY
    return frames.get(owner, EMPTY)


def prefill_frames(spec: ChannelSpec, writer: str) -> list[Value]:
    """Initial tokens for one writer's stream toward a reader."""
    out: list[Value] = []
    for slot in range(spec.delta):
        if spec.mux is None:
            out.append(spec.init)
        else:
            owner = spec.mux.owner(slot - spec.delta)
            out.append(spec.init if writer == owner else EMPTY)
    return out


class Stream:
    """Frames one writer has pushed toward one reader, oldest first."""

    __slots__ = ("frames", "state")

    def __init__(self) -> None:
        self.frames: deque[Value] = deque()
        self.state = OPEN


class CentralReaderPort:
    """Reader end of a channel: one stream per writer, merged on pop."""

    def __init__(
        self,
        spec: ChannelSpec,
        reader: str,
        writers: Sequence[str],
        pop_hooks: Sequence[PopHook] = (),
    ) -> None:
        self.spec = spec
        self.reader = reader
        self.pops = 0
        self.pop_hooks = tuple(pop_hooks)
        self.streams: dict[str, Stream] = {w: Stream() for w in writers}
        if not self.streams:
            # Nobody ever writes: behave like a writer that quit on tick 0
            # after the initial tokens.
            silent = Stream()
            silent.state = DONE
            self.streams[""] = silent
        for w, stream in self.streams.items():
            stream.frames.extend(prefill_frames(spec, w))

    def probe(self, need: int) -> str:
        """Non-consuming readiness check: ready, blocked, or cut."""
        status = "ready"
        for stream in self.streams.values():
            if len(stream.frames) >= need or stream.state == DONE:
                continue
            if stream.state == CUT:
                return "cut"
            status = "blocked"
        return status

    def stage(self, need: int) -> str:
        return self.probe(need)

    def pop(self) -> Value:
        frames: dict[str, Value] = {}
        for w, stream in self.streams.items():
            if stream.frames:
                frames[w] = stream.frames.popleft()
            elif stream.state == DONE:
                frames[w] = EMPTY
            else:
                raise SchedulerBug(
                    f"pop on {self.spec.name!r} for {self.reader!r} outran "
                    f"writer {w!r}"
                )
        slot = self.pops
        self.pops += 1
        value = merge_frames(self.spec, frames, slot)
        for hook in self.pop_hooks:
            hook(self.spec.name, self.reader, slot, value)
        return value


class CentralWriterPort:
    """Writer end of a channel, fanned out to every reader port."""

    def __init__(
        self,
        spec: ChannelSpec,
        writer: str,
        targets: Sequence[CentralReaderPort],
        push_hooks: Sequence[PushHook] = (),
    ) -> None:
        self.spec = spec
        self.writer = writer
        self.targets = tuple(targets)
        self.push_hooks = tuple(push_hooks)
        self.pushes = 0

    def push(self, value: Value) -> None:
        for hook in self.push_hooks:
            hook(self.spec.name, self.writer, self.pushes, value)
        for target in self.targets:
            target.streams[self.writer].frames.append(value)
        self.pushes += 1

    def close(self, *, terminated: bool) -> None:
        state = DONE if terminated else CUT
        for target in self.targets:
            target.streams[self.writer].state = state


class StimulusRunner:
    """Feeds scripted frames into declared channels, one frame per tick.

    Values come from a per-channel list indexed by tick; exhausted or
    missing entries are empty frames. The feeder leaves no trace records,
    so both runtimes stay comparable whether the data arrives from a
    script or over a socket.
    """

    def __init__(self, script: Mapping[str, Sequence[Value]], outbound: Mapping[str, CentralWriterPort]) -> None:
        self.name = STIMULUS_THREAD
        self.script = {c: list(vs) for c, vs in script.items()}
        self.outbound = dict(outbound)
        self.inbound: dict[str, CentralReaderPort] = {}
        self.theta = 0
        self.terminated = False
        self.stopped = False

    def probe_status(self) -> str:
        return "ready"

    def react(self) -> str:
        for chan, port in self.outbound.items():
            values = self.script.get(chan, ())
            port.push(values[self.theta] if self.theta < len(values) else EMPTY)
        self.theta += 1
        return ReactionStatus.RAN


@dataclass
class RunResult:
    trace: Trace
    clocks: dict[str, int]
    statuses: dict[str, str]  # terminated | limit | cut
    reactions: dict[str, int]


class CentralRun:
    """Wires a kernel program to in-memory ports and drives it to a tick
    limit under a pluggable schedule."""

    def __init__(
        self,
        program: KernelProgram,
        *,
        tick_limit: int,
        schedule: Optional[Schedule] = None,
        hosts: Optional[HostTable] = None,
        trace: Optional[TraceSink] = None,
        stimulus: Optional[Mapping[str, Sequence[Value]]] = None,
        push_hooks: Sequence[PushHook] = (),
        pop_hooks: Sequence[PopHook] = (),
        quiescence_hooks: Sequence[Callable[["CentralRun"], None]] = (),
    ) -> None:
        if tick_limit < 0:
            raise ValueError("tick limit must be at least 0")
        self.program = program
        self.tick_limit = tick_limit
        self.schedule = schedule if schedule is not None else RoundRobin()
        self.trace = trace if trace is not None else Trace()
        self.quiescence_hooks = tuple(quiescence_hooks)
        stimulus = dict(stimulus or {})
        for chan in stimulus:
            if chan not in program.channels:
                raise ValueError(f"stimulus targets unknown channel {chan!r}")

        self.reader_ports: dict[tuple[str, str], CentralReaderPort] = {}
        self.writer_ports: dict[tuple[str, str], CentralWriterPort] = {}
        for name, spec in program.channels.items():
            writers = list(spec.writers)
            if name in stimulus:
                writers.append(STIMULUS_THREAD)
            ports = [
                CentralReaderPort(spec, reader, writers, pop_hooks)
                for reader in spec.readers
            ]
            for reader, port in zip(spec.readers, ports):
                self.reader_ports[(name, reader)] = port
            for w in writers:
                self.writer_ports[(name, w)] = CentralWriterPort(
                    spec, w, ports, push_hooks
                )

        self.runners: dict[str, ThreadRunner | StimulusRunner] = {}
        if stimulus:
            self.runners[STIMULUS_THREAD] = StimulusRunner(
                stimulus,
                {
                    chan: self.writer_ports[(chan, STIMULUS_THREAD)]
                    for chan in stimulus
                },
            )
        for name, term in program.threads.items():
            self.runners[name] = ThreadRunner(
                name,
                term,
                inbound={
                    spec.name: self.reader_ports[(spec.name, name)]
                    for spec in program.inbound(name)
                },
                outbound={
                    spec.name: self.writer_ports[(spec.name, name)]
                    for spec in program.outbound(name)
                },
                duration_uids=program.duration_uids(name),
                hosts=hosts,
                trace=self.trace,
            )
        self.state: dict[str, str] = {n: "running" for n in self.runners}
        self.reactions: dict[str, int] = {n: 0 for n in self.runners}
        self.pick_log: list[tuple[str, int]] = []  # (thread, clock after react)

    # -- bookkeeping

    def _finish(self, name: str, kind: str) -> None:
        self.state[name] = kind
        terminated = kind == "terminated"
        for (chan, writer), port in self.writer_ports.items():
            if writer == name:
                port.close(terminated=terminated)

    def occupancy(self, chan: str, reader: str, writer: str) -> int:
        return len(self.reader_ports[(chan, reader)].streams[writer].frames)

    def clock(self, name: str) -> int:
        return self.runners[name].theta

    # -- configuration capture (for explorers that branch and backtrack)

    def snapshot(self) -> dict:
        """Capture all mutable run state; restore() rewinds to it exactly.

        The schedule object's own state is not captured: explorers that
        branch are expected to pick threads through advance() directly.
        """
        runners: dict[str, object] = {}
        for name, r in self.runners.items():
            if isinstance(r, StimulusRunner):
                runners[name] = r.theta
            else:
                runners[name] = (r.residual, dict(r.data), r.theta, r.stopped)
        streams = {}
        for key, port in self.reader_ports.items():
            for w, s in port.streams.items():
                streams[key + (w,)] = (tuple(s.frames), s.state)
        return {
            "runners": runners,
            "streams": streams,
            "pushes": {k: p.pushes for k, p in self.writer_ports.items()},
            "state": dict(self.state),
            "reactions": dict(self.reactions),
            "picks": len(self.pick_log),
            "trace": len(self.trace.records) if isinstance(self.trace, Trace) else None,
        }

    def restore(self, snap: dict) -> None:
        for name, saved in snap["runners"].items():
            r = self.runners[name]
            if isinstance(r, StimulusRunner):
                r.theta = saved
            else:
                r.residual, data, r.theta, r.stopped = saved
                r.data = dict(data)
        for (chan, reader, w), (frames, state) in snap["streams"].items():
            s = self.reader_ports[(chan, reader)].streams[w]
            s.frames = deque(frames)
            s.state = state
        for key, pushes in snap["pushes"].items():
            self.writer_ports[key].pushes = pushes
        self.state = dict(snap["state"])
        self.reactions = dict(snap["reactions"])
        del self.pick_log[snap["picks"]:]
        if snap["trace"] is not None:
            del self.trace.records[snap["trace"]:]

    # -- main loop

    def _sweep(self) -> tuple[list[str], list[str], bool]:
        """Classify running threads; returns (enabled, cut, finished_any)."""
        enabled: list[str] = []
        cut: list[str] = []
        finished = False
        for name, runner in self.runners.items():
            if self.state[name] != "running":
                continue
            if runner.terminated:
                self._finish(name, "terminated")
                finished = True
                continue
            if runner.theta >= self.tick_limit:
                self._finish(name, "limit")
                finished = True
                continue
            status = self._probe(runner)
            if status == "cut":
                cut.append(name)
            elif status == "ready":
                enabled.append(name)
        return enabled, cut, finished

    @staticmethod
    def _probe(runner: ThreadRunner | StimulusRunner) -> str:
        if isinstance(runner, StimulusRunner):
            return runner.probe_status()
        sync = runner.pending_sync()
        if sync is None:
            raise SchedulerBug(f"thread {runner.name!r} is live without a sync")
        status = "ready"
        for port in runner.inbound.values():
            got = port.probe(sync.amount)
            if got == "cut":
                return "cut"
            if got == "blocked":
                status = "blocked"
        return status

    def settle(self) -> list[str]:
        """Process finished threads and cut cascades; list reactable threads.

        A stopped upstream writer can never supply a blocked sync, so the
        readers stop too and the cut cascades before anyone else moves.
        """
        while True:
            enabled, cut, finished = self._sweep()
            if finished:
                continue
            if not cut:
                return enabled
            for name in cut:
                status = self.runners[name].react()
                if status != ReactionStatus.CUT:
                    raise SchedulerBug(f"thread {name!r} ignored a cut stream")
                self._finish(name, "cut")

    def advance(self, pick: str) -> None:
        """React one thread that settle() reported as enabled."""
        status = self.runners[pick].react()
        self.reactions[pick] += 1
        self.pick_log.append((pick, self.runners[pick].theta))
        if status == ReactionStatus.TERMINATED:
            self._finish(pick, "terminated")
        elif status == ReactionStatus.CUT:
            raise SchedulerBug(f"thread {pick!r} was cut while staged ready")
        for hook in self.quiescence_hooks:
            hook(self)

    def step(self) -> bool:
        """Advance one scheduling decision; False once nothing is running."""
        enabled = self.settle()
        if not enabled:
            running = [n for n, s in self.state.items() if s == "running"]
            if running:
                raise DeadlockError(self._deadlock_report(running))
            return False
        self.advance(self.schedule.pick(enabled))
        return True

    def run(self) -> RunResult:
        while self.step():
            pass
        return RunResult(
            trace=self.trace,  # type: ignore[arg-type]
            clocks={n: r.theta for n, r in self.runners.items()},
            statuses=dict(self.state),
            reactions=dict(self.reactions),
        )

    def _deadlock_report(self, running: Iterable[str]) -> str:
        lines = ["no thread can complete its sync:"]
        for name in running:
            runner = self.runners[name]
            if isinstance(runner, StimulusRunner):
                continue
            sync = runner.pending_sync()
            need = sync.amount if sync is not None else 0
            for chan, port in runner.inbound.items():
                for w, stream in port.streams.items():
                    if stream.state == OPEN and len(stream.frames) < need:
                        lines.append(
                            f"  {name} at tick {runner.theta} needs "
                            f"{need - len(stream.frames)} more frames on "
                            f"{chan} from {w}"
                        )
        return "\n".join(lines)


def run_centralised(
    program: KernelProgram,
    *,
    tick_limit: int,
    schedule: Optional[Schedule] = None,
    hosts: Optional[HostTable] = None,
    trace: Optional[TraceSink] = None,
    stimulus: Optional[Mapping[str, Sequence[Value]]] = None,
    push_hooks: Sequence[PushHook] = (),
    pop_hooks: Sequence[PopHook] = (),
    quiescence_hooks: Sequence[Callable[[CentralRun], None]] = (),
) -> RunResult:
    run = CentralRun(
        program,
        tick_limit=tick_limit,
        schedule=schedule,
        hosts=hosts,
        trace=trace,
        stimulus=stimulus,
        push_hooks=push_hooks,
        pop_hooks=pop_hooks,
        quiescence_hooks=quiescence_hooks,
    )
    return run.run()
