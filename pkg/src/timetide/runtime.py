"""Distributed execution inside one process.

Each program thread runs on its own Python thread against blocking
ports, exactly as it would on a separate node; channel legs are bounded
queues standing in for sockets. Relay workers forward frames across
intermediate hops one per tick. Capacity on every leg keeps a fast
writer from running unboundedly ahead: it blocks once the headroom past
the leg's pre-filled tokens is used up, and unblocks as the reader
drains frames.
"""

from __future__ import annotations

import threading
import time
from typing import Mapping, Optional, Sequence

from .central import RunResult, STIMULUS_THREAD, merge_frames, prefill_frames
from .diagnostics import SchedulerBug
from .kernel import ChannelSpec, KernelProgram
from .lsn import Deployment, StreamPlan
from .semantics import HostTable, ReactionStatus, ThreadRunner
from .trace import Trace
from .values import EMPTY, Value
from .wire import CLOSE_LIMIT, CLOSE_TERMINATED

HEADROOM = 4  # frames a writer may buffer past a leg's pre-fill


class LiveStream:
    """Bounded frame queue for one (channel, writer) leg."""

    def __init__(self, name: str, prefill: Sequence[Value], capacity: Optional[int] = None):
        self.name = name
        self._frames: list[Value] = list(prefill)
        self.capacity = capacity if capacity is not None else len(prefill) + HEADROOM
        self.close_reason: Optional[int] = None
        self._lock = threading.Lock()
        self._changed = threading.Condition(self._lock)

    def push(self, value: Value) -> None:
        with self._changed:
            while len(self._frames) >= self.capacity:
                self._changed.wait()
            self._frames.append(value)
            self._changed.notify_all()

    def close(self, reason: int) -> None:
        with self._changed:
            self.close_reason = reason
            self._changed.notify_all()

    def wait_for(self, need: int) -> str:
        """Block until `need` frames are buffered; ready, done, or cut."""
        with self._changed:
            while True:
                if len(self._frames) >= need:
                    return "ready"
                if self.close_reason == CLOSE_TERMINATED:
                    return "done"
                if self.close_reason == CLOSE_LIMIT:
                    return "cut"
                self._changed.wait()

    def pop(self) -> Value:
        """One frame, or a synthesized empty one after a terminated close."""
        with self._changed:
            if self._frames:
                v = self._frames.pop(0)
                self._changed.notify_all()
                return v
            if self.close_reason == CLOSE_TERMINATED:
                return EMPTY
            raise SchedulerBug(f"pop on drained stream {self.name}")

    def pop_or_close(self) -> tuple[str, Value | int]:
        """Relay step: next frame, or the close reason once drained."""
        with self._changed:
            while True:
                if self._frames:
                    v = self._frames.pop(0)
                    self._changed.notify_all()
                    return ("frame", v)
                if self.close_reason is not None:
                    return ("close", self.close_reason)
                self._changed.wait()


class NodeReaderPort:
    """Blocking reader port: stage() waits instead of reporting blocked."""

    def __init__(self, spec: ChannelSpec, reader: str, streams: Mapping[str, LiveStream]):
        self.spec = spec
        self.reader = reader
        self.streams = dict(streams)
        self.pops = 0

    def stage(self, need: int) -> str:
        for stream in self.streams.values():
            if stream.wait_for(need) == "cut":
                return "cut"
        return "ready"

    def pop(self) -> Value:
        frames = {w: s.pop() for w, s in self.streams.items()}
        slot = self.pops
        self.pops += 1
        return merge_frames(self.spec, frames, slot)


class NodeWriterPort:
    def __init__(self, spec: ChannelSpec, writer: str, streams: Sequence[LiveStream]):
        self.spec = spec
        self.writer = writer
        self.streams = tuple(streams)

    def push(self, value: Value) -> None:
        for stream in self.streams:
            stream.push(value)

    def close(self, reason: int) -> None:
        for stream in self.streams:
            stream.close(reason)


def relay_worker(inbound: LiveStream, outbound: LiveStream) -> None:
    """Forward one leg onto the next until the close trailer passes."""
    while True:
        kind, payload = inbound.pop_or_close()
        if kind == "frame":
            outbound.push(payload)
        else:
            outbound.close(payload)  # type: ignore[arg-type]
            return


def thread_worker(
    runner: ThreadRunner, outbound_ports: Sequence[NodeWriterPort], tick_limit: int
) -> None:
    status = None
    while not runner.terminated and not runner.stopped and runner.theta < tick_limit:
        status = runner.react()
        if status == ReactionStatus.CUT:
            break
    reason = CLOSE_TERMINATED if runner.terminated else CLOSE_LIMIT
    for port in outbound_ports:
        port.close(reason)


def stimulus_worker(
    script: Mapping[str, Sequence[Value]],
    ports: Mapping[str, NodeWriterPort],
    tick_limit: int,
    clock: list[int],
) -> None:
    for theta in range(tick_limit):
        for chan, port in ports.items():
            values = script[chan]
            port.push(values[theta] if theta < len(values) else EMPTY)
        clock[0] = theta + 1
    for port in ports.values():
        port.close(CLOSE_LIMIT)


class DistributedRun:
    """Builds streams, relays, and node threads from a deployment plan."""

    def __init__(
        self,
        program: KernelProgram,
        deployment: Deployment,
        *,
        tick_limit: int,
        hosts: Optional[HostTable] = None,
        trace: Optional[Trace] = None,
        stimulus: Optional[Mapping[str, Sequence[Value]]] = None,
    ) -> None:
        self.program = program
        self.tick_limit = tick_limit
        self.trace = trace if trace is not None else Trace()
        stimulus = dict(stimulus or {})

        # one chain of streams per plan; leg i feeds leg i+1 through a relay
        self.leg_streams: dict[tuple[str, str, str], list[LiveStream]] = {}
        for plan in deployment.plans:
            key = (plan.chan, plan.writer, plan.reader)
            spec = program.channels[plan.chan]
            if plan.local:
                chain = [LiveStream(f"{plan.chan}:{plan.writer}->{plan.reader}",
                                    prefill_frames(spec, plan.writer))]
            else:
                # The legs compose into one FIFO the reader drains from the
                # far end, so the last leg must hold the first initial
                # tokens and the first leg the last ones.
                chain = []
                base = prefill_frames(spec, plan.writer)
                used = 0
                for leg in plan.legs:
                    take = base[len(base) - used - leg.prefill : len(base) - used] if leg.prefill else []
                    used += leg.prefill
                    chain.append(
                        LiveStream(
                            f"{plan.chan}:{plan.writer}@{leg.src}->{leg.dst}",
                            take,
                        )
                    )
            self.leg_streams[key] = chain

        for chan in stimulus:
            spec = program.channels[chan]
            for reader in spec.readers:
                key = (chan, STIMULUS_THREAD, reader)
                self.leg_streams[key] = [
                    LiveStream(f"{chan}:stimulus->{reader}", prefill_frames(spec, STIMULUS_THREAD))
                ]

        self.reader_ports: dict[tuple[str, str], NodeReaderPort] = {}
        self.writer_ports: dict[tuple[str, str], NodeWriterPort] = {}
        for name, spec in program.channels.items():
            writers = list(spec.writers)
            if name in stimulus:
                writers.append(STIMULUS_THREAD)
            for reader in spec.readers:
                streams = {
                    w: self.leg_streams[(name, w, reader)][-1] for w in writers
                }
                if not streams:
                    # never written: initial tokens, then empty frames forever
                    silent = LiveStream(
                        f"{name}:silence->{reader}", prefill_frames(spec, "")
                    )
                    silent.close(CLOSE_TERMINATED)
                    streams[""] = silent
                self.reader_ports[(name, reader)] = NodeReaderPort(
                    spec, reader, streams
                )
            for w in writers:
                self.writer_ports[(name, w)] = NodeWriterPort(
                    spec,
                    w,
                    [self.leg_streams[(name, w, r)][0] for r in spec.readers],
                )

        self.runners: dict[str, ThreadRunner] = {}
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

        self.workers: list[threading.Thread] = []
        for key, chain in self.leg_streams.items():
            for i in range(len(chain) - 1):
                self.workers.append(
                    threading.Thread(
                        target=relay_worker,
                        args=(chain[i], chain[i + 1]),
                        name=f"relay:{key[0]}:{key[1]}:{i}",
                        daemon=True,
                    )
                )
        for name, runner in self.runners.items():
            mine = [p for (c, w), p in self.writer_ports.items() if w == name]
            self.workers.append(
                threading.Thread(
                    target=thread_worker,
                    args=(runner, mine, tick_limit),
                    name=f"node:{name}",
                    daemon=True,
                )
            )
        self.stim_clock = [0]
        if stimulus:
            ports = {
                chan: self.writer_ports[(chan, STIMULUS_THREAD)] for chan in stimulus
            }
            self.workers.append(
                threading.Thread(
                    target=stimulus_worker,
                    args=(stimulus, ports, tick_limit, self.stim_clock),
                    name="node:stimulus",
                    daemon=True,
                )
            )

    def run(self, stall_timeout: float = 30.0) -> RunResult:
        for w in self.workers:
            w.start()
        node_threads = [w for w in self.workers if w.name.startswith("node:")]
        last_progress = time.monotonic()
        last_clocks = None
        while any(w.is_alive() for w in node_threads):
            time.sleep(0.02)
            clocks = tuple(r.theta for r in self.runners.values()) + (self.stim_clock[0],)
            if clocks != last_clocks:
                last_clocks = clocks
                last_progress = time.monotonic()
            elif time.monotonic() - last_progress > stall_timeout:
                stuck = [w.name for w in node_threads if w.is_alive()]
                raise SchedulerBug(
                    f"no progress for {stall_timeout:.0f}s; stalled threads: "
                    + ", ".join(stuck)
                )
        for w in node_threads:
            w.join()
        statuses = {}
        for name, runner in self.runners.items():
            if runner.terminated:
                statuses[name] = "terminated"
            elif runner.stopped:
                statuses[name] = "cut"
            else:
                statuses[name] = "limit"
        return RunResult(
            trace=self.trace,
            clocks={n: r.theta for n, r in self.runners.items()},
            statuses=statuses,
            reactions={},
        )


def run_distributed(
    program: KernelProgram,
    deployment: Deployment,
    *,
    tick_limit: int,
    hosts: Optional[HostTable] = None,
    trace: Optional[Trace] = None,
    stimulus: Optional[Mapping[str, Sequence[Value]]] = None,
    stall_timeout: float = 30.0,
) -> RunResult:
    run = DistributedRun(
        program,
        deployment,
        tick_limit=tick_limit,
        hosts=hosts,
        trace=trace,
        stimulus=stimulus,
    )
    return run.run(stall_timeout=stall_timeout)
