"""Socket-backed execution: one OS process per node.

The parent plans the deployment, spawns a process per node, and brokers
the handshake: each child binds an ephemeral TCP port and reports it,
the parent broadcasts the full address book, and only then do children
connect their outgoing legs and start their threads. Every cross-node
leg is its own TCP connection announced by a one-line JSON header, then
a plain frame stream. Frame content and ordering per stream are exactly
the in-process runtime's; only the transport differs, so traces must
match the other runtimes record for record.

The receive side can inject a fixed per-frame latency, which models a
slow link without touching program semantics.
"""

from __future__ import annotations

import json
import os
import socket
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import asdict, dataclass
from typing import Optional

from .central import RunResult, prefill_frames
from .desugar import to_kernel
from .diagnostics import SchedulerBug
from .hostfuncs import get_table
from .lsn import Deployment, load_mapping, load_topology, plan_deployment
from .runtime import (
    HEADROOM,
    LiveStream,
    NodeReaderPort,
    NodeWriterPort,
    relay_worker,
    thread_worker,
)
from .semantics import ThreadRunner
from .surface import parse_text
from .trace import Trace
from .wire import CLOSE_TERMINATED, FrameDecoder, encode_close, encode_frame


@dataclass
class NodeConfig:
    node: str
    source: str
    filename: str
    host_table: Optional[str]
    topology_json: str
    mapping_json: str
    tick_limit: int
    latency_ms: int
    trace_path: str
    stall_timeout: float


class _StdioPipe:
    """Line-JSON messaging over the node process's stdin and stdout."""

    def send(self, msg) -> None:
        sys.stdout.write(json.dumps(msg) + "\n")
        sys.stdout.flush()

    def recv(self):
        line = sys.stdin.readline()
        if not line:
            raise EOFError("parent went away")
        return json.loads(line)

    def close(self) -> None:
        pass


def _leg_key(chan: str, writer: str, reader: str, leg: int) -> str:
    return f"{chan}|{writer}|{reader}|{leg}"


def _recv_all(conn: socket.socket, decoder: FrameDecoder, stream: LiveStream, delay: float) -> None:
    try:
        while True:
            chunk = conn.recv(65536)
            if not chunk:
                break
            for kind, payload in decoder.feed(chunk):
                if kind == "frame":
                    if delay:
                        time.sleep(delay)
                    stream.push(payload)
                else:
                    stream.close(payload)
                    return
    finally:
        conn.close()


def _send_all(conn: socket.socket, stream: LiveStream) -> None:
    try:
        while True:
            kind, payload = stream.pop_or_close()
            if kind == "frame":
                conn.sendall(encode_frame(payload))
            else:
                conn.sendall(encode_close(payload))
                return
    finally:
        conn.close()


def _node_main(cfg: NodeConfig, pipe) -> None:
    try:
        _node_body(cfg, pipe)
    except BaseException as exc:  # report before dying so the parent can stop waiting
        try:
            pipe.send(["error", cfg.node, f"{type(exc).__name__}: {exc}"])
        except Exception:
            pass
        os._exit(4)


def _node_body(cfg: NodeConfig, pipe) -> None:
    program = to_kernel(parse_text(cfg.source, cfg.filename))
    topo = load_topology(cfg.topology_json)
    mapping = load_mapping(cfg.mapping_json)
    dep = plan_deployment(program, topo, mapping)
    hosts = get_table(cfg.host_table) if cfg.host_table else None
    me = cfg.node
    delay = cfg.latency_ms / 1000.0

    # Streams living on this node. A leg's frames sit on its destination
    # node; the source node holds a small egress buffer in front of the
    # TCP connection.
    ingress: dict[str, LiveStream] = {}
    egress: dict[str, LiveStream] = {}
    local: dict[tuple[str, str, str], LiveStream] = {}
    expected_in = 0
    outgoing: list[tuple[str, str]] = []  # (dst node, leg key)
    for plan in dep.plans:
        spec = program.channels[plan.chan]
        if plan.local:
            if dep.node_of(plan.writer) == me:
                local[(plan.chan, plan.writer, plan.reader)] = LiveStream(
                    f"{plan.chan}:{plan.writer}->{plan.reader}",
                    prefill_frames(spec, plan.writer),
                )
            continue
        base = prefill_frames(spec, plan.writer)
        used = 0
        for i, leg in enumerate(plan.legs):
            take = (
                base[len(base) - used - leg.prefill : len(base) - used]
                if leg.prefill
                else []
            )
            used += leg.prefill
            key = _leg_key(plan.chan, plan.writer, plan.reader, i)
            if leg.dst == me:
                ingress[key] = LiveStream(f"rx:{key}", take)
                expected_in += 1
            if leg.src == me:
                egress[key] = LiveStream(f"tx:{key}", [], capacity=HEADROOM)
                outgoing.append((leg.dst, key))

    # Phase one: bind, report, learn everyone's address.
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.bind(("127.0.0.1", 0))
    listener.listen(64)
    pipe.send(["port", me, listener.getsockname()[1]])
    addresses: dict[str, list] = pipe.recv()

    io_threads: list[threading.Thread] = []
    accepted = threading.Semaphore(0)

    def acceptor() -> None:
        for _ in range(expected_in):
            conn, _ = listener.accept()
            buf = b""
            while not buf.endswith(b"\n"):
                got = conn.recv(1)
                if not got:
                    raise SchedulerBug(f"node {me}: handshake cut short")
                buf += got
            key = json.loads(buf.decode("utf-8"))["leg"]
            stream = ingress[key]
            t = threading.Thread(
                target=_recv_all,
                args=(conn, FrameDecoder(), stream, delay),
                name=f"rx:{key}",
                daemon=True,
            )
            t.start()
            io_threads.append(t)
            accepted.release()

    accept_thread = threading.Thread(target=acceptor, name="acceptor", daemon=True)
    accept_thread.start()

    # Phase two: connect outgoing legs, then wait for all inbound legs.
    for dst, key in outgoing:
        conn = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        conn.connect(tuple(addresses[dst]))
        conn.sendall((json.dumps({"leg": key}) + "\n").encode("utf-8"))
        t = threading.Thread(
            target=_send_all, args=(conn, egress[key]), name=f"tx:{key}", daemon=True
        )
        t.start()
        io_threads.append(t)
    for _ in range(expected_in):
        accepted.acquire()

    # Relay transit legs passing through this node.
    workers: list[threading.Thread] = []
    for plan, i in dep.transits(me):
        src_key = _leg_key(plan.chan, plan.writer, plan.reader, i)
        dst_key = _leg_key(plan.chan, plan.writer, plan.reader, i + 1)
        workers.append(
            threading.Thread(
                target=relay_worker,
                args=(ingress[src_key], egress[dst_key]),
                name=f"relay:{src_key}",
                daemon=True,
            )
        )

    # Ports for this node's threads.
    trace = Trace()
    runners: dict[str, ThreadRunner] = {}
    my_threads = [t for t, n in mapping.items() if n == me and t in program.threads]
    for name in my_threads:
        inbound = {}
        for spec in program.inbound(name):
            streams = {}
            for w in spec.writers:
                if dep.node_of(w) == me:
                    streams[w] = local[(spec.name, w, name)]
                else:
                    plan = next(
                        p
                        for p in dep.plans
                        if p.chan == spec.name and p.writer == w and p.reader == name
                    )
                    key = _leg_key(spec.name, w, name, len(plan.legs) - 1)
                    streams[w] = ingress[key]
            if not streams:
                silent = LiveStream(
                    f"{spec.name}:silence->{name}", prefill_frames(spec, "")
                )
                silent.close(CLOSE_TERMINATED)
                streams[""] = silent
            inbound[spec.name] = NodeReaderPort(spec, name, streams)
        outbound = {}
        for spec in program.outbound(name):
            targets = []
            for r in spec.readers:
                if dep.node_of(r) == me:
                    targets.append(local[(spec.name, name, r)])
                else:
                    targets.append(
                        egress[_leg_key(spec.name, name, r, 0)]
                    )
            outbound[spec.name] = NodeWriterPort(spec, name, targets)
        runners[name] = ThreadRunner(
            name,
            term=program.threads[name],
            inbound=inbound,
            outbound=outbound,
            duration_uids=program.duration_uids(name),
            hosts=hosts,
            trace=trace,
        )

    for name, runner in runners.items():
        ports = list(runner.outbound.values())
        workers.append(
            threading.Thread(
                target=thread_worker,
                args=(runner, ports, cfg.tick_limit),
                name=f"node:{name}",
                daemon=True,
            )
        )

    for w in workers:
        w.start()

    deadline_guard = time.monotonic()
    last = None
    node_workers = [w for w in workers if w.name.startswith("node:")]
    while any(w.is_alive() for w in node_workers):
        time.sleep(0.05)
        now = tuple(r.theta for r in runners.values())
        if now != last:
            last = now
            deadline_guard = time.monotonic()
        elif time.monotonic() - deadline_guard > cfg.stall_timeout:
            pipe.send(["stalled", me, [w.name for w in node_workers if w.is_alive()]])
            os._exit(3)
    for w in node_workers:
        w.join()

    with open(cfg.trace_path, "w", encoding="utf-8") as fh:
        fh.write(trace.dumps())
    statuses = {}
    for name, runner in runners.items():
        if runner.terminated:
            statuses[name] = "terminated"
        elif runner.stopped:
            statuses[name] = "cut"
        else:
            statuses[name] = "limit"
    pipe.send(
        [
            "done",
            me,
            {
                "clocks": {n: r.theta for n, r in runners.items()},
                "statuses": statuses,
            },
        ]
    )
    pipe.close()


def run_sockets(
    source: str,
    filename: str,
    deployment: Deployment,
    *,
    topology_json: str,
    mapping_json: str,
    tick_limit: int,
    host_table: Optional[str] = None,
    latency_ms: int = 0,
    stall_timeout: float = 60.0,
) -> RunResult:
    """Spawn one process per node, run to the tick limit, merge traces.

    Node processes are plain subprocesses running this module; the
    handshake and final reports travel over their stdin and stdout as
    one JSON document per line.
    """
    nodes = sorted({deployment.node_of(t) for t in deployment.mapping})
    procs: dict[str, subprocess.Popen] = {}
    trace_paths: dict[str, str] = {}
    with tempfile.TemporaryDirectory(prefix="tt-sockets-") as tmp:
        try:
            for node in nodes:
                cfg = NodeConfig(
                    node=node,
                    source=source,
                    filename=filename,
                    host_table=host_table,
                    topology_json=topology_json,
                    mapping_json=mapping_json,
                    tick_limit=tick_limit,
                    latency_ms=latency_ms,
                    trace_path=os.path.join(tmp, f"{node}.trace"),
                    stall_timeout=stall_timeout,
                )
                cfg_path = os.path.join(tmp, f"{node}.cfg.json")
                with open(cfg_path, "w", encoding="utf-8") as fh:
                    json.dump(asdict(cfg), fh)
                procs[node] = subprocess.Popen(
                    [sys.executable, "-m", "timetide.sockets", cfg_path],
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    text=True,
                )
                trace_paths[node] = cfg.trace_path

            addresses: dict[str, list] = {}
            for node, proc in procs.items():
                line = proc.stdout.readline()
                if not line:
                    raise SchedulerBug(f"node {node} died before reporting its port")
                kind, who, payload = json.loads(line)
                if kind != "port":
                    raise SchedulerBug(f"node {who} failed during setup: {payload}")
                addresses[who] = ["127.0.0.1", payload]
            for proc in procs.values():
                proc.stdin.write(json.dumps(addresses) + "\n")
                proc.stdin.flush()
        except BaseException:
            for proc in procs.values():
                proc.kill()
            raise

        # Each node's second stdout line is its final report. Drain on
        # threads so one wedged node cannot block the overall deadline.
        results: dict[str, Optional[str]] = {node: None for node in procs}

        def drain(node: str, stdout) -> None:
            results[node] = stdout.readline()

        readers = []
        for node, proc in procs.items():
            t = threading.Thread(target=drain, args=(node, proc.stdout), daemon=True)
            t.start()
            readers.append(t)
        deadline = time.monotonic() + stall_timeout + tick_limit * (latency_ms + 1) / 1000.0 + 60.0
        for t in readers:
            t.join(max(0.0, deadline - time.monotonic()))

        failures: list[str] = []
        trace = Trace()
        clocks: dict[str, int] = {}
        statuses: dict[str, str] = {}
        for node, proc in procs.items():
            line = results[node]
            if not line:
                failures.append(f"node {node} never finished")
                continue
            msg = json.loads(line)
            if msg[0] == "stalled":
                failures.append(f"node {msg[1]} stalled: {msg[2]}")
            elif msg[0] == "error":
                failures.append(f"node {msg[1]} failed: {msg[2]}")
            else:
                report = msg[2]
                clocks.update(report["clocks"])
                statuses.update(report["statuses"])
                with open(trace_paths[node], encoding="utf-8") as fh:
                    part = Trace.loads(fh.read())
                trace.records.extend(part.records)
        for node, proc in procs.items():
            try:
                proc.wait(timeout=5.0)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
                if not failures:
                    failures.append(f"node {node} had to be killed")
        if failures:
            raise SchedulerBug("; ".join(failures))
    return RunResult(trace=trace, clocks=clocks, statuses=statuses, reactions={})


def _cli_node() -> None:
    with open(sys.argv[1], encoding="utf-8") as fh:
        cfg = NodeConfig(**json.load(fh))
    _node_main(cfg, _StdioPipe())


if __name__ == "__main__":
    _cli_node()
