"""Runtime checks of the channel laws.

Two invariants tie a channel's two ends together. The frame a reader pops
at its local tick n is exactly the frame the writer pushed at tick n -
delta (the first delta pops yield the declared initial token). And while
both ends are live, the buffered frame count equals delta plus the clock
gap between writer and reader. Staggered-replica channels are skipped:
their merged streams have no single writer clock to compare against.
"""

from __future__ import annotations

from typing import Optional

from .central import OPEN, CentralRun
from .kernel import KernelProgram
from .values import EMPTY, Value


def _same_value(a: Value, b: Value) -> bool:
    if a is EMPTY or b is EMPTY:
        return a is b
    if isinstance(a, bool) != isinstance(b, bool):
        return False
    return a == b


class DelayLawMonitor:
    """Checks pop(n) == push(n - delta) on every single-writer channel.

    Wire the bound methods in as push and pop hooks on a central run.
    """

    def __init__(self, program: KernelProgram) -> None:
        self.specs = program.channels
        self.pushed: dict[str, list[Value]] = {}
        self.violations: list[str] = []

    def _tracked(self, chan: str) -> bool:
        spec = self.specs.get(chan)
        return spec is not None and spec.mux is None and len(spec.writers) <= 1

    def on_push(self, chan: str, writer: str, slot: int, value: Value) -> None:
        if not self._tracked(chan):
            return
        log = self.pushed.setdefault(chan, [])
        if slot != len(log):
            self.violations.append(
                f"{chan}: writer {writer} pushed slot {slot}, expected {len(log)}"
            )
        log.append(value)

    def on_pop(self, chan: str, reader: str, slot: int, value: Value) -> None:
        if not self._tracked(chan):
            return
        spec = self.specs[chan]
        if slot < spec.delta:
            expect = spec.init
        else:
            log = self.pushed.get(chan, [])
            at = slot - spec.delta
            expect = log[at] if at < len(log) else EMPTY  # writer quit: reads drain to empty
        if not _same_value(value, expect):
            self.violations.append(
                f"{chan}: reader {reader} popped {value!r} at slot {slot}, "
                f"expected {expect!r}"
            )

    def report(self) -> Optional[str]:
        return "\n".join(self.violations) if self.violations else None


class OccupancyMonitor:
    """Checks buffered = delta + writer clock - reader clock between
    reactions, for every live single-writer stream.

    Wire `__call__` in as a quiescence hook.
    """

    def __init__(self) -> None:
        self.violations: list[str] = []
        self.samples = 0

    def __call__(self, run: CentralRun) -> None:
        for (chan, reader), port in run.reader_ports.items():
            spec = port.spec
            if spec.mux is not None or len(port.streams) > 1:
                continue
            for writer, stream in port.streams.items():
                if stream.state != OPEN:
                    continue
                if writer not in run.runners:
                    continue  # unwritten channel with a synthetic silent stream
                want = spec.delta + run.clock(writer) - run.clock(reader)
                got = len(stream.frames)
                self.samples += 1
                if got != want:
                    self.violations.append(
                        f"{chan}: {got} frames buffered for {reader}, law says "
                        f"{spec.delta} + {run.clock(writer)} - {run.clock(reader)}"
                    )

    def report(self) -> Optional[str]:
        return "\n".join(self.violations) if self.violations else None


def monitored_hooks(program: KernelProgram) -> tuple[DelayLawMonitor, OccupancyMonitor, dict]:
    """Convenience bundle: returns both monitors plus keyword arguments to
    splice into run_centralised."""
    delay = DelayLawMonitor(program)
    occ = OccupancyMonitor()
    kwargs = {
        "push_hooks": (delay.on_push,),
        "pop_hooks": (delay.on_pop,),
        "quiescence_hooks": (occ,),
    }
    return delay, occ, kwargs
