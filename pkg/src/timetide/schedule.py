"""Scheduling policies for the centralised interpreter.

A policy picks which enabled thread reacts next. Any choice must yield
the same per-thread traces, which is exactly what the determinism checks
exercise by sweeping many policies over one program.
"""

from __future__ import annotations

import random
from typing import Optional, Protocol, Sequence


class Schedule(Protocol):
    def pick(self, enabled: Sequence[str]) -> str: ...

    def describe(self) -> str: ...


class RoundRobin:
    """Cycle through thread names, skipping ones that are not enabled."""

    def __init__(self) -> None:
        self._order: list[str] = []
        self._next = 0

    def pick(self, enabled: Sequence[str]) -> str:
        for name in enabled:
            if name not in self._order:
                self._order.append(name)
        n = len(self._order)
        for off in range(n):
            cand = self._order[(self._next + off) % n]
            if cand in enabled:
                self._next = (self._order.index(cand) + 1) % n
                return cand
        return enabled[0]

    def describe(self) -> str:
        return "round-robin"


class Seeded:
    """Uniform random choice from a seeded generator."""

    def __init__(self, seed: int) -> None:
        self.seed = seed
        self._rng = random.Random(seed)

    def pick(self, enabled: Sequence[str]) -> str:
        return self._rng.choice(list(enabled))

    def describe(self) -> str:
        return f"seeded({self.seed})"


class Greedy:
    """Keep reacting the same thread for as long as it stays enabled.

    Favouring one thread drains or starves channels as hard as a legal
    schedule can, which makes it a good adversarial probe.
    """

    def __init__(self, favourite: Optional[str] = None, from_end: bool = False) -> None:
        self.favourite = favourite
        self.from_end = from_end
        self._current: Optional[str] = None

    def pick(self, enabled: Sequence[str]) -> str:
        if self.favourite is not None and self.favourite in enabled:
            return self.favourite
        if self._current in enabled:
            return self._current  # type: ignore[return-value]
        self._current = enabled[-1] if self.from_end else enabled[0]
        return self._current

    def describe(self) -> str:
        if self.favourite is not None:
            return f"greedy({self.favourite})"
        return "greedy-last" if self.from_end else "greedy"


class Replay:
    """Follow a recorded pick sequence, then fall back to first-enabled.

    Used to re-execute a counterexample found by the safety search.
    """

    def __init__(self, picks: Sequence[str]) -> None:
        self.picks = list(picks)
        self._at = 0

    def pick(self, enabled: Sequence[str]) -> str:
        if self._at < len(self.picks):
            want = self.picks[self._at]
            self._at += 1
            if want in enabled:
                return want
        return enabled[0]

    def describe(self) -> str:
        return f"replay({len(self.picks)} picks)"


def standard_sweep(count: int = 100) -> list[Schedule]:
    """The policy set used by determinism checks: one round robin, two
    greedy probes, and seeded-random for the rest."""
    out: list[Schedule] = [RoundRobin(), Greedy(), Greedy(from_end=True)]
    seed = 0
    while len(out) < count:
        out.append(Seeded(seed))
        seed += 1
    return out[:count]
