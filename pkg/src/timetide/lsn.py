"""Node topologies and thread placement.

A deployment names a set of nodes, directed links with a fixed logical
latency per link, and a thread-to-node mapping. A channel can span nodes
as long as its delay covers the latency of the route its frames take:
each link on the route eats its latency out of the channel's delay
budget, and whatever is left pre-loads the final hop. A channel whose
delay is smaller than the route latency cannot be deployed; the check
reports the shortfall.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .diagnostics import ValidationError
from .kernel import KernelProgram


@dataclass(frozen=True)
class Topology:
    nodes: tuple[str, ...]
    lam: Mapping[tuple[str, str], int]  # directed link latencies

    def __post_init__(self) -> None:
        for (a, b), w in self.lam.items():
            if a not in self.nodes or b not in self.nodes:
                raise ValidationError(f"link {a}->{b} names an unknown node")
            if a == b:
                raise ValidationError(f"link {a}->{b} is a self-loop")
            if w < 0:
                raise ValidationError(f"link {a}->{b} has negative latency {w}")

    def route(self, src: str, dst: str) -> Optional[list[str]]:
        """Cheapest node path src..dst by total latency, None if unreachable."""
        if src == dst:
            return [src]
        dist: dict[str, int] = {src: 0}
        prev: dict[str, str] = {}
        heap: list[tuple[int, str]] = [(0, src)]
        while heap:
            d, at = heapq.heappop(heap)
            if at == dst:
                break
            if d > dist.get(at, 1 << 60):
                continue
            for (a, b), w in self.lam.items():
                if a != at:
                    continue
                nd = d + w
                if nd < dist.get(b, 1 << 60):
                    dist[b] = nd
                    prev[b] = a
                    heapq.heappush(heap, (nd, b))
        if dst not in dist:
            return None
        path = [dst]
        while path[-1] != src:
            path.append(prev[path[-1]])
        path.reverse()
        return path

    def latency(self, path: list[str]) -> int:
        return sum(self.lam[(a, b)] for a, b in zip(path, path[1:]))


def load_topology(text: str) -> Topology:
    obj = json.loads(text)
    nodes = tuple(obj["nodes"])
    lam = {
        (e["from"], e["to"]): int(e["lambda"])
        for e in obj.get("edges", ())
    }
    return Topology(nodes, lam)


def dump_topology(topo: Topology) -> str:
    return json.dumps(
        {
            "nodes": list(topo.nodes),
            "edges": [
                {"from": a, "to": b, "lambda": w}
                for (a, b), w in sorted(topo.lam.items())
            ],
        },
        indent=2,
    )


def load_mapping(text: str) -> dict[str, str]:
    obj = json.loads(text)
    if not isinstance(obj, dict):
        raise ValidationError("mapping must be an object of thread -> node")
    return {str(k): str(v) for k, v in obj.items()}


@dataclass(frozen=True)
class Leg:
    """One hop of a stream's route with its share of the delay budget."""

    src: str
    dst: str
    prefill: int


@dataclass(frozen=True)
class StreamPlan:
    chan: str
    writer: str
    reader: str
    legs: tuple[Leg, ...]  # empty when writer and reader share a node

    @property
    def local(self) -> bool:
        return not self.legs


@dataclass
class Deployment:
    topology: Topology
    mapping: dict[str, str]
    plans: list[StreamPlan] = field(default_factory=list)

    def node_of(self, thread: str) -> str:
        return self.mapping[thread]

    def transits(self, node: str) -> list[tuple[StreamPlan, int]]:
        """Streams this node forwards: (plan, index of the incoming leg)."""
        out = []
        for plan in self.plans:
            for i, leg in enumerate(plan.legs[:-1]):
                if leg.dst == node:
                    out.append((plan, i))
        return out


def check_mapping(
    program: KernelProgram, topo: Topology, mapping: Mapping[str, str]
) -> list[str]:
    """All the reasons this placement cannot work; empty when it can."""
    problems: list[str] = []
    for thread in program.threads:
        node = mapping.get(thread)
        if node is None:
            problems.append(f"thread {thread!r} is not mapped to a node")
        elif node not in topo.nodes:
            problems.append(f"thread {thread!r} is mapped to unknown node {node!r}")
    extra = set(mapping) - set(program.threads) - {"stimulus"}
    for thread in sorted(extra):
        problems.append(f"mapping names unknown thread {thread!r}")
    if problems:
        return problems
    for spec in program.channels.values():
        for writer in spec.writers:
            wnode = mapping[writer]
            for reader in spec.readers:
                rnode = mapping[reader]
                if wnode == rnode:
                    continue
                path = topo.route(wnode, rnode)
                if path is None:
                    problems.append(
                        f"channel {spec.name!r}: no route from {wnode} to {rnode}"
                    )
                    continue
                lat = topo.latency(path)
                if lat > spec.delta:
                    problems.append(
                        f"channel {spec.name!r}: delay {spec.delta} is short of "
                        f"the {wnode}->{rnode} route latency {lat} by "
                        f"{lat - spec.delta}"
                    )
    return problems


def plan_deployment(
    program: KernelProgram, topo: Topology, mapping: Mapping[str, str]
) -> Deployment:
    problems = check_mapping(program, topo, mapping)
    if problems:
        raise ValidationError("\n".join(problems))
    dep = Deployment(topo, dict(mapping))
    for spec in program.channels.values():
        for writer in spec.writers:
            wnode = mapping[writer]
            for reader in spec.readers:
                rnode = mapping[reader]
                if wnode == rnode:
                    dep.plans.append(StreamPlan(spec.name, writer, reader, ()))
                    continue
                path = topo.route(wnode, rnode)
                assert path is not None
                legs = []
                budget = spec.delta
                hops = list(zip(path, path[1:]))
                for i, (a, b) in enumerate(hops):
                    if i < len(hops) - 1:
                        share = topo.lam[(a, b)]
                    else:
                        share = budget  # the last hop holds whatever remains
                    budget -= share
                    legs.append(Leg(a, b, share))
                dep.plans.append(StreamPlan(spec.name, writer, reader, tuple(legs)))
    return dep
