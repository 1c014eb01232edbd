"""Deterministic discrete-event scheduler and group-message fabric.

Simulated time is integer milliseconds.  Every run is a pure function of
(attached nodes, scheduled work, seed): events fire in (time, insertion
order), all randomness comes from one seeded generator owned by the
scheduler, and everything observable lands in a line-oriented trace.
"""

from __future__ import annotations

import heapq
import random
import time as _wallclock
from dataclasses import dataclass
from typing import Any, Callable, NamedTuple

DEFAULT_LATENCY_MS = 10

FAULT_KINDS = (
    "fiber_cut",
    "fiber_restore",
    "drop_message",
    "partition",
    "heal_partition",
    "crash_agent",
    "restart_agent",
)


class SimError(Exception):
    """Rejected fabric operation (bad attach, bad fault target, ...)."""


class TraceRecord(NamedTuple):
    time: int
    kind: str
    node: str
    detail: str

    def line(self) -> str:
        return f"{self.time}\t{self.kind}\t{self.node}\t{self.detail}"


def parse_trace_line(line: str) -> TraceRecord:
    t, kind, node, detail = line.rstrip("\n").split("\t", 3)
    return TraceRecord(int(t), kind, node, detail)


@dataclass(frozen=True)
class Envelope:
    msg_id: int
    src: str
    dest: tuple  # ("node", name) | ("group", group) | ("multi", group, (members...))
    group: str
    payload: Any
    sent_at: int


@dataclass(frozen=True)
class FaultSpec:
    kind: str
    target: Any  # span id | node id | (node, node) pair | None
    at: int
    rate: float | None = None  # drop_message probability


@dataclass
class _Node:
    name: str
    groups: list[str]
    handler: Any
    crashed: bool = False


@dataclass
class _Event:
    time: int
    seq: int
    action: Callable[[], None]
    housekeeping: bool = False

    def __lt__(self, other: "_Event") -> bool:
        return (self.time, self.seq) < (other.time, other.seq)


class Simulation:
    """Single-loop scheduler plus the message fabric connecting all nodes."""

    def __init__(self, seed: int = 0, default_latency_ms: int = DEFAULT_LATENCY_MS):
        self.seed = seed
        self.rng = random.Random(seed)
        self.now = 0
        self.default_latency_ms = default_latency_ms
        self.trace: list[TraceRecord] = []
        self.devnet: Any = None  # set by the device layer when present
        self.hooks: dict[str, list[Callable]] = {}
        self._heap: list[_Event] = []
        self._seq = 0
        self._msg_seq = 0
        self._nodes: dict[str, _Node] = {}
        self._groups: dict[str, list[str]] = {}
        self._latency: dict[tuple[str, str], int] = {}
        self._partitions: set[frozenset] = set()
        self._drop_rules: dict[str | None, float] = {}

    # ------------------------------------------------------------------ trace

    def log(self, kind: str, node: str, detail: str) -> TraceRecord:
        rec = TraceRecord(self.now, kind, node, detail)
        self.trace.append(rec)
        return rec

    def trace_lines(self) -> str:
        return "".join(rec.line() + "\n" for rec in self.trace)

    def write_trace(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.trace_lines())

    def fire_hook(self, name: str, *args) -> None:
        for cb in self.hooks.get(name, ()):
            cb(*args)

    def add_hook(self, name: str, cb: Callable) -> None:
        self.hooks.setdefault(name, []).append(cb)

    # ------------------------------------------------------------- membership

    def attach(self, name: str, groups: list[str], handler: Any = None) -> None:
        if name in self._nodes:
            raise SimError(f"node {name!r} already attached")
        if not groups:
            raise SimError(f"node {name!r} must join at least one group")
        self._nodes[name] = _Node(name, list(groups), handler)
        self.log("attach", name, f"groups={','.join(groups)}")
        for group in groups:
            members = self._groups.setdefault(group, [])
            peers = sorted(m for m in members if m != name)
            members.append(name)
            if peers:
                self.send(name, ("multi", group, tuple(peers)),
                          payload=None, note=f"type=GroupJoin group={group}")

    def node_exists(self, name: str) -> bool:
        return name in self._nodes

    def is_crashed(self, name: str) -> bool:
        node = self._nodes.get(name)
        return node is not None and node.crashed

    def group_members(self, group: str) -> list[str]:
        return list(self._groups.get(group, ()))

    def set_latency(self, src: str, dst: str, ms: int) -> None:
        self._latency[(src, dst)] = ms

    def latency(self, src: str, dst: str) -> int:
        return self._latency.get((src, dst), self.default_latency_ms)

    # ------------------------------------------------------------- scheduling

    def schedule(self, at: int, action: Callable[[], None], *,
                 housekeeping: bool = False) -> None:
        if at < self.now:
            raise SimError(f"cannot schedule at {at} before now={self.now}")
        self._seq += 1
        heapq.heappush(self._heap, _Event(at, self._seq, action, housekeeping))

    def schedule_timer(self, node: str, at: int, tag: str, data: Any = None) -> None:
        """Node-owned timer; silently suppressed if the node is crashed at fire time."""

        def fire() -> None:
            rec = self._nodes.get(node)
            if rec is None or rec.crashed or rec.handler is None:
                return
            rec.handler.on_timer(tag, data)

        self.schedule(at, fire, housekeeping=True)

    def run_until(self, t: int) -> list[TraceRecord]:
        if t < self.now:
            raise SimError(f"cannot run backwards to {t} (now={self.now})")
        mark = len(self.trace)
        while self._heap and self._heap[0].time <= t:
            ev = heapq.heappop(self._heap)
            self.now = ev.time
            ev.action()
        self.now = t
        return self.trace[mark:]

    def run_while(self, cond: Callable[[], bool], cap: int) -> None:
        """Process events in order while cond() holds and fire times stay <= cap."""
        while cond() and self._heap and self._heap[0].time <= cap:
            ev = heapq.heappop(self._heap)
            self.now = ev.time
            ev.action()

    def pending_before(self, t: int, *, include_housekeeping: bool = True) -> bool:
        for ev in self._heap:
            if ev.time <= t and (include_housekeeping or not ev.housekeeping):
                return True
        return False

    # -------------------------------------------------------------- messaging

    def send(self, src: str, dest: tuple, payload: Any, note: str = "") -> int:
        sender = self._nodes.get(src)
        if sender is None:
            raise SimError(f"unknown sender {src!r}")
        if sender.crashed:
            raise SimError(f"crashed node {src!r} cannot send")
        self._msg_seq += 1
        msg_id = self._msg_seq
        group = dest[1] if dest[0] in ("group", "multi") else ""
        env = Envelope(msg_id, src, dest, group, payload, self.now)

        if dest[0] == "node":
            recipients = [dest[1]]
        elif dest[0] == "group":
            recipients = sorted(m for m in self._groups.get(dest[1], ()) if m != src)
        elif dest[0] == "multi":
            recipients = sorted(dest[2])
        else:
            raise SimError(f"bad destination {dest!r}")

        self.log("send", src,
                 f"msg={msg_id} dest={_dest_str(dest)} nrecip={len(recipients)} {note}".rstrip())
        for r in recipients:
            at = self.now + self.latency(src, r)
            self.schedule(at, lambda r=r: self._deliver(env, r, note))
        return msg_id

    def _deliver(self, env: Envelope, recipient: str, note: str) -> None:
        node = self._nodes.get(recipient)
        tag = f"msg={env.msg_id} src={env.src} {note}".rstrip()
        if node is None:
            self.log("undeliverable", recipient, tag)
            return
        if node.crashed:
            self.log("drop", recipient, f"{tag} reason=crashed")
            return
        # Group membership is re-validated when the message arrives, not when
        # it was sent.
        if env.group and env.group not in node.groups:
            self.log("undeliverable", recipient, f"{tag} reason=left-group")
            return
        if frozenset((env.src, recipient)) in self._partitions:
            self.log("drop", recipient, f"{tag} reason=partition")
            return
        rate = self._drop_rules.get(None, 0.0)
        for target in (env.src, recipient):
            rate = max(rate, self._drop_rules.get(target, 0.0))
        if rate > 0.0 and self.rng.random() < rate:
            self.log("drop", recipient, f"{tag} reason=random")
            return
        self.log("deliver", recipient, tag)
        if node.handler is not None:
            node.handler.on_message(env)

    # ------------------------------------------------------------------ fault

    def inject_fault(self, fault: FaultSpec) -> None:
        if fault.kind not in FAULT_KINDS:
            raise SimError(f"unknown fault kind {fault.kind!r}")
        if fault.at < self.now:
            raise SimError(f"fault time {fault.at} is in the past (now={self.now})")
        self._validate_fault_target(fault)
        self.log("fault-armed", _fault_node(fault), f"kind={fault.kind} at={fault.at}")
        self.schedule(fault.at, lambda: self._fire_fault(fault))

    def _validate_fault_target(self, fault: FaultSpec) -> None:
        kind = fault.kind
        if kind in ("fiber_cut", "fiber_restore"):
            if self.devnet is None or not self.devnet.knows_span(fault.target):
                raise SimError(f"unknown span {fault.target!r}")
        elif kind in ("crash_agent", "restart_agent"):
            if fault.target not in self._nodes:
                raise SimError(f"unknown node {fault.target!r}")
        elif kind in ("partition", "heal_partition"):
            a, b = fault.target
            for n in (a, b):
                if n not in self._nodes:
                    raise SimError(f"unknown node {n!r}")
        elif kind == "drop_message":
            if fault.rate is None or not 0.0 <= fault.rate <= 1.0:
                raise SimError(f"drop_message needs a rate in [0,1], got {fault.rate!r}")
            if fault.target is not None and fault.target not in self._nodes:
                raise SimError(f"unknown node {fault.target!r}")

    def _fire_fault(self, fault: FaultSpec) -> None:
        kind = fault.kind
        if kind in ("fiber_cut", "fiber_restore"):
            state = "cut" if kind == "fiber_cut" else "lit"
            self.devnet.set_span_state(fault.target, state)
        elif kind == "crash_agent":
            node = self._nodes[fault.target]
            if not node.crashed:
                node.crashed = True
                self.log("crash", fault.target, "")
        elif kind == "restart_agent":
            node = self._nodes[fault.target]
            if node.crashed:
                node.crashed = False
                self.log("restart", fault.target, "")
                if node.handler is not None and hasattr(node.handler, "on_restart"):
                    node.handler.on_restart()
        elif kind == "partition":
            self._partitions.add(frozenset(fault.target))
            a, b = sorted(fault.target)
            self.log("partition", a, f"peer={b}")
        elif kind == "heal_partition":
            key = frozenset(fault.target)
            a, b = sorted(fault.target)
            if key in self._partitions:
                self._partitions.discard(key)
                self.log("partition-heal", a, f"peer={b}")
            else:
                self.log("partition-noop", a, f"peer={b}")
        elif kind == "drop_message":
            if fault.rate == 0.0:
                self._drop_rules.pop(fault.target, None)
            else:
                self._drop_rules[fault.target] = fault.rate
            scope = fault.target if fault.target is not None else "*"
            self.log("drop-rule", "fabric", f"scope={scope} rate={fault.rate:g}")


def _dest_str(dest: tuple) -> str:
    if dest[0] == "node":
        return dest[1]
    if dest[0] == "group":
        return f"group:{dest[1]}"
    return f"multi:{dest[1]}:{'+'.join(dest[2])}"


def _fault_node(fault: FaultSpec) -> str:
    if fault.kind in ("partition", "heal_partition"):
        return "+".join(sorted(fault.target))
    if fault.target is None:
        return "fabric"
    return str(fault.target)


class _Sink:
    def on_message(self, env: Envelope) -> None:
        pass

    def on_timer(self, tag: str, data: Any) -> None:
        pass


def throughput_probe(n: int, seed: int = 0) -> float:
    """Measure the fabric's wall-clock routing rate over n unicast messages."""
    if n < 1000:
        raise SimError("throughput probe needs n >= 1000")
    sim = Simulation(seed=seed)
    sim.attach("probe-a", ["probe"], _Sink())
    sim.attach("probe-b", ["probe"], _Sink())
    start = _wallclock.perf_counter()
    for i in range(n):
        sim.send("probe-a", ("node", "probe-b"), payload=i, note="type=Probe")
    sim.run_until(sim.now + sim.default_latency_ms)
    elapsed = _wallclock.perf_counter() - start
    return n / elapsed
