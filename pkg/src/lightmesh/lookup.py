"""Lease-based service registration, discovery, and event notification.

A single registry instance lives on the fabric as node "lookup".  Callers
invoke it directly from scheduler-handler context; notifications to
subscribers travel the fabric as ordinary messages, so crashed or
partitioned subscribers miss them like any other delivery.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .sim import Simulation
from . import wire

REGISTRY_NODE = "lookup"
DEFAULT_SERVICE_LEASE_MS = 30_000

SERVICE_KINDS = ("agent", "device-monitor", "client")


class RegistryError(Exception):
    pass


class UnknownLeaseError(RegistryError):
    pass


class LeaseExpiredError(RegistryError):
    pass


@dataclass(frozen=True)
class ServiceDescriptor:
    node: str
    groups: tuple[str, ...]
    kind: str
    attributes: dict[str, str] = field(default_factory=dict)


@dataclass
class Lease:
    """Time-bounded grant; live iff now < expiry.  Shared by service
    registrations and lightpaths."""

    lease_id: int
    holder: str
    subject: str
    granted_at: int
    duration: int
    expiry: int = 0
    renew_count: int = 0

    def __post_init__(self) -> None:
        if not self.expiry:
            self.expiry = self.granted_at + self.duration

    def live(self, now: int) -> bool:
        return now < self.expiry


class LookupRegistry:
    def __init__(self, sim: Simulation):
        self.sim = sim
        self._regs: dict[str, tuple[ServiceDescriptor, Lease]] = {}
        self._leases: dict[int, str] = {}  # lease_id -> node
        self._subs: dict[int, tuple[str, str]] = {}  # sub_id -> (subscriber, group filter)
        self._lease_seq = 0
        self._sub_seq = 0
        sim.attach(REGISTRY_NODE, ["registry"], handler=self)

    def on_message(self, env) -> None:
        pass

    def on_timer(self, tag, data) -> None:
        pass

    # ------------------------------------------------------------- operations

    def register(self, desc: ServiceDescriptor, duration: int) -> Lease:
        if duration <= 0:
            raise RegistryError("lease duration must be positive")
        if not desc.groups:
            raise RegistryError("descriptor must name at least one group")
        if desc.kind not in SERVICE_KINDS:
            raise RegistryError(f"unknown service kind {desc.kind!r}")
        replaced = desc.node in self._regs
        if replaced:
            _, old = self._regs.pop(desc.node)
            self._leases.pop(old.lease_id, None)
        self._lease_seq += 1
        lease = Lease(self._lease_seq, desc.node, f"svc:{desc.node}",
                      self.sim.now, duration)
        self._regs[desc.node] = (desc, lease)
        self._leases[lease.lease_id] = desc.node
        self.sim.log("register", desc.node,
                     f"lease={lease.lease_id} groups={','.join(desc.groups)} "
                     f"kind={desc.kind} expiry={lease.expiry} replaced={int(replaced)}")
        self._schedule_sweep(desc.node, lease)
        self._notify("registered", desc)
        return lease

    def renew(self, lease_id: int) -> Lease:
        node = self._leases.get(lease_id)
        if node is None:
            raise UnknownLeaseError(f"unknown lease {lease_id}")
        desc, lease = self._regs[node]
        if not lease.live(self.sim.now):
            raise LeaseExpiredError(f"lease {lease_id} expired at {lease.expiry}")
        lease.expiry = self.sim.now + lease.duration
        lease.renew_count += 1
        self.sim.log("renew-lease", node,
                     f"lease={lease_id} expiry={lease.expiry} count={lease.renew_count}")
        self._schedule_sweep(node, lease)
        return lease

    def discover(self, group: str, kind: str | None = None) -> list[ServiceDescriptor]:
        now = self.sim.now
        out = []
        for node in sorted(self._regs):
            desc, lease = self._regs[node]
            if group in desc.groups and lease.live(now) and (kind is None or desc.kind == kind):
                out.append(desc)
        return out

    def subscribe(self, subscriber: str, group_filter: str) -> int:
        if not self.sim.node_exists(subscriber):
            raise RegistryError(f"subscriber {subscriber!r} not attached")
        self._sub_seq += 1
        self._subs[self._sub_seq] = (subscriber, group_filter)
        self.sim.log("subscribe", subscriber, f"sub={self._sub_seq} filter={group_filter}")
        return self._sub_seq

    def deregister(self, node: str) -> None:
        if node not in self._regs:
            return
        desc, lease = self._regs.pop(node)
        self._leases.pop(lease.lease_id, None)
        self.sim.log("deregister", node, f"lease={lease.lease_id}")
        self._notify("deregistered", desc)

    # --------------------------------------------------------------- internal

    def _schedule_sweep(self, node: str, lease: Lease) -> None:
        expected = lease.expiry

        def sweep() -> None:
            entry = self._regs.get(node)
            if entry is None:
                return
            desc, cur = entry
            # A renewal moved the expiry and armed a fresh sweep.
            if cur.lease_id != lease.lease_id or cur.expiry != expected:
                return
            if cur.live(self.sim.now):
                return
            self._regs.pop(node)
            self._leases.pop(cur.lease_id, None)
            self.sim.log("lease-expired", node, f"lease={cur.lease_id}")
            self._notify("lease_expired", desc)

        self.sim.schedule(expected, sweep, housekeeping=True)

    def _notify(self, kind: str, desc: ServiceDescriptor) -> None:
        msg = wire.RegistryEvent(kind, desc.node, desc.groups, desc.kind)
        for sub_id in sorted(self._subs):
            subscriber, flt = self._subs[sub_id]
            if flt == "*" or flt in desc.groups:
                self.sim.send(REGISTRY_NODE, ("node", subscriber),
                              payload=wire.encode(msg), note=msg.summary())
