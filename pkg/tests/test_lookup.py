"""Registry semantics: leases, discovery, notifications."""

from __future__ import annotations

import pytest

from lightmesh import wire
from lightmesh.lookup import (LookupRegistry, RegistryError,
                              ServiceDescriptor, UnknownLeaseError)
from lightmesh.sim import Simulation


class Subscriber:
    def __init__(self):
        self.events = []

    def on_message(self, env):
        if isinstance(env.payload, (bytes, bytearray)):
            msg = wire.decode(bytes(env.payload))
            if isinstance(msg, wire.RegistryEvent):
                self.events.append(msg)

    def on_timer(self, tag, data):
        pass


def make_registry():
    sim = Simulation(seed=0)
    reg = LookupRegistry(sim)
    return sim, reg


def desc(node="agent-cern", groups=("optical-us-lhc",), kind="agent"):
    return ServiceDescriptor(node, tuple(groups), kind, {"switch": "cern"})


def test_register_lease_arithmetic():
    sim, reg = make_registry()
    lease = reg.register(desc(), 30_000)
    assert lease.expiry == 30_000
    assert lease.live(29_999) and not lease.live(30_000)


def test_register_then_discover():
    sim, reg = make_registry()
    reg.register(desc(), 30_000)
    found = reg.discover("optical-us-lhc")
    assert [d.node for d in found] == ["agent-cern"]
    assert reg.discover("optical-us-lhc", kind="client") == []


def test_reregistration_replaces():
    sim, reg = make_registry()
    first = reg.register(desc(), 30_000)
    second = reg.register(desc(), 30_000)
    assert second.lease_id != first.lease_id
    assert len(reg.discover("optical-us-lhc")) == 1
    with pytest.raises(UnknownLeaseError):
        reg.renew(first.lease_id)


def test_renew_extends_from_now():
    sim, reg = make_registry()
    lease = reg.register(desc(), 30_000)
    sim.run_until(29_999)
    renewed = reg.renew(lease.lease_id)
    assert renewed.expiry == 59_999
    assert renewed.renew_count == 1


def test_renew_after_expiry_rejected():
    sim, reg = make_registry()
    lease = reg.register(desc(), 30_000)
    sim.run_until(30_001)
    # The expiry sweep already removed the registration; either way the
    # renewal is rejected and the holder must re-register.
    with pytest.raises(RegistryError):
        reg.renew(lease.lease_id)
    assert reg.discover("optical-us-lhc") == []


def test_renew_unknown_rejected():
    _, reg = make_registry()
    with pytest.raises(UnknownLeaseError):
        reg.renew(12345)


def test_register_validation():
    _, reg = make_registry()
    with pytest.raises(RegistryError):
        reg.register(desc(), 0)
    with pytest.raises(RegistryError):
        reg.register(ServiceDescriptor("x", (), "agent", {}), 1000)
    with pytest.raises(RegistryError):
        reg.register(ServiceDescriptor("x", ("g",), "blimp", {}), 1000)


def test_expiry_removes_and_notifies_once():
    sim, reg = make_registry()
    subs = [Subscriber(), Subscriber()]
    for i, s in enumerate(subs):
        sim.attach(f"watcher-{i}", ["clients"], s)
        reg.subscribe(f"watcher-{i}", "optical-us-lhc")
    reg.register(desc(), 30_000)
    sim.run_until(25_000)
    assert len(reg.discover("optical-us-lhc")) == 1
    sim.run_until(40_000)
    assert reg.discover("optical-us-lhc") == []
    for s in subs:
        kinds = [e.kind for e in s.events]
        assert kinds == ["registered", "lease_expired"]


def test_subscribe_before_any_provider():
    sim, reg = make_registry()
    s = Subscriber()
    sim.attach("watcher", ["clients"], s)
    reg.subscribe("watcher", "optical-us-lhc")
    reg.register(desc(), 30_000)
    sim.run_until(100)
    assert [e.kind for e in s.events] == ["registered"]


def test_nonmatching_registration_not_notified():
    sim, reg = make_registry()
    s = Subscriber()
    sim.attach("watcher", ["clients"], s)
    reg.subscribe("watcher", "other-group")
    reg.register(desc(), 30_000)
    sim.run_until(100)
    assert s.events == []


def test_renewal_keeps_registration_alive():
    sim, reg = make_registry()
    lease = reg.register(desc(), 10_000)
    for t in (5_000, 10_000, 15_000):
        sim.run_until(t - 1)
        reg.renew(lease.lease_id)
    sim.run_until(18_000)
    assert len(reg.discover("optical-us-lhc")) == 1
    sim.run_until(40_000)
    assert reg.discover("optical-us-lhc") == []
    expiries = [r for r in sim.trace if r.kind == "lease-expired"]
    assert len(expiries) == 1


def test_discover_unknown_group_empty():
    _, reg = make_registry()
    assert reg.discover("nowhere") == []


def test_deregister_notifies():
    sim, reg = make_registry()
    s = Subscriber()
    sim.attach("watcher", ["clients"], s)
    reg.subscribe("watcher", "*")
    reg.register(desc(), 30_000)
    reg.deregister("agent-cern")
    reg.deregister("agent-cern")  # second is a silent no-op
    sim.run_until(100)
    assert [e.kind for e in s.events] == ["registered", "deregistered"]
    assert reg.discover("optical-us-lhc") == []


def test_registry_state_reconstructible_from_trace():
    """Replaying register/renew/expiry records rebuilds the live set."""
    sim, reg = make_registry()
    a = reg.register(desc("agent-a", ("g",)), 20_000)
    reg.register(desc("agent-b", ("g",)), 5_000)
    sim.run_until(12_000)
    reg.renew(a.lease_id)
    sim.run_until(60_000)

    live: dict[str, int] = {}
    for rec in sim.trace:
        if rec.kind == "register":
            live[rec.node] = 1
        elif rec.kind == "lease-expired":
            live.pop(rec.node, None)
    assert sorted(live) == [d.node for d in reg.discover("g")]
