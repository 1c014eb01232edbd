"""Agent protocol behavior: transactions, leases, loss handling, reroute."""

from __future__ import annotations

import pytest

from lightmesh import wire
from lightmesh.harness import Harness, SimConfig
from lightmesh.metrics import detail_fields
from lightmesh.sim import FaultSpec

from conftest import DUAL_ROUTE_TOPO, LINE3_TOPO
from oracles import scan_crash_silence

BYPASS_TOPO = """
switch a ports 6
switch b ports 6
switch c ports 6
switch d ports 6
switch e ports 6
span ab a:1 <-> b:1 cost 1
span bc b:2 <-> c:1 cost 1
span cd c:2 <-> d:1 cost 1
span be b:3 <-> e:1 cost 2
span ec e:2 <-> c:3 cost 2
host h1 attached a:5
host h2 attached d:5
"""


def owned_anywhere(h, path_id):
    return [(sw, xc.in_port, xc.out_port)
            for sw, xc in h.devnet.all_owned_connects()
            if xc.owner_path == path_id]


def records_of(h, kind):
    return [r for r in h.sim.trace if r.kind == kind]


# ----------------------------------------------------------------- happy path


def test_three_switch_commit(line3):
    reply = line3.submit_and_wait("h1", "h2")
    assert reply.status == "committed"
    path = reply.path_id
    assert len(owned_anywhere(line3, path)) == 3
    record = line3.find_record(path)
    assert record.state == "active"
    # active => every hop's cross-connect exists
    for hop in record.route.hops:
        dev = line3.devnet.switches[hop.switch]
        assert any(xc.in_port == hop.in_port and xc.out_port == hop.out_port
                   for xc in dev.connects_for(path))


def test_participant_ack_tags_owner(line3):
    reply = line3.submit_and_wait("h1", "h2")
    for xc in line3.devnet.switches["b"].connects_for(reply.path_id):
        assert xc.owner_path == reply.path_id


def test_request_auth_rejected(line3):
    reply = line3.submit_and_wait("h1", "h2", token="wrong")
    assert reply.status == "rejected" and reply.reason == "auth"
    assert line3.devnet.all_owned_connects() == []


def test_request_unknown_host(line3):
    reply = line3.submit_and_wait("h1", "nobody")
    assert reply.status == "rejected" and reply.reason == "unknown-endpoint"


def test_unreachable_rejected():
    topo = LINE3_TOPO + "switch z ports 4\nhost h3 attached z:1\n"
    h = Harness(topo, SimConfig(seed=2))
    reply = h.submit_and_wait("h1", "h3")
    assert reply.status == "rejected" and reply.reason == "unreachable"


def test_same_initiator_contention_busy(line3):
    sim = line3.sim
    sim.schedule(100, lambda: line3.clients["h1"].request("h2"))
    sim.schedule(100, lambda: line3.clients["h1"].request("h2"))
    sim.run_until(5_000)
    replies = sorted(line3.clients["h1"].replies.values(),
                     key=lambda r: r.req_id)
    assert [r.status for r in replies] == ["committed", "rejected"]
    assert replies[1].reason == "port-busy"


def test_no_agent_rejection(line3):
    line3.sim.inject_fault(FaultSpec("crash_agent", "agent-b", 100))
    line3.sim.run_until(31_000)  # b's service lease expires un-renewed
    assert all(d.node != "agent-b"
               for d in line3.registry.discover("optical-agents"))
    reply = line3.submit_and_wait("h1", "h2")
    assert reply.status == "rejected" and reply.reason == "no-agent"


# ------------------------------------------------------------------- rollback


def test_participant_nack_rolls_back_everything(line3):
    # Pre-occupy b's in-port so the remote transaction nacks.
    line3.devnet.switches["b"].make_cross_connect(1, 3, "blocker/1")
    reply = line3.submit_and_wait("h1", "h2")
    assert reply.status == "rejected"
    assert reply.reason.startswith("nack:port-busy")
    assert owned_anywhere(line3, reply.path_id) == []
    remaining = line3.devnet.all_owned_connects()
    assert [(sw, xc.owner_path) for sw, xc in remaining] == [("b", "blocker/1")]
    for sw in line3.agents.values():
        assert all(owner == "blocker/1" or not owner.startswith("agent-")
                   for owner in sw.locks.values()) or sw.locks == {}


def test_local_xconn_failure_rolls_back(line3):
    line3.devnet.switches["a"].fail_next_xconn = True
    reply = line3.submit_and_wait("h1", "h2")
    assert reply.status == "rejected"
    assert reply.reason == "local:device-failure"
    line3.sim.run_until(line3.sim.now + 100)  # compensating teardowns land
    assert line3.devnet.all_owned_connects() == []


def test_ack_timeout_rolls_back(line3):
    # Partition the initiator from one participant: its ack never arrives.
    line3.sim.inject_fault(FaultSpec("partition", ("agent-a", "agent-c"), 0))
    reply = line3.submit_and_wait("h1", "h2")
    assert reply.status == "rejected"
    assert reply.reason.startswith("timeout:")
    assert owned_anywhere(line3, reply.path_id) == []
    # c committed eagerly but never hears back; its lease self-cleans.
    line3.sim.run_until(line3.sim.now + 3 * line3.cfg.path_lease_ms)
    assert line3.devnet.all_owned_connects() == []


def test_duplicate_xconn_request_reacks_idempotently(line3):
    reply = line3.submit_and_wait("h1", "h2")
    path = reply.path_id
    before = owned_anywhere(line3, path)
    request = [r for r in line3.sim.trace
               if r.kind == "send" and "type=XConnRequest" in r.detail
               and f"path={path} " in r.detail + " "][0]
    hop = line3.find_record(path).route.hop_for("b")
    replay = wire.XConnRequest(path, "agent-a", line3.cfg.path_lease_ms,
                               (tuple(hop),))
    line3.sim.send("agent-a", ("node", "agent-b"), payload=wire.encode(replay),
                   note=replay.summary())
    line3.sim.run_until(line3.sim.now + 100)
    assert owned_anywhere(line3, path) == before
    acks = [r for r in line3.sim.trace
            if r.kind == "send" and r.node == "agent-b"
            and "type=XConnAck" in r.detail and "purpose=setup" in r.detail]
    assert len(acks) == 2
    assert request is not None


# ---------------------------------------------------------------- path leases


def test_healthy_path_persists_indefinitely(line3):
    reply = line3.submit_and_wait("h1", "h2")
    line3.sim.run_until(60_000)  # 12 lease durations
    assert line3.find_record(reply.path_id).state == "active"
    assert len(owned_anywhere(line3, reply.path_id)) == 3
    assert records_of(line3, "path-lease-expired") == []


def test_initiator_crash_reclaims_every_switch(line3):
    reply = line3.submit_and_wait("h1", "h2")
    t0 = line3.sim.now
    line3.sim.inject_fault(FaultSpec("crash_agent", "agent-a", t0 + 100))
    line3.sim.run_until(t0 + 100 + line3.cfg.path_lease_ms + 1_000)
    assert line3.devnet.all_owned_connects() == []
    assert scan_crash_silence(line3.sim.trace) == []


def test_participant_restart_empty_triggers_reroute(line3):
    reply = line3.submit_and_wait("h1", "h2")
    path = reply.path_id
    line3.sim.inject_fault(FaultSpec("crash_agent", "agent-b", 3_000))
    line3.sim.inject_fault(FaultSpec("restart_agent", "agent-b", 3_500))
    line3.sim.run_until(3_600)
    assert owned_anywhere(line3, path) == [("a", 3, 1), ("c", 1, 3)] or \
        line3.devnet.switches["b"].connects_for(path) == []
    line3.sim.run_until(8_000)  # next renewal cycle nacks and reroute repairs
    nacks = [r for r in line3.sim.trace if r.kind == "send"
             and "type=XConnNack" in r.detail and "purpose=renew" in r.detail]
    assert nacks, "restarted participant should nack the renewal"
    assert any("reason=renew-nack:b" in r.detail
               for r in records_of(line3, "reroute-begin"))
    record = line3.find_record(path)
    assert record.state == "active"
    assert len(owned_anywhere(line3, path)) == 3


def test_teardown_with_crashed_participant(line3):
    reply = line3.submit_and_wait("h1", "h2")
    path = reply.path_id
    line3.sim.inject_fault(FaultSpec("crash_agent", "agent-b", 1_000))
    line3.sim.run_until(1_100)
    td = line3.teardown_and_wait(path)
    assert td.status == "torn-down"
    survivors = [(sw, xc) for sw, xc in line3.devnet.all_owned_connects()]
    assert all(sw == "b" for sw, _ in survivors)
    line3.sim.run_until(line3.sim.now + 2 * line3.cfg.path_lease_ms)
    assert line3.devnet.all_owned_connects() == []


def test_teardown_twice_noop(line3):
    reply = line3.submit_and_wait("h1", "h2")
    td1 = line3.teardown_and_wait(reply.path_id)
    assert td1.status == "torn-down" and td1.reason == ""
    td2 = line3.teardown_and_wait(reply.path_id)
    assert td2.status == "torn-down" and td2.reason == "unknown-path"
    assert any(r.kind == "teardown-noop" for r in line3.sim.trace)
    assert line3.devnet.all_owned_connects() == []


def test_teardown_auth_rejected(line3):
    reply = line3.submit_and_wait("h1", "h2")
    td = line3.teardown_and_wait(reply.path_id, token="wrong")
    assert td.status == "rejected" and td.reason == "auth"
    assert line3.find_record(reply.path_id).state == "active"


# -------------------------------------------------------------- loss of light


def test_cut_on_unowned_span_topology_only(dual_route):
    dual_route.submit_and_wait("caltech-disk", "cern-disk")  # via chicago
    dual_route.inject_now("fiber_cut", "us-ny")  # not on the active route
    assert records_of(dual_route, "reroute-begin") == []
    graph = dual_route.agents["geneva"].graph
    assert graph.edges["us-ny.fwd"].state == "cut"


def test_cut_notifies_initiator_and_reroutes(dual_route):
    reply = dual_route.submit_and_wait("caltech-disk", "cern-disk")
    path = reply.path_id
    dual_route.inject_now("fiber_cut", "atl-chi")
    notifies = [r for r in dual_route.sim.trace if r.kind == "send"
                and "type=LossOfLightNotify" in r.detail]
    assert notifies, "remote detector must notify the initiator"
    record = dual_route.find_record(path)
    assert record.state == "active"
    assert "atl-ny.fwd" in record.route.spans
    assert len(records_of(dual_route, "reroute-done")) == 1


def test_duplicate_loss_notifies_single_reroute():
    h = Harness(BYPASS_TOPO, SimConfig(seed=11))
    reply = h.submit_and_wait("h1", "h2")
    assert reply.status == "committed"
    h.inject_now("fiber_cut", "bc")  # both b and c notify initiator a
    notify_delivers = [r for r in h.sim.trace if r.kind == "deliver"
                       and "type=LossOfLightNotify" in r.detail]
    assert len(notify_delivers) >= 1
    assert len(records_of(h, "reroute-begin")) == 1
    record = h.find_record(reply.path_id)
    assert record.state == "active"
    assert set(record.route.spans) >= {"be.fwd", "ec.fwd"}


def test_cut_with_no_alternative_tears_down(line3):
    reply = line3.submit_and_wait("h1", "h2")
    path = reply.path_id
    line3.inject_now("fiber_cut", "ab")
    record = line3.find_record(path)
    assert record.state == "torn_down"
    assert owned_anywhere(line3, path) == []
    agent = line3.agents["a"]
    assert all(owner != path for owner in agent.locks.values())
    assert any("reason=unreachable" in r.detail or "reason=port-dark" in r.detail
               for r in records_of(line3, "reroute-failed"))


def test_four_cut_restore_cycles_keep_path_alive(dual_route):
    reply = dual_route.submit_and_wait("caltech-disk", "cern-disk")
    path = reply.path_id
    spans = ["atl-chi", "atl-ny", "atl-chi", "atl-ny"]
    for i, span in enumerate(spans):
        dual_route.inject_now("fiber_cut", span, settle_ms=1_000)
        assert dual_route.find_record(path).state == "active", f"cycle {i}"
        dual_route.inject_now("fiber_restore", span, settle_ms=1_000)
    assert len(records_of(dual_route, "reroute-done")) == 4
    assert dual_route.find_record(path).path_id == path
    dual_route.run(dual_route.sim.now + 2_000)
    from oracles import flow_verdict_from_trace
    verdict, max_dark = flow_verdict_from_trace(dual_route.sim.trace, f"f-{path}")
    assert verdict == "alive" and max_dark < 2_000


def test_reroute_contention_retries_once_then_tears_down(dual_route):
    reply = dual_route.submit_and_wait("caltech-disk", "cern-disk")
    path = reply.path_id
    # Occupy the only alternative's in-port at newyork, then cut the
    # active route: the reroute nacks, retries once, and gives up.
    dual_route.devnet.switches["newyork"].make_cross_connect(1, 3, "blocker/1")
    dual_route.inject_now("fiber_cut", "atl-chi", settle_ms=3_000)
    assert any("reason" in r.detail for r in records_of(dual_route, "reroute-retry"))
    assert len(records_of(dual_route, "reroute-retry")) == 1
    record = dual_route.find_record(path)
    assert record.state == "torn_down"
    assert any(f"path={path}" in r.detail and "reason=reroute-failed:nack" in r.detail
               for r in records_of(dual_route, "path-torn-down"))
    owned = [(sw, xc.owner_path) for sw, xc in dual_route.devnet.all_owned_connects()]
    assert owned == [("newyork", "blocker/1")]


def test_silent_participant_renewal_timeout_reroute(line3):
    reply = line3.submit_and_wait("h1", "h2")
    path = reply.path_id
    # b crashes and never restarts: the next renewal times out, the reroute
    # can't reach b either, and the path is finally torn down.
    line3.sim.inject_fault(FaultSpec("crash_agent", "agent-b", 3_000))
    line3.sim.run_until(20_000)
    assert any("reason=renew-timeout:b" in r.detail
               for r in records_of(line3, "reroute-begin"))
    assert line3.find_record(path).state == "torn_down"
    line3.sim.run_until(25_000)
    assert line3.devnet.all_owned_connects() == []


def test_restore_announcements_reconverge(dual_route):
    dual_route.inject_now("fiber_cut", "atl-chi")
    dual_route.inject_now("fiber_restore", "atl-chi")
    graphs = [dual_route.agents[sw].graph for sw in sorted(dual_route.agents)]
    for g in graphs:
        assert g.edges["atl-chi.fwd"].state == "lit"
        assert g.edges["atl-chi.rev"].state == "lit"


def test_agent_graphs_converge_after_quiescence(dual_route):
    dual_route.submit_and_wait("caltech-disk", "cern-disk")
    dual_route.inject_now("fiber_cut", "atl-chi", settle_ms=2_000)
    snapshots = []
    for sw in sorted(dual_route.agents):
        g = dual_route.agents[sw].graph
        snapshots.append(tuple((s, g.edges[s].state, g.edges[s].cost)
                               for s in sorted(g.edges)))
    assert len(set(snapshots)) == 1


# ------------------------------------------------------------------ messaging


def test_protocol_payloads_are_frames(line3):
    line3.submit_and_wait("h1", "h2")
    sends = [r for r in line3.sim.trace if r.kind == "send"
             and "type=XConn" in r.detail]
    assert sends
    for rec in sends:
        assert detail_fields(rec.detail)["type"] in (
            "XConnRequest", "XConnAck", "XConnNack")
