"""Provisioning agent: one per optical switch.

Owns a private topology view, serves lightpath requests with a
commit-with-compensation transaction (participants commit eagerly on ack;
the initiator compensates with teardowns on rollback, and per-switch path
leases reclaim whatever compensation cannot reach), floods link-state
updates on fiber events, and reroutes damaged paths under the same
path id.

Only the lock-acquire step of the pre-commit phase serializes anything,
and it serializes on ports alone: requests touching disjoint ports never
wait on each other (there is no waiting at all - conflicts nack).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import wire
from .device import DeviceNetwork, XConnError
from .lookup import Lease, LookupRegistry, RegistryError, ServiceDescriptor
from .sim import Envelope, Simulation
from .topology import (Endpoint, Hop, Route, RouteError, ShortestPathTree,
                       TopoGraph, LinkStateUpdate, compute_spt, extract_route)

DEFAULT_PATH_LEASE_MS = 5_000
DEFAULT_ACK_DEADLINE_MS = 1_000
DEFAULT_TOKEN = "lightmesh-dev-token"


@dataclass
class AgentConfig:
    group: str = "optical-agents"
    token: str = DEFAULT_TOKEN
    service_lease_ms: int = 30_000
    path_lease_ms: int = DEFAULT_PATH_LEASE_MS
    ack_deadline_ms: int = DEFAULT_ACK_DEADLINE_MS


@dataclass
class LightpathRequest:
    req_id: str
    src: Endpoint
    dst: Endpoint
    token: str
    submitted_at: int


@dataclass
class Transaction:
    txn_id: str
    path_id: str
    kind: str  # setup | reroute
    phase: str  # pre_commit | committed | rolled_back
    route: Route
    held_ports: frozenset
    participants: tuple  # remote switch names
    acks: dict  # switch -> pending | ack | nack
    started_at: int
    attempt: int = 1
    stale_hops: dict = field(default_factory=dict)  # switch -> (Hop, ...)
    reply_to: tuple | None = None  # (client node, req_id)
    req_id: str = ""


@dataclass
class LightpathRecord:
    path_id: str
    initiator: str
    route: Route
    lease: Lease
    state: str  # active | rerouting | torn_down
    src: Endpoint
    dst: Endpoint
    agent_map: dict  # switch -> agent node id
    flow: str | None = None


class Agent:
    def __init__(self, sim: Simulation, registry: LookupRegistry,
                 devnet: DeviceNetwork, switch: str, graph: TopoGraph,
                 cfg: AgentConfig, graph_factory=None):
        self.sim = sim
        self.registry = registry
        self.devnet = devnet
        self.switch = switch
        self.node_id = f"agent-{switch}"
        self.graph = graph
        self.cfg = cfg
        self._graph_factory = graph_factory
        self._reset_state()

    def _reset_state(self) -> None:
        self.locks: dict[tuple[str, int], str] = {}
        self.txns: dict[str, Transaction] = {}
        self.txn_by_path: dict[str, Transaction] = {}
        self.paths: dict[str, LightpathRecord] = {}
        self._path_seq = 0
        self._txn_seq = 0
        self._lease_seq = 0
        self._renew_pending: dict[str, dict] = {}
        self._renew_cycle = 0
        # Link-state sequence numbers restart above anything issued before a
        # crash, otherwise peers would discard post-restart announcements.
        self._ls_seq = self.sim.now * 1000
        self.svc_lease: Lease | None = None

    # ----------------------------------------------------------------- wiring

    def start(self) -> None:
        self._register_service()

    def on_restart(self) -> None:
        """Come back empty: wipe control state and the local switch."""
        dev = self.devnet.switches[self.switch]
        owners = sorted({xc.owner_path for xc in dev.xconns.values() if xc.owner_path})
        for path_id in owners:
            dev.tear_path(path_id)
        for path_id in sorted(dev.path_leases):
            dev.cancel_path_lease(path_id)
        if self._graph_factory is not None:
            self.graph = self._graph_factory()
        self._reset_state()
        self._register_service()

    def _register_service(self) -> None:
        desc = ServiceDescriptor(self.node_id, (self.cfg.group,), "agent",
                                 {"switch": self.switch})
        self.svc_lease = self.registry.register(desc, self.cfg.service_lease_ms)
        self.sim.schedule_timer(self.node_id,
                                self.sim.now + self.cfg.service_lease_ms // 2,
                                "svc-renew")

    def on_timer(self, tag: str, data=None) -> None:
        if tag == "svc-renew":
            try:
                self.registry.renew(self.svc_lease.lease_id)
            except RegistryError:
                self._register_service()
                return
            self.sim.schedule_timer(self.node_id,
                                    self.sim.now + self.cfg.service_lease_ms // 2,
                                    "svc-renew")
        elif tag == "ack-deadline":
            self._on_ack_deadline(data)
        elif tag == "path-renew":
            self._renew_path(data)
        elif tag == "renew-deadline":
            self._on_renew_deadline(*data)

    def on_message(self, env: Envelope) -> None:
        if not isinstance(env.payload, (bytes, bytearray)):
            return  # membership notifications and other unframed fabric chatter
        msg = wire.decode(bytes(env.payload))
        if isinstance(msg, wire.PathRequest):
            self._on_path_request(msg, env)
        elif isinstance(msg, wire.PathTeardown):
            self._on_path_teardown(msg, env)
        elif isinstance(msg, wire.XConnRequest):
            self._on_xconn_request(msg, env)
        elif isinstance(msg, wire.XConnAck):
            self._on_ack(msg, env)
        elif isinstance(msg, wire.XConnNack):
            self._on_nack(msg, env)
        elif isinstance(msg, wire.Teardown):
            self._on_teardown(msg, env)
        elif isinstance(msg, wire.PathLeaseRenew):
            self._on_lease_renew(msg, env)
        elif isinstance(msg, wire.LossOfLightNotify):
            self._on_loss_notify(msg, env)
        elif isinstance(msg, wire.TopoAnnounce):
            self._on_announce(msg, env)

    def _send(self, dest_node: str, msg) -> None:
        self.sim.send(self.node_id, ("node", dest_node),
                      payload=wire.encode(msg), note=msg.summary())

    # ------------------------------------------------------------ lightpaths

    def request_lightpath(self, req: LightpathRequest,
                          reply_to: tuple | None = None) -> str | None:
        """Serve a lightpath request; returns the path id when the transaction
        starts, None when rejected outright."""
        self.sim.log("request-received", self.node_id,
                     f"req={req.req_id} src={req.src.host} dst={req.dst.host}")
        if req.token != self.cfg.token:
            return self._reject(req, reply_to, "auth")
        if (req.src.switch, req.src.port) == (req.dst.switch, req.dst.port):
            return self._reject(req, reply_to, "bad-endpoint")
        try:
            tree = self._spt(req.src.switch)
            route = extract_route(
                tree, self.graph, req.src, req.dst,
                port_free=lambda sw, p: self._port_free(sw, p),
                src_lit=lambda: self.devnet.port_rx(req.src.switch, req.src.port))
        except RouteError as exc:
            return self._reject(req, reply_to, exc.reason)

        self._path_seq += 1
        path_id = f"{self.node_id}/{self._path_seq}"
        conflict = self._acquire(route.ports(), path_id)
        if conflict is not None:
            return self._reject(req, reply_to, "port-busy")

        remotes = tuple(sw for sw in route.switches() if sw != self.switch)
        agent_map = self._discover_agents()
        missing = sorted(sw for sw in remotes if sw not in agent_map)
        if missing:
            self._release(route.ports(), path_id)
            return self._reject(req, reply_to, "no-agent")

        txn = self._new_txn(path_id, "setup", route, remotes,
                            reply_to=reply_to, req_id=req.req_id)
        for sw in remotes:
            hops = (route.hop_for(sw),)
            self._send(agent_map[sw], wire.XConnRequest(
                path_id, self.node_id, self.cfg.path_lease_ms, hops))
        try:
            self._apply_hops_local(path_id, (route.hop_for(self.switch),))
        except XConnError as exc:
            self._fail_setup(txn, f"local:{exc.reason}", agent_map)
            return None
        self._own_switch().grant_path_lease(
            path_id, self.node_id, (route.hop_for(self.switch),),
            self.cfg.path_lease_ms)
        if not remotes:
            self._commit_setup(txn, agent_map)
        else:
            self.sim.schedule_timer(self.node_id,
                                    self.sim.now + self.cfg.ack_deadline_ms,
                                    "ack-deadline", txn.txn_id)
        return path_id

    def _reject(self, req: LightpathRequest, reply_to, reason: str) -> None:
        self.sim.log("request-rejected", self.node_id,
                     f"req={req.req_id} reason={reason}")
        if reply_to is not None:
            node, req_id = reply_to
            self._send(node, wire.PathReply(req_id, "rejected", "", reason, ()))
        return None

    def _new_txn(self, path_id: str, kind: str, route: Route, remotes: tuple,
                 *, attempt: int = 1, stale: dict | None = None,
                 reply_to=None, req_id: str = "") -> Transaction:
        self._txn_seq += 1
        txn = Transaction(f"{self.node_id}/t{self._txn_seq}", path_id, kind,
                          "pre_commit", route, route.ports(), remotes,
                          {sw: "pending" for sw in remotes}, self.sim.now,
                          attempt, stale or {}, reply_to, req_id)
        self.txns[txn.txn_id] = txn
        self.txn_by_path[path_id] = txn
        return txn

    def _drop_txn(self, txn: Transaction) -> None:
        self.txns.pop(txn.txn_id, None)
        if self.txn_by_path.get(txn.path_id) is txn:
            del self.txn_by_path[txn.path_id]

    def _commit_setup(self, txn: Transaction, agent_map: dict) -> None:
        txn.phase = "committed"
        self._drop_txn(txn)
        lease = self._make_lease(txn.path_id)
        src = Endpoint(*self._endpoint_of_port(txn.route.hops[0].switch,
                                               txn.route.hops[0].in_port))
        dst = Endpoint(*self._endpoint_of_port(txn.route.hops[-1].switch,
                                               txn.route.hops[-1].out_port))
        record = LightpathRecord(
            txn.path_id, self.node_id, txn.route, lease, "active", src, dst,
            {sw: agent_map.get(sw, f"agent-{sw}") for sw in txn.participants})
        self.paths[txn.path_id] = record
        self.sim.log("path-committed", self.node_id,
                     f"path={txn.path_id} req={txn.req_id} route={txn.route.encode()} "
                     f"spans={'+'.join(txn.route.spans) or '-'} "
                     f"participants={len(txn.participants)}")
        if txn.reply_to is not None:
            node, req_id = txn.reply_to
            self._send(node, wire.PathReply(req_id, "committed", txn.path_id,
                                            "", txn.route.hops))
        self._schedule_renew(txn.path_id)
        self.sim.fire_hook("path-committed", record)

    def _fail_setup(self, txn: Transaction, reason: str, agent_map: dict) -> None:
        txn.phase = "rolled_back"
        self._drop_txn(txn)
        for sw in txn.participants:
            node = agent_map.get(sw)
            if node is not None:
                self._send(node, wire.Teardown(txn.path_id, ()))
        self._own_switch().tear_path(txn.path_id)
        self._own_switch().cancel_path_lease(txn.path_id)
        self._release(txn.held_ports, txn.path_id)
        self.sim.log("path-rolled-back", self.node_id,
                     f"path={txn.path_id} reason={reason}")
        if txn.reply_to is not None:
            node, req_id = txn.reply_to
            self._send(node, wire.PathReply(req_id, "rejected", txn.path_id,
                                            reason, ()))

    def _make_lease(self, path_id: str) -> Lease:
        self._lease_seq += 1
        return Lease(self._lease_seq, self.node_id, f"path:{path_id}",
                     self.sim.now, self.cfg.path_lease_ms)

    def _endpoint_of_port(self, switch: str, port: int) -> tuple:
        host = self.devnet._host_at.get((switch, port), "")
        return host, switch, port

    # ------------------------------------------------- participant side (2PC)

    def _on_xconn_request(self, msg: wire.XConnRequest, env: Envelope) -> None:
        hops = tuple(Hop(*h) for h in msg.hops)
        if any(h.switch != self.switch for h in hops):
            self._send(env.src, wire.XConnNack(msg.path_id, self.switch,
                                               "setup", "bad-hops"))
            return
        ports = set()
        for h in hops:
            ports.add((h.switch, h.in_port))
            ports.add((h.switch, h.out_port))
        for key in sorted(ports):
            owner = self.locks.get(key)
            if owner is not None and owner != msg.path_id:
                self._send(env.src, wire.XConnNack(msg.path_id, self.switch,
                                                   "setup", "port-busy"))
                return
        dev = self._own_switch()
        for h in hops:
            holder = dev.xconns.get(h.in_port)
            if holder is not None and holder.owner_path != msg.path_id:
                self._send(env.src, wire.XConnNack(msg.path_id, self.switch,
                                                   "setup", "port-busy"))
                return
            feeder = dev.out_in_use.get(h.out_port)
            if feeder is not None and dev.xconns[feeder].owner_path != msg.path_id:
                self._send(env.src, wire.XConnNack(msg.path_id, self.switch,
                                                   "setup", "port-busy"))
                return
        try:
            self._apply_hops_local(msg.path_id, hops)
        except XConnError as exc:
            self._send(env.src, wire.XConnNack(msg.path_id, self.switch,
                                               "setup", exc.reason))
            return
        conflict = self._acquire(ports, msg.path_id)
        assert conflict is None  # pre-checked above
        dev.grant_path_lease(msg.path_id, msg.initiator, hops, msg.lease_ms)
        self._send(env.src, wire.XConnAck(msg.path_id, self.switch, "setup"))

    def _apply_hops_local(self, path_id: str, hops: tuple) -> None:
        """Reconcile the local switch to exactly `hops` for this path.
        All-or-nothing: on failure every cross-connect made here is undone."""
        dev = self._own_switch()
        wanted = {(h.in_port, h.out_port) for h in hops}
        for xc in dev.connects_for(path_id):
            if (xc.in_port, xc.out_port) not in wanted:
                dev.tear_cross_connect(xc.in_port, xc.out_port)
        made = []
        try:
            for h in hops:
                existing = dev.xconns.get(h.in_port)
                if existing is not None and existing.owner_path == path_id \
                        and existing.out_port == h.out_port:
                    continue
                dev.make_cross_connect(h.in_port, h.out_port, path_id)
                made.append(h)
        except XConnError:
            for h in made:
                dev.tear_cross_connect(h.in_port, h.out_port)
            raise

    def _on_ack(self, msg: wire.XConnAck, env: Envelope) -> None:
        if msg.purpose == "renew":
            entry = self._renew_pending.get(msg.path_id)
            if entry is not None:
                entry["pending"].discard(msg.switch)
            return
        txn = self.txn_by_path.get(msg.path_id)
        if txn is None or txn.phase != "pre_commit":
            record = self.paths.get(msg.path_id)
            if record is None or record.state == "torn_down":
                self._send(env.src, wire.Teardown(msg.path_id, ()))
            return
        if msg.switch in txn.acks:
            txn.acks[msg.switch] = "ack"
        if all(v == "ack" for v in txn.acks.values()):
            agent_map = self._discover_agents()
            if txn.kind == "setup":
                self._commit_setup(txn, agent_map)
            else:
                self._commit_reroute(txn)

    def _on_nack(self, msg: wire.XConnNack, env: Envelope) -> None:
        if msg.purpose == "renew":
            record = self.paths.get(msg.path_id)
            if record is not None and record.state == "active":
                self._start_reroute(record, f"renew-nack:{msg.switch}")
            return
        txn = self.txn_by_path.get(msg.path_id)
        if txn is None or txn.phase != "pre_commit":
            return
        txn.acks[msg.switch] = "nack"
        if txn.kind == "setup":
            self._fail_setup(txn, f"nack:{msg.reason}@{msg.switch}",
                             self._discover_agents())
        else:
            self._fail_reroute_attempt(txn, f"nack:{msg.reason}@{msg.switch}")

    def _on_ack_deadline(self, txn_id: str) -> None:
        txn = self.txns.get(txn_id)
        if txn is None or txn.phase != "pre_commit":
            return
        pending = sorted(sw for sw, v in txn.acks.items() if v == "pending")
        if not pending:
            return
        reason = f"timeout:{'+'.join(pending)}"
        if txn.kind == "setup":
            self._fail_setup(txn, reason, self._discover_agents())
        else:
            self._fail_reroute_attempt(txn, reason)

    # -------------------------------------------------------------- teardown

    def _on_path_teardown(self, msg: wire.PathTeardown, env: Envelope) -> None:
        reply_req = f"td:{msg.path_id}"
        if msg.token != self.cfg.token:
            self.sim.log("teardown-rejected", self.node_id,
                         f"path={msg.path_id} reason=auth")
            self._send(env.src, wire.PathReply(reply_req, "rejected", msg.path_id,
                                               "auth", ()))
            return
        record = self.paths.get(msg.path_id)
        if record is None or record.state == "torn_down":
            self.sim.log("teardown-noop", self.node_id, f"path={msg.path_id}")
            self._send(env.src, wire.PathReply(reply_req, "torn-down", msg.path_id,
                                               "unknown-path", ()))
            return
        self.teardown(msg.path_id, "requested")
        self._send(env.src, wire.PathReply(reply_req, "torn-down", msg.path_id,
                                           "", ()))

    def teardown(self, path_id: str, reason: str) -> None:
        record = self.paths.get(path_id)
        if record is None or record.state == "torn_down":
            self.sim.log("teardown-noop", self.node_id, f"path={path_id}")
            return
        switches = set(record.route.switches())
        txn = self.txn_by_path.get(path_id)
        if txn is not None:
            switches |= set(txn.route.switches())
            switches |= set(txn.stale_hops)
            self._drop_txn(txn)
        for sw in sorted(switches):
            if sw == self.switch:
                continue
            node = record.agent_map.get(sw, f"agent-{sw}")
            self._send(node, wire.Teardown(path_id, ()))
        dev = self._own_switch()
        dev.tear_path(path_id)
        dev.cancel_path_lease(path_id)
        self._release_all_for(path_id)
        record.state = "torn_down"
        self._renew_pending.pop(path_id, None)
        self.sim.log("path-torn-down", self.node_id,
                     f"path={path_id} reason={reason}")
        self.sim.fire_hook("path-torn-down", record, reason)

    def _on_teardown(self, msg: wire.Teardown, env: Envelope) -> None:
        dev = self._own_switch()
        hops = tuple(Hop(*h) for h in msg.hops)
        if not hops:
            torn = dev.tear_path(msg.path_id)
            had_lease = msg.path_id in dev.path_leases
            dev.cancel_path_lease(msg.path_id)
            self._release_all_for(msg.path_id)
            if torn == 0 and not had_lease:
                self.sim.log("teardown-noop", self.node_id, f"path={msg.path_id}")
            return
        for h in hops:
            dev.tear_cross_connect(h.in_port, h.out_port)
            self._release({(h.switch, h.in_port), (h.switch, h.out_port)},
                          msg.path_id)
        pl = dev.path_leases.get(msg.path_id)
        if pl is not None:
            keep = tuple(h for h in pl.hops if h not in hops)
            if keep:
                pl.hops = keep
            else:
                dev.cancel_path_lease(msg.path_id)

    # ----------------------------------------------------------- path leases

    def _schedule_renew(self, path_id: str) -> None:
        self.sim.schedule_timer(self.node_id,
                                self.sim.now + self.cfg.path_lease_ms // 2,
                                "path-renew", path_id)

    def _renew_path(self, path_id: str) -> None:
        record = self.paths.get(path_id)
        if record is None or record.state == "torn_down":
            return
        record.lease.expiry = self.sim.now + record.lease.duration
        record.lease.renew_count += 1
        self._own_switch().extend_path_lease(path_id, self.cfg.path_lease_ms)
        remotes = tuple(sw for sw in record.route.switches() if sw != self.switch)
        self._renew_cycle += 1
        cycle = self._renew_cycle
        self._renew_pending[path_id] = {"cycle": cycle, "pending": set(remotes)}
        for sw in sorted(remotes):
            node = record.agent_map.get(sw, f"agent-{sw}")
            self._send(node, wire.PathLeaseRenew(path_id, self.cfg.path_lease_ms))
        if remotes:
            self.sim.schedule_timer(self.node_id,
                                    self.sim.now + self.cfg.ack_deadline_ms,
                                    "renew-deadline", (path_id, cycle))
        self._schedule_renew(path_id)

    def _on_renew_deadline(self, path_id: str, cycle: int) -> None:
        entry = self._renew_pending.get(path_id)
        if entry is None or entry["cycle"] != cycle or not entry["pending"]:
            return
        record = self.paths.get(path_id)
        if record is None or record.state != "active":
            return
        missing = "+".join(sorted(entry["pending"]))
        self._start_reroute(record, f"renew-timeout:{missing}")

    def _on_lease_renew(self, msg: wire.PathLeaseRenew, env: Envelope) -> None:
        if self._own_switch().extend_path_lease(msg.path_id, msg.lease_ms):
            self._send(env.src, wire.XConnAck(msg.path_id, self.switch, "renew"))
        else:
            self._send(env.src, wire.XConnNack(msg.path_id, self.switch,
                                               "renew", "unknown-path"))

    def on_path_lease_expired(self, path_id: str) -> None:
        """Device watchdog reclaimed this path's local cross-connects."""
        self._release_all_for(path_id, only_switch=self.switch)
        record = self.paths.get(path_id)
        if record is not None and record.state != "torn_down":
            record.state = "torn_down"
            self.sim.log("path-torn-down", self.node_id,
                         f"path={path_id} reason=lease-expired")
            self.sim.fire_hook("path-torn-down", record, "lease-expired")

    # ------------------------------------------------------------ loss / topo

    def on_loss_of_light(self, span_id: str) -> None:
        self.sim.log("loss-of-light", self.node_id, f"span={span_id}")
        self._announce_span(span_id, "cut")
        for path_id in sorted(self.paths):
            record = self.paths[path_id]
            if record.state == "active" and span_id in record.route.spans:
                self._start_reroute(record, f"loss-of-light:{span_id}")
        dev = self._own_switch()
        span = self.devnet.spans[span_id]
        for path_id in sorted(dev.path_leases):
            pl = dev.path_leases[path_id]
            if pl.initiator == self.node_id:
                continue
            if self._span_touches_hops(span, pl.hops):
                self._send(pl.initiator, wire.LossOfLightNotify(path_id, span_id))

    def on_span_restored(self, span_id: str) -> None:
        self._announce_span(span_id, "lit")

    def _span_touches_hops(self, span, hops: tuple) -> bool:
        for h in hops:
            if span.from_sw == h.switch and span.from_port == h.out_port:
                return True
            if span.to_sw == h.switch and span.to_port == h.in_port:
                return True
        return False

    def _announce_span(self, span_id: str, state: str) -> None:
        edge = self.graph.edges.get(span_id)
        cost = edge.cost if edge is not None else 1.0
        self._ls_seq += 1
        update = LinkStateUpdate(self.node_id, self._ls_seq, span_id, state, cost)
        changed = self.graph.apply_update(update)
        if changed:
            self.sim.log("topo-update", self.node_id,
                         f"span={span_id} state={state} origin={self.node_id} "
                         f"seq={self._ls_seq} version={self.graph.version}")
        self.sim.send(self.node_id, ("group", self.cfg.group),
                      payload=wire.encode(wire.TopoAnnounce(
                          self.node_id, self._ls_seq, span_id, state, cost)),
                      note=f"type=TopoAnnounce span={span_id} state={state}")

    def _on_announce(self, msg: wire.TopoAnnounce, env: Envelope) -> None:
        update = LinkStateUpdate(msg.origin, msg.origin_seq, msg.span_id,
                                 msg.state, msg.cost)
        changed = self.graph.apply_update(update)
        if not changed:
            return
        self.sim.log("topo-update", self.node_id,
                     f"span={msg.span_id} state={msg.state} origin={msg.origin} "
                     f"seq={msg.origin_seq} version={self.graph.version}")
        if msg.state == "cut":
            for path_id in sorted(self.paths):
                record = self.paths[path_id]
                if record.state == "active" and msg.span_id in record.route.spans:
                    self._start_reroute(record, f"loss-of-light:{msg.span_id}")

    def _on_loss_notify(self, msg: wire.LossOfLightNotify, env: Envelope) -> None:
        record = self.paths.get(msg.path_id)
        if record is None or record.state != "active":
            return  # duplicate or stale notification
        edge = self.graph.edges.get(msg.span_id)
        if edge is not None and edge.state == "lit":
            # The detector's announcement may have been lost; believe the notify.
            self._ls_seq += 1
            self.graph.apply_update(LinkStateUpdate(
                self.node_id, self._ls_seq, msg.span_id, "cut", edge.cost))
        self._start_reroute(record, f"loss-of-light:{msg.span_id}")

    # ---------------------------------------------------------------- reroute

    def _start_reroute(self, record: LightpathRecord, reason: str) -> None:
        if record.state != "active":
            return
        record.state = "rerouting"
        self.sim.log("reroute-begin", self.node_id,
                     f"path={record.path_id} reason={reason}")
        self._attempt_reroute(record, 1)

    def _attempt_reroute(self, record: LightpathRecord, attempt: int) -> None:
        path_id = record.path_id
        try:
            tree = self._spt(record.src.switch)
            route = extract_route(
                tree, self.graph, record.src, record.dst,
                port_free=lambda sw, p: self._port_free(sw, p, allow=path_id),
                src_lit=lambda: self.devnet.port_rx(record.src.switch,
                                                    record.src.port))
        except RouteError as exc:
            self._give_up_reroute(record, exc.reason)
            return
        old_by_sw = {h.switch: h for h in record.route.hops}
        new_by_sw = {h.switch: h for h in route.hops}
        stale = {sw: (h,) for sw, h in old_by_sw.items()
                 if new_by_sw.get(sw) != h}
        conflict = self._acquire(route.ports(), path_id)
        if conflict is not None:
            self._give_up_reroute(record, "port-busy")
            return
        remotes = tuple(sw for sw in route.switches() if sw != self.switch)
        agent_map = self._discover_agents()
        missing = sorted(sw for sw in remotes if sw not in agent_map)
        if missing:
            self._give_up_reroute(record, "no-agent")
            return
        record.agent_map.update({sw: agent_map[sw] for sw in remotes})
        txn = self._new_txn(path_id, "reroute", route, remotes,
                            attempt=attempt, stale=stale)
        for sw in sorted(stale):
            if sw == self.switch:
                continue
            node = record.agent_map.get(sw, f"agent-{sw}")
            self._send(node, wire.Teardown(path_id, stale[sw]))
        for sw in remotes:
            self._send(agent_map[sw], wire.XConnRequest(
                path_id, self.node_id, self.cfg.path_lease_ms,
                (new_by_sw[sw],)))
        try:
            if self.switch in new_by_sw:
                self._apply_hops_local(path_id, (new_by_sw[self.switch],))
                self._own_switch().grant_path_lease(
                    path_id, self.node_id, (new_by_sw[self.switch],),
                    self.cfg.path_lease_ms)
            elif self.switch in stale:
                self._apply_hops_local(path_id, ())
                self._own_switch().cancel_path_lease(path_id)
        except XConnError as exc:
            self._fail_reroute_attempt(txn, f"local:{exc.reason}")
            return
        if not remotes:
            self._commit_reroute(txn)
        else:
            self.sim.schedule_timer(self.node_id,
                                    self.sim.now + self.cfg.ack_deadline_ms,
                                    "ack-deadline", txn.txn_id)

    def _commit_reroute(self, txn: Transaction) -> None:
        record = self.paths[txn.path_id]
        self._drop_txn(txn)
        old_ports = record.route.ports()
        record.route = txn.route
        record.state = "active"
        self._release(old_ports - txn.route.ports(), txn.path_id)
        self.sim.log("reroute-done", self.node_id,
                     f"path={txn.path_id} route={txn.route.encode()} "
                     f"spans={'+'.join(txn.route.spans) or '-'} attempt={txn.attempt}")
        self.sim.fire_hook("reroute-done", record)

    def _fail_reroute_attempt(self, txn: Transaction, reason: str) -> None:
        record = self.paths.get(txn.path_id)
        self._drop_txn(txn)
        if record is None or record.state != "rerouting":
            return
        if txn.attempt == 1:
            # One retry on contention, then give up.
            self.sim.log("reroute-retry", self.node_id,
                         f"path={txn.path_id} reason={reason}")
            self._attempt_reroute(record, 2)
        else:
            self._give_up_reroute(record, reason)

    def _give_up_reroute(self, record: LightpathRecord, reason: str) -> None:
        self.sim.log("reroute-failed", self.node_id,
                     f"path={record.path_id} reason={reason}")
        record.state = "active"  # teardown() requires a non-torn state
        self.teardown(record.path_id, f"reroute-failed:{reason}")

    # ------------------------------------------------------------------ locks

    def _port_free(self, sw: str, port: int, allow: str | None = None) -> bool:
        owner = self.locks.get((sw, port))
        return owner is None or owner == allow

    def _acquire(self, ports, owner: str):
        """Try-lock every port; returns the first conflicting port or None.
        Never blocks: contention is reported, not waited out."""
        conflict = None
        for key in sorted(ports):
            cur = self.locks.get(key)
            if cur is not None and cur != owner:
                conflict = key
                break
        if conflict is not None:
            return conflict
        for key in ports:
            self.locks[key] = owner
        return None

    def _release(self, ports, owner: str) -> None:
        for key in sorted(ports):
            if self.locks.get(key) == owner:
                del self.locks[key]

    def _release_all_for(self, path_id: str, only_switch: str | None = None) -> None:
        for key in sorted(self.locks):
            if self.locks[key] == path_id and \
                    (only_switch is None or key[0] == only_switch):
                del self.locks[key]

    # ---------------------------------------------------------------- helpers

    def _own_switch(self):
        return self.devnet.switches[self.switch]

    def _spt(self, root: str) -> ShortestPathTree:
        cached = getattr(self, "_spt_cache", None)
        if cached is not None and cached[0] == (root, self.graph.version):
            return cached[1]
        tree = compute_spt(self.graph, root)
        self._spt_cache = ((root, self.graph.version), tree)
        return tree

    def _discover_agents(self) -> dict:
        out = {}
        for desc in self.registry.discover(self.cfg.group, kind="agent"):
            sw = desc.attributes.get("switch")
            if sw is not None:
                out[sw] = desc.node
        return out

    def _on_path_request(self, msg: wire.PathRequest, env: Envelope) -> None:
        src = self.devnet.hosts.get(msg.src_host)
        dst = self.devnet.hosts.get(msg.dst_host)
        if src is None or dst is None:
            self.sim.log("request-received", self.node_id,
                         f"req={msg.req_id} src={msg.src_host} dst={msg.dst_host}")
            self.sim.log("request-rejected", self.node_id,
                         f"req={msg.req_id} reason=unknown-endpoint")
            self._send(env.src, wire.PathReply(msg.req_id, "rejected", "",
                                               "unknown-endpoint", ()))
            return
        req = LightpathRequest(
            msg.req_id,
            Endpoint(src.host, src.switch, src.port),
            Endpoint(dst.host, dst.switch, dst.port),
            msg.token, self.sim.now)
        self.request_lightpath(req, reply_to=(env.src, msg.req_id))
