"""Assembles a runnable simulation from topology and scenario files.

One switch gets one agent; every host gets a client node that discovers
agents through the registry and submits requests to the closest one (by
tree distance from its attachment switch, ties broken by node id).  Each
committed scenario path gets a flow model that watches the light actually
delivered to the destination host against a TCP-style timeout budget.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import wire
from .agent import Agent, AgentConfig, DEFAULT_TOKEN, LightpathRecord
from .device import DeviceNetwork, parse_topology, populate_network
from .lookup import LookupRegistry, ServiceDescriptor
from .sim import Envelope, FaultSpec, Simulation, TraceRecord
from .topology import Endpoint, TopoGraph, compute_spt, graph_from_network_spec

CLIENT_GROUP = "clients"

SCENARIO_FAULTS = {
    "fiber-cut": "fiber_cut",
    "fiber-restore": "fiber_restore",
    "drop-message": "drop_message",
    "partition": "partition",
    "heal-partition": "heal_partition",
    "crash-agent": "crash_agent",
    "restart-agent": "restart_agent",
}

EXPECT_OPS = ("==", "!=", ">=", "<=", ">", "<", "=")


class ScenarioError(Exception):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class SimConfig:
    seed: int = 0
    latency_ms: int = 10
    auth_token: str = DEFAULT_TOKEN
    tcp_budget_ms: int = 2_000
    service_lease_ms: int = 30_000
    path_lease_ms: int = 5_000
    ack_deadline_ms: int = 1_000
    agent_group: str = "optical-agents"
    settle_ms: int = 15_000


@dataclass
class FlowModel:
    flow_id: str
    path_id: str
    dst_host: str
    timeout_budget: int
    started_at: int
    dark_since: int | None = None
    dead_at: int | None = None

    @property
    def state(self) -> str:
        return "dead" if self.dead_at is not None else "alive"


@dataclass(frozen=True)
class Directive:
    at: int
    kind: str
    args: tuple


@dataclass(frozen=True)
class Expectation:
    key: str
    op: str
    value: str


class Client:
    """End-host command stub: discovers agents, submits path commands."""

    def __init__(self, sim: Simulation, registry: LookupRegistry, host: str,
                 endpoint: Endpoint, graph: TopoGraph, cfg: SimConfig):
        self.sim = sim
        self.registry = registry
        self.host = host
        self.endpoint = endpoint
        self.graph = graph
        self.cfg = cfg
        self.node_id = host
        self.replies: dict[str, wire.PathReply] = {}
        self.notifications: list[wire.RegistryEvent] = []
        self._req_seq = 0
        sim.attach(self.node_id, [CLIENT_GROUP], handler=self)

    def start(self) -> None:
        self.registry.register(
            ServiceDescriptor(self.node_id, (CLIENT_GROUP,), "client",
                              {"switch": self.endpoint.switch}),
            self.cfg.service_lease_ms)

    def on_message(self, env: Envelope) -> None:
        if not isinstance(env.payload, (bytes, bytearray)):
            return
        msg = wire.decode(bytes(env.payload))
        if isinstance(msg, wire.PathReply):
            self.replies[msg.req_id] = msg
        elif isinstance(msg, wire.RegistryEvent):
            self.notifications.append(msg)

    def on_timer(self, tag, data) -> None:
        pass

    def closest_agent(self) -> str | None:
        """Pick the agent with minimal tree distance from this host's switch."""
        tree = compute_spt(self.graph, self.endpoint.switch)
        best = None
        for desc in self.registry.discover(self.cfg.agent_group, kind="agent"):
            sw = desc.attributes.get("switch")
            if sw is None or sw not in tree.dist:
                continue
            key = (tree.dist[sw], desc.node)
            if best is None or key < best:
                best = key
        return best[1] if best else None

    def request(self, dst_host: str, token: str | None = None) -> str:
        self._req_seq += 1
        req_id = f"{self.host}/r{self._req_seq}"
        agent = self.closest_agent()
        if agent is None:
            self.sim.log("request-failed", self.node_id,
                         f"req={req_id} reason=no-agent")
            self.replies[req_id] = wire.PathReply(req_id, "rejected", "",
                                                  "no-agent", ())
            return req_id
        msg = wire.PathRequest(req_id, self.host, dst_host,
                               token if token is not None else self.cfg.auth_token)
        self.sim.send(self.node_id, ("node", agent), payload=wire.encode(msg),
                      note=msg.summary())
        return req_id

    def request_teardown(self, path_id: str, initiator: str,
                         token: str | None = None) -> str:
        msg = wire.PathTeardown(
            path_id, token if token is not None else self.cfg.auth_token)
        self.replies.pop(f"td:{path_id}", None)  # repeat teardowns reuse the key
        self.sim.send(self.node_id, ("node", initiator), payload=wire.encode(msg),
                      note=msg.summary())
        return f"td:{path_id}"


class Harness:
    def __init__(self, topo_text: str, cfg: SimConfig | None = None):
        self.cfg = cfg or SimConfig()
        self.sim = Simulation(self.cfg.seed, self.cfg.latency_ms)
        self.spec = parse_topology(topo_text)
        self.devnet = DeviceNetwork(self.sim)
        populate_network(self.devnet, self.spec)
        self.registry = LookupRegistry(self.sim)
        self.flows: dict[str, FlowModel] = {}
        self.directives: list[Directive] = []
        self.expectations: list[Expectation] = []

        agent_cfg = AgentConfig(self.cfg.agent_group, self.cfg.auth_token,
                                self.cfg.service_lease_ms, self.cfg.path_lease_ms,
                                self.cfg.ack_deadline_ms)
        self.agents: dict[str, Agent] = {}
        for sw, _ports in sorted(self.spec["switches"]):
            agent = Agent(self.sim, self.registry, self.devnet, sw,
                          graph_from_network_spec(self.spec), agent_cfg,
                          graph_factory=lambda: graph_from_network_spec(self.spec))
            self.sim.attach(agent.node_id, [self.cfg.agent_group], handler=agent)
            self.agents[sw] = agent
        self.clients: dict[str, Client] = {}
        for host, sw, port in sorted(self.spec["hosts"]):
            self.clients[host] = Client(self.sim, self.registry, host,
                                        Endpoint(host, sw, port),
                                        graph_from_network_spec(self.spec),
                                        self.cfg)
        for sw in sorted(self.agents):
            self.agents[sw].start()
        for host in sorted(self.clients):
            self.clients[host].start()

        self.devnet.set_callbacks(
            loss=self._push_loss, restore=self._push_restore,
            lease_expired=self._push_lease_expired,
            host_light=self._on_host_light)
        self.sim.add_hook("path-committed", self._on_path_committed)

    # ------------------------------------------------------------ device push

    def _push_loss(self, switch: str, span_id: str) -> None:
        agent = self.agents.get(switch)
        if agent is not None and not self.sim.is_crashed(agent.node_id):
            agent.on_loss_of_light(span_id)

    def _push_restore(self, switch: str, span_id: str) -> None:
        agent = self.agents.get(switch)
        if agent is not None and not self.sim.is_crashed(agent.node_id):
            agent.on_span_restored(span_id)

    def _push_lease_expired(self, switch: str, path_id: str) -> None:
        agent = self.agents.get(switch)
        if agent is not None and not self.sim.is_crashed(agent.node_id):
            agent.on_path_lease_expired(path_id)

    # ----------------------------------------------------------------- flows

    def _on_path_committed(self, record: LightpathRecord) -> None:
        if record.path_id in self.flows:
            return  # reroute recommit keeps the original flow
        flow = FlowModel(f"f-{record.path_id}", record.path_id, record.dst.host,
                         self.cfg.tcp_budget_ms, self.sim.now)
        if not self.devnet.host_delivered_light(record.dst.host):
            flow.dark_since = self.sim.now
        record.flow = flow.flow_id
        self.flows[record.path_id] = flow
        self.sim.log("flow-attach", record.dst.host,
                     f"flow={flow.flow_id} path={record.path_id} "
                     f"budget={flow.timeout_budget} "
                     f"lit={int(flow.dark_since is None)}")

    def _on_host_light(self, host: str, lit: bool) -> None:
        for path_id in sorted(self.flows):
            flow = self.flows[path_id]
            if flow.dst_host != host:
                continue
            if lit:
                if flow.dark_since is not None:
                    dark = self.sim.now - flow.dark_since
                    if dark > flow.timeout_budget and flow.dead_at is None:
                        flow.dead_at = flow.dark_since + flow.timeout_budget
                        self.sim.log("flow-dead", host,
                                     f"flow={flow.flow_id} dark_ms={dark}")
                    flow.dark_since = None
            elif flow.dark_since is None:
                flow.dark_since = self.sim.now

    def _finalize_flows(self) -> None:
        for path_id in sorted(self.flows):
            flow = self.flows[path_id]
            if flow.dead_at is None and flow.dark_since is not None:
                dark = self.sim.now - flow.dark_since
                if dark > flow.timeout_budget:
                    flow.dead_at = flow.dark_since + flow.timeout_budget
                    self.sim.log("flow-dead", flow.dst_host,
                                 f"flow={flow.flow_id} dark_ms={dark}")

    # -------------------------------------------------------------- scenario

    def load_scenario(self, text: str) -> None:
        directives, expectations = parse_scenario(text)
        for d in directives:
            self._validate_directive(d)
        self.directives.extend(directives)
        self.expectations.extend(expectations)
        for d in directives:
            if d.kind == "request-path":
                src, dst = d.args
                self.sim.schedule(
                    d.at, lambda src=src, dst=dst: self.clients[src].request(dst))
            else:
                fault = self._fault_from_directive(d)
                self.sim.inject_fault(fault)

    def _validate_directive(self, d: Directive) -> None:
        if d.kind == "request-path":
            src, dst = d.args
            for host in (src, dst):
                if host not in self.clients:
                    raise ScenarioError(0, f"unknown host {host!r}")

    def _fault_from_directive(self, d: Directive) -> FaultSpec:
        kind = SCENARIO_FAULTS[d.kind]
        if kind == "drop_message":
            rate = float(d.args[0])
            target = d.args[1] if len(d.args) > 1 else None
            return FaultSpec(kind, target, d.at, rate)
        if kind in ("partition", "heal_partition"):
            return FaultSpec(kind, (d.args[0], d.args[1]), d.at)
        return FaultSpec(kind, d.args[0], d.at)

    def run(self, until: int | None = None) -> list[TraceRecord]:
        if until is None:
            last = max((d.at for d in self.directives), default=0)
            until = last + self.cfg.settle_ms
        segment = self.sim.run_until(until)
        self._finalize_flows()
        self.sim.log("run-end", "sim", f"now={self.sim.now}")
        return segment

    # ------------------------------------------------------- shell primitives

    def step(self, ms: int) -> None:
        self.sim.run_until(self.sim.now + ms)

    def submit_and_wait(self, src_host: str, dst_host: str,
                        token: str | None = None,
                        cap_ms: int = 30_000) -> wire.PathReply | None:
        client = self.clients[src_host]
        req_id = client.request(dst_host, token)
        self.sim.run_while(lambda: req_id not in client.replies,
                           self.sim.now + cap_ms)
        return client.replies.get(req_id)

    def teardown_and_wait(self, path_id: str, token: str | None = None,
                          cap_ms: int = 30_000) -> wire.PathReply | None:
        record = self.find_record(path_id)
        if record is None:
            return None
        client = self.clients.get(record.src.host) or \
            self.clients[sorted(self.clients)[0]]
        key = client.request_teardown(path_id, record.initiator, token)
        self.sim.run_while(lambda: key not in client.replies,
                           self.sim.now + cap_ms)
        return client.replies.get(key)

    def inject_now(self, kind: str, target, rate: float | None = None,
                   settle_ms: int = 500) -> None:
        self.sim.inject_fault(FaultSpec(kind, target, self.sim.now, rate))
        self.sim.run_until(self.sim.now + settle_ms)

    def find_record(self, path_id: str) -> LightpathRecord | None:
        for sw in sorted(self.agents):
            record = self.agents[sw].paths.get(path_id)
            if record is not None:
                return record
        return None

    def all_records(self) -> list[LightpathRecord]:
        out = []
        for sw in sorted(self.agents):
            for path_id in sorted(self.agents[sw].paths):
                out.append(self.agents[sw].paths[path_id])
        return out

    def reference_graph(self) -> TopoGraph:
        first = sorted(self.agents)[0]
        return self.agents[first].graph


def parse_scenario(text: str) -> tuple[list[Directive], list[Expectation]]:
    """Parse the line-oriented scenario format.

    Directives: `at <ms> <fault-kind> <args>` and
    `at <ms> request-path <src-host> <dst-host>`; assertions:
    `expect <metric-key> <op> <value>`.
    """
    directives: list[Directive] = []
    expectations: list[Expectation] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0] == "at":
            if len(tokens) < 3:
                raise ScenarioError(lineno, "expected: at <ms> <directive> <args>")
            try:
                at = int(tokens[1])
            except ValueError:
                raise ScenarioError(lineno, f"bad time {tokens[1]!r}") from None
            if at < 0:
                raise ScenarioError(lineno, "time must be non-negative")
            kind = tokens[2]
            args = tuple(tokens[3:])
            if kind == "request-path":
                if len(args) != 2:
                    raise ScenarioError(lineno,
                                        "expected: request-path <src-host> <dst-host>")
            elif kind in SCENARIO_FAULTS:
                n = len(args)
                if kind in ("partition", "heal-partition") and n != 2:
                    raise ScenarioError(lineno, f"{kind} takes two node names")
                if kind in ("fiber-cut", "fiber-restore", "crash-agent",
                            "restart-agent") and n != 1:
                    raise ScenarioError(lineno, f"{kind} takes one argument")
                if kind == "drop-message":
                    if n not in (1, 2):
                        raise ScenarioError(lineno,
                                            "drop-message takes <rate> [node]")
                    try:
                        rate = float(args[0])
                    except ValueError:
                        raise ScenarioError(lineno,
                                            f"bad rate {args[0]!r}") from None
                    if not 0.0 <= rate <= 1.0:
                        raise ScenarioError(lineno, "rate must be in [0,1]")
            else:
                raise ScenarioError(lineno, f"unknown directive {kind!r}")
            directives.append(Directive(at, kind, args))
        elif tokens[0] == "expect":
            if len(tokens) != 4 or tokens[2] not in EXPECT_OPS:
                raise ScenarioError(lineno, "expected: expect <key> <op> <value>")
            expectations.append(Expectation(tokens[1], tokens[2], tokens[3]))
        else:
            raise ScenarioError(lineno, f"unknown directive {tokens[0]!r}")
    return directives, expectations


def evaluate_expectations(expectations: list[Expectation],
                          metrics: dict) -> list[str]:
    """Returns a list of failure descriptions; empty means all expectations hold."""
    failures = []
    for exp in expectations:
        actual = metrics.get(exp.key)
        if actual is None:
            failures.append(f"expect {exp.key} {exp.op} {exp.value}: key missing")
            continue
        if not _compare(str(actual), exp.op, exp.value):
            failures.append(
                f"expect {exp.key} {exp.op} {exp.value}: actual {actual}")
    return failures


def _compare(actual: str, op: str, wanted: str) -> bool:
    try:
        a: object = float(actual)
        w: object = float(wanted)
    except ValueError:
        a, w = actual, wanted
    if op in ("=", "=="):
        return a == w
    if op == "!=":
        return a != w
    if op == ">=":
        return a >= w
    if op == "<=":
        return a <= w
    if op == ">":
        return a > w
    return a < w
