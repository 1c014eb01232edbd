"""Emulated layer-1 optical switches and the fiber plant connecting them.

Light is modeled by propagation: host transmitters are the only sources,
cross-connects pass a port's received light to another port's transmit
side, and a span carries light iff its state is lit and its source port
is transmitting.  Port readings report the received (rx) level; a host's
attachment port additionally reports what the switch transmits back to
the host, which is what a flow ultimately sees.

Per-path lease expiry is enforced by a device-side watchdog rather than
by agent code, so stranded cross-connects are reclaimed even when the
controlling agent is down.
"""

from __future__ import annotations

from dataclasses import dataclass

from .lookup import Lease
from .sim import Simulation

LIT_DBM = 0.0
DARK_DBM = -40.0
LOSS_OF_LIGHT_THRESHOLD_DBM = -25.0

DEFAULT_SPAN_COST = 1.0


class DeviceError(Exception):
    pass


class XConnError(DeviceError):
    """Cross-connect attempt failed; .reason feeds nack semantics."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class TopologyParseError(DeviceError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class FiberSpan:
    span_id: str
    base_id: str
    from_sw: str
    from_port: int
    to_sw: str
    to_port: int
    cost: float
    state: str = "lit"  # lit | cut


@dataclass(frozen=True)
class CrossConnect:
    in_port: int
    out_port: int
    owner_path: str
    created_at: int


@dataclass(frozen=True)
class PortReading:
    port: int
    power_dbm: float
    light_present: bool
    at: int


@dataclass(frozen=True)
class AlarmRecord:
    severity: str
    kind: str
    subject: str
    at: int


@dataclass
class PathLease:
    lease: Lease
    initiator: str
    hops: tuple  # ((switch, in_port, out_port), ...) held on this switch


@dataclass
class HostPort:
    host: str
    switch: str
    port: int


class OpticalSwitch:
    def __init__(self, net: "DeviceNetwork", name: str, port_count: int):
        self.net = net
        self.name = name
        self.port_count = port_count
        self.xconns: dict[int, CrossConnect] = {}  # keyed by in_port
        self.out_in_use: dict[int, int] = {}  # out_port -> in_port
        self.alarms: dict[int, AlarmRecord] = {}  # active, keyed by port
        self.path_leases: dict[str, PathLease] = {}
        self.fail_next_xconn = False  # test hook: simulated device failure

    def _check_port(self, port: int) -> None:
        if not 1 <= port <= self.port_count:
            raise DeviceError(f"{self.name} has no port {port}")

    def make_cross_connect(self, in_port: int, out_port: int, owner_path: str) -> CrossConnect:
        self._check_port(in_port)
        self._check_port(out_port)
        if self.fail_next_xconn:
            self.fail_next_xconn = False
            self._fail_xconn(in_port, out_port, owner_path, "device-failure", in_port)
        if in_port in self.xconns:
            self._fail_xconn(in_port, out_port, owner_path, "port-busy", in_port)
        if out_port in self.out_in_use:
            self._fail_xconn(in_port, out_port, owner_path, "port-busy", out_port)
        xc = CrossConnect(in_port, out_port, owner_path, self.net.sim.now)
        self.xconns[in_port] = xc
        self.out_in_use[out_port] = in_port
        self.net.sim.log("xconn-make", self.name,
                         f"in={in_port} out={out_port} owner={owner_path}")
        for port in (in_port, out_port):
            alarm = self.alarms.get(port)
            if alarm is not None and alarm.kind == "xconn_failure":
                del self.alarms[port]
                self.net.sim.log("alarm-clear", self.name,
                                 f"port={port} kind=xconn_failure")
        self.net.recompute_light()
        return xc

    def _fail_xconn(self, in_port: int, out_port: int, owner_path: str,
                    reason: str, port: int) -> None:
        self.net.sim.log("xconn-fail", self.name,
                         f"in={in_port} out={out_port} owner={owner_path} reason={reason}")
        if port not in self.alarms:
            self.alarms[port] = AlarmRecord("major", "xconn_failure",
                                            f"{self.name}:{port}", self.net.sim.now)
            self.net.sim.log("alarm-raise", self.name,
                             f"port={port} kind=xconn_failure")
        raise XConnError(reason)

    def tear_cross_connect(self, in_port: int, out_port: int) -> None:
        xc = self.xconns.get(in_port)
        if xc is None or xc.out_port != out_port:
            self.net.sim.log("xconn-noop", self.name, f"in={in_port} out={out_port}")
            return
        del self.xconns[in_port]
        del self.out_in_use[out_port]
        self.net.sim.log("xconn-tear", self.name,
                         f"in={in_port} out={out_port} owner={xc.owner_path}")
        self.net.recompute_light()

    def tear_path(self, path_id: str) -> int:
        """Remove every cross-connect owned by path_id; returns count torn."""
        torn = 0
        for in_port in sorted(self.xconns):
            xc = self.xconns.get(in_port)
            if xc is not None and xc.owner_path == path_id:
                self.tear_cross_connect(xc.in_port, xc.out_port)
                torn += 1
        return torn

    def connects_for(self, path_id: str) -> list[CrossConnect]:
        return [xc for _, xc in sorted(self.xconns.items()) if xc.owner_path == path_id]

    def read_monitor(self) -> tuple[list[PortReading], list[CrossConnect], list[AlarmRecord]]:
        now = self.net.sim.now
        readings = []
        for port in range(1, self.port_count + 1):
            lit = self.net.port_rx(self.name, port)
            dbm = LIT_DBM if lit else DARK_DBM
            readings.append(PortReading(port, dbm, dbm >= LOSS_OF_LIGHT_THRESHOLD_DBM, now))
        xconns = [self.xconns[p] for p in sorted(self.xconns)]
        alarms = [self.alarms[p] for p in sorted(self.alarms)]
        return readings, xconns, alarms

    # ------------------------------------------------------------ path leases

    def grant_path_lease(self, path_id: str, initiator: str, hops: tuple,
                         duration: int) -> None:
        sim = self.net.sim
        existing = self.path_leases.get(path_id)
        if existing is None:
            self.net._lease_seq += 1
            lease = Lease(self.net._lease_seq, self.name, f"path:{path_id}",
                          sim.now, duration)
            self.path_leases[path_id] = PathLease(lease, initiator, hops)
            sim.log("path-lease-grant", self.name,
                    f"path={path_id} expiry={lease.expiry}")
        else:
            existing.hops = hops
            existing.lease.duration = duration
            existing.lease.expiry = sim.now + duration
            existing.lease.renew_count += 1
            lease = existing.lease
            sim.log("path-lease-extend", self.name,
                    f"path={path_id} expiry={lease.expiry}")
        self._arm_watchdog(path_id, lease.expiry)

    def extend_path_lease(self, path_id: str, duration: int) -> bool:
        pl = self.path_leases.get(path_id)
        if pl is None:
            return False
        pl.lease.expiry = self.net.sim.now + duration
        pl.lease.renew_count += 1
        self.net.sim.log("path-lease-extend", self.name,
                         f"path={path_id} expiry={pl.lease.expiry}")
        self._arm_watchdog(path_id, pl.lease.expiry)
        return True

    def cancel_path_lease(self, path_id: str) -> None:
        if self.path_leases.pop(path_id, None) is not None:
            self.net.sim.log("path-lease-cancel", self.name, f"path={path_id}")

    def _arm_watchdog(self, path_id: str, expected_expiry: int) -> None:
        def fire() -> None:
            pl = self.path_leases.get(path_id)
            if pl is None or pl.lease.expiry != expected_expiry:
                return
            if pl.lease.live(self.net.sim.now):
                return
            del self.path_leases[path_id]
            self.net.sim.log("path-lease-expired", self.name, f"path={path_id}")
            self.tear_path(path_id)
            self.net.notify_lease_expired(self.name, path_id)

        self.net.sim.schedule(expected_expiry, fire, housekeeping=True)


class DeviceNetwork:
    def __init__(self, sim: Simulation):
        self.sim = sim
        self.switches: dict[str, OpticalSwitch] = {}
        self.spans: dict[str, FiberSpan] = {}
        self.hosts: dict[str, HostPort] = {}
        self._span_into: dict[tuple[str, int], str] = {}  # (sw, port) -> span ending there
        self._span_outof: dict[tuple[str, int], str] = {}  # (sw, port) -> span leaving there
        self._host_at: dict[tuple[str, int], str] = {}
        self._transmitting: set[str] = set()
        self._rx: dict[tuple[str, int], bool] = {}
        self._host_light: dict[str, bool] = {}
        self._loss_cb = None  # fn(switch, span_id) on cut
        self._restore_cb = None  # fn(switch, span_id) on restore
        self._lease_cb = None  # fn(switch, path_id) on watchdog expiry
        self._host_light_cb = None  # fn(host, lit)
        self._lease_seq = 0
        sim.devnet = self

    # ----------------------------------------------------------- construction

    def add_switch(self, name: str, port_count: int) -> OpticalSwitch:
        if name in self.switches:
            raise DeviceError(f"duplicate switch {name!r}")
        sw = OpticalSwitch(self, name, port_count)
        self.switches[name] = sw
        return sw

    def add_span(self, span_id: str, from_sw: str, from_port: int,
                 to_sw: str, to_port: int, cost: float = DEFAULT_SPAN_COST,
                 base_id: str | None = None) -> FiberSpan:
        if span_id in self.spans:
            raise DeviceError(f"duplicate span {span_id!r}")
        if cost <= 0:
            raise DeviceError(f"span {span_id!r} cost must be positive")
        for sw, port in ((from_sw, from_port), (to_sw, to_port)):
            if sw not in self.switches:
                raise DeviceError(f"span {span_id!r} references unknown switch {sw!r}")
            self.switches[sw]._check_port(port)
        if (from_sw, from_port) in self._span_outof:
            raise DeviceError(f"port {from_sw}:{from_port} already feeds a span")
        if (to_sw, to_port) in self._span_into:
            raise DeviceError(f"port {to_sw}:{to_port} already fed by a span")
        if (from_sw, from_port) in self._host_at or (to_sw, to_port) in self._host_at:
            raise DeviceError(f"span {span_id!r} collides with a host attachment")
        span = FiberSpan(span_id, base_id or span_id, from_sw, from_port,
                         to_sw, to_port, cost)
        self.spans[span_id] = span
        self._span_outof[(from_sw, from_port)] = span_id
        self._span_into[(to_sw, to_port)] = span_id
        return span

    def add_host(self, host: str, switch: str, port: int) -> HostPort:
        if host in self.hosts:
            raise DeviceError(f"duplicate host {host!r}")
        if switch not in self.switches:
            raise DeviceError(f"host {host!r} references unknown switch {switch!r}")
        self.switches[switch]._check_port(port)
        key = (switch, port)
        if key in self._host_at or key in self._span_into or key in self._span_outof:
            raise DeviceError(f"port {switch}:{port} already wired")
        hp = HostPort(host, switch, port)
        self.hosts[host] = hp
        self._host_at[key] = host
        self._transmitting.add(host)  # hosts transmit from attach by default
        return hp

    def finish_build(self) -> None:
        self.recompute_light(trigger="init")

    # -------------------------------------------------------------- callbacks

    def set_callbacks(self, *, loss=None, restore=None, lease_expired=None,
                      host_light=None) -> None:
        self._loss_cb = loss or self._loss_cb
        self._restore_cb = restore or self._restore_cb
        self._lease_cb = lease_expired or self._lease_cb
        self._host_light_cb = host_light or self._host_light_cb

    def notify_lease_expired(self, switch: str, path_id: str) -> None:
        if self._lease_cb is not None:
            self._lease_cb(switch, path_id)

    # ------------------------------------------------------------------ spans

    def knows_span(self, span_or_base: str) -> bool:
        return span_or_base in self.spans or any(
            sp.base_id == span_or_base for sp in self.spans.values())

    def resolve_spans(self, span_or_base: str) -> list[FiberSpan]:
        if span_or_base in self.spans:
            return [self.spans[span_or_base]]
        return [self.spans[sid] for sid in sorted(self.spans)
                if self.spans[sid].base_id == span_or_base]

    def set_span_state(self, span_or_base: str, state: str) -> None:
        if state not in ("lit", "cut"):
            raise DeviceError(f"bad span state {state!r}")
        targets = self.resolve_spans(span_or_base)
        if not targets:
            raise DeviceError(f"unknown span {span_or_base!r}")
        changed = []
        for span in targets:
            if span.state == state:
                self.sim.log("span-noop", span.span_id, f"state={state}")
                continue
            span.state = state
            kind = "fiber-cut" if state == "cut" else "fiber-restore"
            self.sim.log(kind, span.span_id,
                         f"from={span.from_sw}:{span.from_port} to={span.to_sw}:{span.to_port}")
            changed.append(span)
        if changed:
            self.recompute_light(trigger="span")
            cb = self._loss_cb if state == "cut" else self._restore_cb
            if cb is not None:
                for span in changed:
                    for sw in sorted({span.from_sw, span.to_sw}):
                        self.sim.schedule(
                            self.sim.now,
                            lambda sw=sw, sid=span.span_id: cb(sw, sid))

    # ------------------------------------------------------------------ light

    def set_host_transmit(self, host: str, on: bool) -> None:
        if host not in self.hosts:
            raise DeviceError(f"unknown host {host!r}")
        if on:
            self._transmitting.add(host)
        else:
            self._transmitting.discard(host)
        self.recompute_light()

    def port_rx(self, switch: str, port: int) -> bool:
        return self._rx.get((switch, port), False)

    def host_delivered_light(self, host: str) -> bool:
        return self._host_light.get(host, False)

    def compute_light_maps(self) -> tuple[dict, dict]:
        """Walk spans + cross-connects from host transmitters; returns (rx, tx)."""
        rx: dict[tuple[str, int], bool] = {}
        tx: dict[tuple[str, int], bool] = {}
        work: list[tuple[str, int]] = []
        for host in sorted(self._transmitting):
            hp = self.hosts[host]
            rx[(hp.switch, hp.port)] = True
            work.append((hp.switch, hp.port))
        while work:
            sw, port = work.pop()
            xc = self.switches[sw].xconns.get(port)
            if xc is not None and not tx.get((sw, xc.out_port), False):
                tx[(sw, xc.out_port)] = True
                sid = self._span_outof.get((sw, xc.out_port))
                if sid is not None:
                    span = self.spans[sid]
                    if span.state == "lit" and not rx.get((span.to_sw, span.to_port), False):
                        rx[(span.to_sw, span.to_port)] = True
                        work.append((span.to_sw, span.to_port))
        return rx, tx

    def recompute_light(self, trigger: str = "xconn") -> None:
        old_rx = self._rx
        rx, tx = self.compute_light_maps()
        self._rx = rx

        transitions = []
        for key in sorted(set(old_rx) | set(rx)):
            before = old_rx.get(key, False)
            after = rx.get(key, False)
            if before != after:
                transitions.append((key, after))
        for (sw, port), lit in transitions:
            self.sim.log("port-lit" if lit else "port-dark", sw, f"port={port}")

        # Loss-of-light alarms are tied to fiber state changes; routine
        # cross-connect churn darkens ports without alarming.
        if trigger == "span":
            for (sw, port), lit in transitions:
                switch = self.switches[sw]
                if not lit and port not in switch.alarms:
                    alarm = AlarmRecord("critical", "loss_of_light", f"{sw}:{port}",
                                        self.sim.now)
                    switch.alarms[port] = alarm
                    self.sim.log("alarm-raise", sw, f"port={port} kind=loss_of_light")
        for (sw, port), lit in transitions:
            switch = self.switches[sw]
            alarm = switch.alarms.get(port)
            if lit and alarm is not None and alarm.kind == "loss_of_light":
                del switch.alarms[port]
                self.sim.log("alarm-clear", sw, f"port={port} kind=loss_of_light")

        for host in sorted(self.hosts):
            hp = self.hosts[host]
            delivered = tx.get((hp.switch, hp.port), False)
            if self._host_light.get(host, False) != delivered:
                self._host_light[host] = delivered
                self.sim.log("host-lit" if delivered else "host-dark", host,
                             f"switch={hp.switch} port={hp.port}")
                if self._host_light_cb is not None:
                    self._host_light_cb(host, delivered)

    # ------------------------------------------------------------- inventory

    def all_owned_connects(self) -> list[tuple[str, CrossConnect]]:
        out = []
        for name in sorted(self.switches):
            for in_port in sorted(self.switches[name].xconns):
                xc = self.switches[name].xconns[in_port]
                if xc.owner_path:
                    out.append((name, xc))
        return out


# ---------------------------------------------------------------- topo files


def parse_topology(text: str) -> dict:
    """Parse the line-oriented topology format into a build spec.

    Directives: `switch <name> ports <n>`, `span <id> <sw>:<port> -> <sw>:<port>
    [cost <c>]` (duplex sugar `<->` expands to `<id>.fwd` and `<id>.rev`), and
    `host <name> attached <sw>:<port>`.
    """
    switches: list[tuple[str, int]] = []
    spans: list[tuple] = []
    hosts: list[tuple[str, str, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            if tokens[0] == "switch":
                if len(tokens) != 4 or tokens[2] != "ports":
                    raise ValueError("expected: switch <name> ports <n>")
                switches.append((tokens[1], int(tokens[3])))
            elif tokens[0] == "span":
                spans.extend(_parse_span(tokens))
            elif tokens[0] == "host":
                if len(tokens) != 4 or tokens[2] != "attached":
                    raise ValueError("expected: host <name> attached <sw>:<port>")
                sw, port = _parse_port_ref(tokens[3])
                hosts.append((tokens[1], sw, port))
            else:
                raise ValueError(f"unknown directive {tokens[0]!r}")
        except ValueError as exc:
            raise TopologyParseError(lineno, str(exc)) from None
    return {"switches": switches, "spans": spans, "hosts": hosts}


def _parse_span(tokens: list[str]) -> list[tuple]:
    if len(tokens) not in (5, 7):
        raise ValueError("expected: span <id> <sw>:<port> -> <sw>:<port> [cost <c>]")
    span_id = tokens[1]
    a_sw, a_port = _parse_port_ref(tokens[2])
    arrow = tokens[3]
    b_sw, b_port = _parse_port_ref(tokens[4])
    cost = DEFAULT_SPAN_COST
    if len(tokens) == 7:
        if tokens[5] != "cost":
            raise ValueError(f"expected 'cost', got {tokens[5]!r}")
        cost = float(tokens[6])
        if cost <= 0:
            raise ValueError("cost must be positive")
    if arrow == "->":
        return [(span_id, span_id, a_sw, a_port, b_sw, b_port, cost)]
    if arrow == "<->":
        return [
            (f"{span_id}.fwd", span_id, a_sw, a_port, b_sw, b_port, cost),
            (f"{span_id}.rev", span_id, b_sw, b_port, a_sw, a_port, cost),
        ]
    raise ValueError(f"expected '->' or '<->', got {arrow!r}")


def _parse_port_ref(token: str) -> tuple[str, int]:
    if ":" not in token:
        raise ValueError(f"expected <switch>:<port>, got {token!r}")
    sw, _, port = token.rpartition(":")
    return sw, int(port)


def load_topology(text: str, sim: Simulation) -> DeviceNetwork:
    spec = parse_topology(text)
    net = DeviceNetwork(sim)
    populate_network(net, spec)
    return net


def populate_network(net: DeviceNetwork, spec: dict) -> None:
    for name, ports in spec["switches"]:
        net.add_switch(name, ports)
    for span_id, base_id, a_sw, a_port, b_sw, b_port, cost in spec["spans"]:
        net.add_span(span_id, a_sw, a_port, b_sw, b_port, cost, base_id=base_id)
    for host, sw, port in spec["hosts"]:
        net.add_host(host, sw, port)
    net.finish_build()
