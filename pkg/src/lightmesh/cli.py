"""Command-line entry point.

Batch mode loads a topology plus an optional scenario, runs the
deterministic simulation, writes the trace and a metrics summary, and
exits 0 iff every `expect` assertion in the scenario holds.  Interactive
mode layers an operator shell over the same scheduler; nothing advances
except through shell commands.
"""

from __future__ import annotations

import argparse
import sys

from .agent import DEFAULT_TOKEN, LightpathRecord
from .device import TopologyParseError
from .harness import Harness, ScenarioError, SimConfig, evaluate_expectations
from .metrics import compute_metrics, render_metrics
from .topology import SPT_BACKEND, TopoGraph

SHELL_USAGE = """commands:
  path create <src-host> <dst-host>   provision a lightpath
  path list                           list known lightpaths
  path teardown <path-id>             tear a lightpath down
  topo show                           render the topology and circuits
  discover <group>                    query the lookup registry
  cut <span>                          cut a fiber span now
  restore <span>                      restore a fiber span now
  step <ms>                           advance simulated time
  quit                                leave the shell"""


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="lightmesh",
        description="deterministic optical circuit provisioning simulator")
    p.add_argument("--topology", required=True, help="topology file")
    p.add_argument("--scenario", help="scenario file")
    p.add_argument("--seed", type=int, default=0, help="simulation seed")
    p.add_argument("--trace", help="trace output file ('-' for stdout)")
    p.add_argument("--metrics", help="metrics output file ('-' for stdout)")
    p.add_argument("--tcp-budget-ms", type=int, default=2_000,
                   help="flow timeout budget in simulated ms")
    p.add_argument("--settle-ms", type=int, default=15_000,
                   help="simulated ms to run past the last scenario event")
    p.add_argument("--interactive", action="store_true",
                   help="drop into the command shell")
    p.add_argument("--token", default=DEFAULT_TOKEN,
                   help="capability token presented with path commands")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.topology, "r", encoding="utf-8") as fh:
            topo_text = fh.read()
    except OSError as exc:
        print(f"lightmesh: cannot read topology: {exc}", file=sys.stderr)
        return 2
    cfg = SimConfig(seed=args.seed, tcp_budget_ms=args.tcp_budget_ms,
                    settle_ms=args.settle_ms)
    try:
        harness = Harness(topo_text, cfg)
    except TopologyParseError as exc:
        print(f"lightmesh: {args.topology}: {exc}", file=sys.stderr)
        return 2

    if args.scenario:
        try:
            with open(args.scenario, "r", encoding="utf-8") as fh:
                scenario_text = fh.read()
        except OSError as exc:
            print(f"lightmesh: cannot read scenario: {exc}", file=sys.stderr)
            return 2
        try:
            harness.load_scenario(scenario_text)
        except ScenarioError as exc:
            print(f"lightmesh: {args.scenario}: {exc}", file=sys.stderr)
            return 2

    if args.interactive:
        shell_loop(harness, args.token)
        return 0

    harness.run()
    metrics = compute_metrics(harness.sim.trace)
    _write_output(args.trace, harness.sim.trace_lines())
    _write_output(args.metrics, render_metrics(metrics))
    failures = evaluate_expectations(harness.expectations, metrics)
    for failure in failures:
        print(f"lightmesh: FAILED {failure}", file=sys.stderr)
    if not failures:
        print(f"lightmesh: ok seed={args.seed} backend={SPT_BACKEND} "
              f"commits={metrics['commits']} reroutes={metrics['reroutes']} "
              f"flows_alive={metrics['flows_alive']}")
    return 1 if failures else 0


def _write_output(dest: str | None, text: str) -> None:
    if dest is None:
        return
    if dest == "-":
        sys.stdout.write(text)
    else:
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(text)


def render_topology(graph: TopoGraph, circuits: list[LightpathRecord]) -> str:
    """Stable textual rendering of a graph snapshot plus active circuits."""
    lines = []
    for v in sorted(graph.vertices):
        lines.append(f"switch {v}")
    for span_id in sorted(graph.edges):
        e = graph.edges[span_id]
        lines.append(f"span {span_id} {e.src}:{e.from_port} -> {e.dst}:{e.to_port} "
                     f"cost {e.cost:g} {e.state}")
    for record in circuits:
        lines.append(f"circuit {record.path_id} {record.state} "
                     f"{record.route.encode()}")
    return "\n".join(lines)


def execute_command(harness: Harness, line: str, token: str) -> str:
    tokens = line.split()
    if not tokens:
        return ""
    cmd = tokens[0]
    if cmd == "path":
        return _path_command(harness, tokens[1:], token)
    if cmd == "topo" and tokens[1:] == ["show"]:
        return render_topology(harness.reference_graph(), harness.all_records())
    if cmd == "discover" and len(tokens) == 2:
        found = harness.registry.discover(tokens[1])
        if not found:
            return "no services"
        return "\n".join(f"{d.node} kind={d.kind} groups={','.join(d.groups)}"
                         for d in found)
    if cmd == "cut" and len(tokens) == 2:
        try:
            harness.inject_now("fiber_cut", tokens[1])
        except Exception as exc:  # noqa: BLE001 - report to the operator
            return f"error: {exc}"
        return f"cut {tokens[1]} t={harness.sim.now}"
    if cmd == "restore" and len(tokens) == 2:
        try:
            harness.inject_now("fiber_restore", tokens[1])
        except Exception as exc:  # noqa: BLE001
            return f"error: {exc}"
        return f"restored {tokens[1]} t={harness.sim.now}"
    if cmd == "step" and len(tokens) == 2:
        try:
            ms = int(tokens[1])
        except ValueError:
            return f"error: bad step {tokens[1]!r}"
        harness.step(ms)
        return f"t={harness.sim.now}"
    if cmd in ("quit", "exit"):
        return "bye"
    return SHELL_USAGE


def _path_command(harness: Harness, tokens: list[str], token: str) -> str:
    if len(tokens) == 3 and tokens[0] == "create":
        src, dst = tokens[1], tokens[2]
        if src not in harness.clients:
            return f"error: unknown host {src!r}"
        reply = harness.submit_and_wait(src, dst, token)
        if reply is None:
            return "error: no reply"
        if reply.status == "committed":
            hops = " ".join(f"{sw}:{p_in}:{p_out}" for sw, p_in, p_out in reply.hops)
            return f"path {reply.path_id}\n  hops: {hops}"
        return f"request rejected: {reply.reason}"
    if tokens == ["list"]:
        records = harness.all_records()
        if not records:
            return "no paths"
        return "\n".join(f"{r.path_id} {r.state} {r.route.encode()}"
                         for r in records)
    if len(tokens) == 2 and tokens[0] == "teardown":
        reply = harness.teardown_and_wait(tokens[1], token)
        if reply is None:
            return f"error: unknown path {tokens[1]!r}"
        if reply.status == "torn-down":
            return f"torn down {tokens[1]}"
        return f"teardown rejected: {reply.reason}"
    return SHELL_USAGE


def shell_loop(harness: Harness, token: str) -> None:
    print(f"lightmesh shell (backend={SPT_BACKEND}); 'quit' to leave")
    while True:
        try:
            line = input("lightmesh> ")
        except EOFError:
            break
        out = execute_command(harness, line, token)
        if out:
            print(out)
        if out == "bye":
            break


if __name__ == "__main__":
    sys.exit(main())
