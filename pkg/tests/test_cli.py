"""CLI batch runs, determinism, rendering, and the interactive shell."""

from __future__ import annotations

from pathlib import Path

import pytest

from lightmesh.cli import execute_command, main, render_topology
from lightmesh.harness import Harness, SimConfig
from lightmesh.agent import DEFAULT_TOKEN

from conftest import DUAL_ROUTE_TOPO, LINE3_TOPO, SCENARIO_DIR


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


def test_run_bundled_scenario_exit_zero(tmp_path, capsys):
    trace = tmp_path / "trace.tsv"
    metrics = tmp_path / "metrics.txt"
    rc = main(["--topology", str(SCENARIO_DIR / "transatlantic.topo"),
               "--scenario", str(SCENARIO_DIR / "four-cuts.scen"),
               "--seed", "7", "--trace", str(trace),
               "--metrics", str(metrics)])
    assert rc == 0
    out = metrics.read_text()
    assert "reroutes=4\n" in out
    assert "flow_alive.f-agent-caltech/1=true" in out
    assert trace.read_text().startswith("0\t")


def test_same_inputs_identical_trace_bytes(tmp_path):
    outs = []
    for name in ("one.tsv", "two.tsv"):
        rc = main(["--topology", str(SCENARIO_DIR / "transatlantic.topo"),
                   "--scenario", str(SCENARIO_DIR / "four-cuts.scen"),
                   "--seed", "99", "--trace", str(tmp_path / name)])
        assert rc == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]


def test_failed_expectation_sets_exit_code(tmp_path, capsys):
    topo = write(tmp_path, "t.topo", LINE3_TOPO)
    scen = write(tmp_path, "s.scen", "expect commits == 5\n")
    rc = main(["--topology", topo, "--scenario", scen])
    assert rc == 1
    assert "FAILED" in capsys.readouterr().err


def test_topology_parse_error_reported_with_line(tmp_path, capsys):
    topo = write(tmp_path, "bad.topo", "switch a ports 4\nswidge b\n")
    rc = main(["--topology", topo])
    assert rc == 2
    assert "line 2" in capsys.readouterr().err


def test_scenario_parse_error_fatal(tmp_path, capsys):
    topo = write(tmp_path, "t.topo", LINE3_TOPO)
    scen = write(tmp_path, "s.scen", "at 5 sabotage everything\n")
    rc = main(["--topology", topo, "--scenario", scen])
    assert rc == 2
    assert "line 1" in capsys.readouterr().err


def test_missing_topology_file(capsys):
    rc = main(["--topology", "/nonexistent.topo"])
    assert rc == 2


def test_empty_scenario_exit_zero(tmp_path):
    topo = write(tmp_path, "t.topo", LINE3_TOPO)
    rc = main(["--topology", topo])
    assert rc == 0


# ------------------------------------------------------------------ rendering


def test_render_topology_stable_and_sorted():
    h1 = Harness(DUAL_ROUTE_TOPO, SimConfig(seed=1))
    h2 = Harness(DUAL_ROUTE_TOPO, SimConfig(seed=1))
    for h in (h1, h2):
        h.submit_and_wait("caltech-disk", "cern-disk")
    r1 = render_topology(h1.reference_graph(), h1.all_records())
    r2 = render_topology(h2.reference_graph(), h2.all_records())
    assert r1 == r2
    lines = r1.splitlines()
    assert lines[0] == "switch caltech"
    span_lines = [l for l in lines if l.startswith("span ")]
    assert span_lines == sorted(span_lines)
    assert any(l.startswith("circuit agent-caltech/1 active") for l in lines)


def test_render_shows_cut_state():
    h = Harness(DUAL_ROUTE_TOPO, SimConfig(seed=1))
    h.inject_now("fiber_cut", "atl-chi")
    out = render_topology(h.reference_graph(), h.all_records())
    assert "span atl-chi.fwd chicago:2 -> geneva:1 cost 1 cut" in out


# ---------------------------------------------------------------------- shell


@pytest.fixture
def shell(tmp_path):
    h = Harness(LINE3_TOPO, SimConfig(seed=6))
    return h


def run_cmd(h, line, token=DEFAULT_TOKEN):
    return execute_command(h, line, token)


def test_shell_path_create_prints_hops(shell):
    out = run_cmd(shell, "path create h1 h2")
    assert out.startswith("path agent-a/1")
    assert "a:3:1" in out and "b:1:2" in out and "c:1:3" in out


def test_shell_path_create_bad_token(shell):
    out = run_cmd(shell, "path create h1 h2", token="intruder")
    assert out == "request rejected: auth"


def test_shell_path_list_and_teardown(shell):
    run_cmd(shell, "path create h1 h2")
    out = run_cmd(shell, "path list")
    assert "agent-a/1 active" in out
    out = run_cmd(shell, "path teardown agent-a/1")
    assert out == "torn down agent-a/1"
    assert "torn_down" in run_cmd(shell, "path list")


def test_shell_topo_show_after_cut(shell):
    run_cmd(shell, "cut ab")
    out = run_cmd(shell, "topo show")
    assert "span ab.fwd a:1 -> b:1 cost 1 cut" in out


def test_shell_discover(shell):
    out = run_cmd(shell, "discover optical-agents")
    assert out.splitlines() == [
        "agent-a kind=agent groups=optical-agents",
        "agent-b kind=agent groups=optical-agents",
        "agent-c kind=agent groups=optical-agents",
    ]
    assert run_cmd(shell, "discover nothing-here") == "no services"


def test_shell_step_advances_clock(shell):
    t0 = shell.sim.now
    out = run_cmd(shell, "step 250")
    assert out == f"t={t0 + 250}"


def test_shell_unknown_command_usage(shell):
    out = run_cmd(shell, "make me a sandwich")
    assert "commands:" in out
    assert run_cmd(shell, "step banana").startswith("error:")
    assert run_cmd(shell, "cut no-such-span").startswith("error:")


def test_shell_restore(shell):
    run_cmd(shell, "cut ab")
    out = run_cmd(shell, "restore ab")
    assert out.startswith("restored ab")
    assert "span ab.fwd a:1 -> b:1 cost 1 lit" in run_cmd(shell, "topo show")
