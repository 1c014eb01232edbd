from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

from lightmesh.harness import Harness, SimConfig

SCENARIO_DIR = Path(__file__).parent.parent / "scenarios"

LINE3_TOPO = """
switch a ports 4
switch b ports 4
switch c ports 4
span ab a:1 <-> b:1 cost 1
span bc b:2 <-> c:1 cost 1
host h1 attached a:3
host h2 attached c:3
"""

DUAL_ROUTE_TOPO = """
switch caltech ports 8
switch chicago ports 8
switch newyork ports 8
switch geneva ports 8
span us-chi caltech:1 <-> chicago:1 cost 1
span us-ny  caltech:2 <-> newyork:1 cost 2
span atl-chi chicago:2 <-> geneva:1 cost 1
span atl-ny  newyork:2 <-> geneva:2 cost 2
host caltech-disk attached caltech:5
host cern-disk attached geneva:5
"""


def linear_topology(n: int) -> str:
    """n switches in a line, hosts on both ends."""
    lines = [f"switch s{i:02d} ports 6" for i in range(n)]
    for i in range(n - 1):
        lines.append(f"span l{i:02d} s{i:02d}:2 <-> s{i + 1:02d}:1 cost 1")
    lines.append("host left attached s00:5")
    lines.append(f"host right attached s{n - 1:02d}:5")
    return "\n".join(lines)


def mesh5_topology() -> str:
    """5-switch mesh with parallel paths and a host per switch."""
    lines = [f"switch m{i} ports 10" for i in range(5)]
    links = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2), (1, 3)]
    for k, (i, j) in enumerate(links):
        lines.append(f"span e{k} m{i}:{k + 1} <-> m{j}:{k + 1} cost 1")
    for i in range(5):
        lines.append(f"host host{i} attached m{i}:9")
    return "\n".join(lines)


@pytest.fixture
def line3() -> Harness:
    return Harness(LINE3_TOPO, SimConfig(seed=3))


@pytest.fixture
def dual_route() -> Harness:
    return Harness(DUAL_ROUTE_TOPO, SimConfig(seed=5))
