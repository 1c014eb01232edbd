"""Per-agent network view: directed cost graph, link-state updates,
shortest-path trees, and route extraction.

The SPT computation runs on one of two interchangeable kernels: a
compiled Cython kernel when the extension built, otherwise a pure-Python
twin (force the latter with LIGHTMESH_PURE_SPT=1).  Both resolve
equal-cost ties identically — by (cost, lexicographic vertex id,
lexicographic span id) — so results never depend on the backend.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable, NamedTuple

from . import _spt_pure

if os.environ.get("LIGHTMESH_PURE_SPT") == "1":
    _core = None
else:
    try:
        from . import _spt_core as _core
    except ImportError:
        _core = None

if _core is not None:
    import numpy as _np

SPT_BACKEND = "compiled" if _core is not None else "pure"


class RouteError(Exception):
    """Route extraction failed; .reason is one of unreachable, port-dark,
    port-busy, bad-endpoint."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass
class EdgeRec:
    span_id: str
    src: str
    dst: str
    cost: float
    state: str = "lit"
    from_port: int = 0
    to_port: int = 0


@dataclass(frozen=True)
class LinkStateUpdate:
    origin: str
    origin_seq: int
    span_id: str
    state: str
    cost: float


class Hop(NamedTuple):
    switch: str
    in_port: int
    out_port: int


@dataclass(frozen=True)
class Route:
    hops: tuple  # of Hop
    spans: tuple  # span ids in travel order
    total_cost: float

    def hop_for(self, switch: str) -> Hop | None:
        for hop in self.hops:
            if hop.switch == switch:
                return hop
        return None

    def switches(self) -> tuple:
        return tuple(h.switch for h in self.hops)

    def ports(self) -> frozenset:
        out = set()
        for hop in self.hops:
            out.add((hop.switch, hop.in_port))
            out.add((hop.switch, hop.out_port))
        return frozenset(out)

    def encode(self) -> str:
        return ",".join(f"{h.switch}:{h.in_port}:{h.out_port}" for h in self.hops)


@dataclass(frozen=True)
class Endpoint:
    host: str
    switch: str
    port: int


@dataclass
class ShortestPathTree:
    root: str
    parent: dict  # vertex -> (parent vertex, span_id)
    dist: dict  # vertex -> cost

    def span_path(self, dst: str) -> list[str] | None:
        """Span ids along the tree from root to dst, or None if unreachable."""
        if dst not in self.dist:
            return None
        spans: list[str] = []
        v = dst
        while v != self.root:
            p, span = self.parent[v]
            spans.append(span)
            v = p
        spans.reverse()
        return spans


class TopoGraph:
    def __init__(self) -> None:
        self.vertices: dict[str, None] = {}
        self.edges: dict[str, EdgeRec] = {}
        self.version = 0
        self._applied: dict[str, tuple[int, str]] = {}  # span -> (seq, origin)
        self._held: dict[str, list[LinkStateUpdate]] = {}
        self._cache_version = -1
        self._cache: tuple | None = None

    def add_vertex(self, name: str) -> None:
        if name not in self.vertices:
            self.vertices[name] = None
            self.version += 1

    def add_span(self, span_id: str, src: str, dst: str, cost: float,
                 state: str = "lit", from_port: int = 0, to_port: int = 0) -> None:
        if span_id in self.edges:
            raise ValueError(f"duplicate span {span_id!r}")
        if cost <= 0:
            raise ValueError(f"span {span_id!r} cost must be positive")
        self.add_vertex(src)
        self.add_vertex(dst)
        self.edges[span_id] = EdgeRec(span_id, src, dst, cost, state, from_port, to_port)
        self.version += 1
        for update in self._held.pop(span_id, ()):
            self.apply_update(update)

    def apply_update(self, u: LinkStateUpdate) -> tuple[str, ...]:
        """Apply a link-state update; returns the changed span ids.

        Convergence rule: per span, the update with the greatest
        (origin_seq, origin) wins regardless of arrival order, and each
        (origin, origin_seq) is applied at most once.
        """
        edge = self.edges.get(u.span_id)
        if edge is None:
            self._held.setdefault(u.span_id, []).append(u)
            return ()
        key = (u.origin_seq, u.origin)
        cur = self._applied.get(u.span_id)
        if cur is not None and key <= cur:
            return ()
        self._applied[u.span_id] = key
        if edge.state == u.state and edge.cost == u.cost:
            return ()
        edge.state = u.state
        edge.cost = u.cost
        self.version += 1
        return (u.span_id,)

    # ---------------------------------------------------------------- arrays

    def _index_arrays(self) -> tuple:
        if self._cache_version == self.version and self._cache is not None:
            return self._cache
        verts = sorted(self.vertices)
        vidx = {v: i for i, v in enumerate(verts)}
        span_ids = sorted(self.edges)
        lit = [self.edges[s] for s in span_ids if self.edges[s].state == "lit"]
        rank = {s: i for i, s in enumerate(span_ids)}
        buckets: list[list[EdgeRec]] = [[] for _ in verts]
        for e in lit:  # lit spans iterate in span-id order, keeping ranks sorted
            buckets[vidx[e.src]].append(e)
        indptr = [0]
        edge_dst: list[int] = []
        edge_cost: list[float] = []
        edge_rank: list[int] = []
        for b in buckets:
            for e in b:
                edge_dst.append(vidx[e.dst])
                edge_cost.append(e.cost)
                edge_rank.append(rank[e.span_id])
            indptr.append(len(edge_dst))
        if _core is not None:
            arrays = (
                _np.asarray(indptr, dtype=_np.int32),
                _np.asarray(edge_dst, dtype=_np.int32),
                _np.asarray(edge_cost, dtype=_np.float64),
                _np.asarray(edge_rank, dtype=_np.int32),
            )
        else:
            arrays = (indptr, edge_dst, edge_cost, edge_rank)
        self._cache = (verts, vidx, span_ids, arrays)
        self._cache_version = self.version
        return self._cache


def compute_spt(graph: TopoGraph, root: str) -> ShortestPathTree:
    """Shortest-path tree from root over lit spans, deterministic under ties."""
    if root not in graph.vertices:
        raise ValueError(f"root {root!r} not in graph")
    verts, vidx, span_ids, arrays = graph._index_arrays()
    kernel = _core.dijkstra if _core is not None else _spt_pure.dijkstra
    dist, parent_v, parent_e = kernel(len(verts), *arrays, vidx[root])
    out_dist = {}
    out_parent = {}
    for i, v in enumerate(verts):
        if dist[i] == float("inf"):
            continue
        out_dist[v] = dist[i]
        if parent_v[i] >= 0:
            out_parent[v] = (verts[parent_v[i]], span_ids[parent_e[i]])
    return ShortestPathTree(root, out_parent, out_dist)


def extract_route(tree: ShortestPathTree, graph: TopoGraph,
                  src: Endpoint, dst: Endpoint, *,
                  port_free: Callable[[str, int], bool] | None = None,
                  src_lit: Callable[[], bool] | None = None) -> Route:
    """Turn the tree path between two endpoints into per-switch hops.

    Raises RouteError: unreachable when dst is not in the tree, port-dark
    when the source endpoint carries no light, port-busy when any needed
    port fails the availability check.
    """
    if tree.root != src.switch:
        raise RouteError("bad-endpoint", f"tree rooted at {tree.root}, src on {src.switch}")
    if src_lit is not None and not src_lit():
        raise RouteError("port-dark", f"{src.switch}:{src.port}")
    if dst.switch == src.switch:
        hops = (Hop(src.switch, src.port, dst.port),)
        route = Route(hops, (), 0.0)
        _check_ports(route, port_free)
        return route
    spans = tree.span_path(dst.switch)
    if spans is None:
        raise RouteError("unreachable", dst.switch)
    hops = []
    in_port = src.port
    sw = src.switch
    total = 0.0
    for span_id in spans:
        edge = graph.edges[span_id]
        hops.append(Hop(sw, in_port, edge.from_port))
        total += edge.cost
        sw = edge.dst
        in_port = edge.to_port
    hops.append(Hop(dst.switch, in_port, dst.port))
    route = Route(tuple(hops), tuple(spans), total)
    _check_ports(route, port_free)
    return route


def _check_ports(route: Route, port_free) -> None:
    if port_free is None:
        return
    for sw, port in sorted(route.ports()):
        if not port_free(sw, port):
            raise RouteError("port-busy", f"{sw}:{port}")


def graph_from_network_spec(spec: dict) -> TopoGraph:
    """Build a fresh graph from a parsed topology file spec."""
    g = TopoGraph()
    for name, _ports in spec["switches"]:
        g.add_vertex(name)
    for span_id, _base, a_sw, a_port, b_sw, b_port, cost in spec["spans"]:
        g.add_span(span_id, a_sw, b_sw, cost, from_port=a_port, to_port=b_port)
    return g
