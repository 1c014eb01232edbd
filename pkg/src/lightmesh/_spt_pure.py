"""Pure-Python shortest-path-tree kernel.

Shares its array contract and tie-breaking rules with the compiled kernel
in _spt_core.pyx: vertices and edges are pre-sorted by id, so index order
is lexicographic order, and both kernels must produce bit-identical
output for the same inputs.
"""

from __future__ import annotations

import heapq

INF = float("inf")


def dijkstra(n: int, indptr, edge_dst, edge_cost, edge_rank, root: int):
    """Single-source shortest paths over a CSR digraph with positive costs.

    Ties resolve by smallest (distance, parent vertex index, edge rank).
    Returns (dist, parent_vertex, parent_edge_rank) lists; unreachable
    vertices carry (inf, -1, -1).
    """
    dist = [INF] * n
    parent_v = [-1] * n
    parent_e = [-1] * n
    done = [False] * n
    dist[root] = 0.0
    heap = [(0.0, root)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u] or d > dist[u]:
            continue
        done[u] = True
        for k in range(indptr[u], indptr[u + 1]):
            v = edge_dst[k]
            if done[v]:
                continue
            nd = d + edge_cost[k]
            if nd < dist[v]:
                dist[v] = nd
                parent_v[v] = u
                parent_e[v] = edge_rank[k]
                heapq.heappush(heap, (nd, v))
            elif nd == dist[v] and (u, edge_rank[k]) < (parent_v[v], parent_e[v]):
                parent_v[v] = u
                parent_e[v] = edge_rank[k]
    return dist, parent_v, parent_e
