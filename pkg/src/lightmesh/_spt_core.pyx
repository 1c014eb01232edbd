# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled shortest-path-tree kernel.

Mirrors _spt_pure.dijkstra exactly: same CSR contract, same
(distance, parent vertex index, edge rank) tie-breaking, bit-identical
results.  Exists because exhaustive routing verification sweeps millions
of small graphs through this function.
"""

import numpy as np

cimport cython

DEF INF = 1e308


@cython.boundscheck(False)
@cython.wraparound(False)
def dijkstra(int n, int[::1] indptr, int[::1] edge_dst,
             double[::1] edge_cost, int[::1] edge_rank, int root):
    dist_arr = np.full(n, np.inf, dtype=np.float64)
    pv_arr = np.full(n, -1, dtype=np.int32)
    pe_arr = np.full(n, -1, dtype=np.int32)
    done_arr = np.zeros(n, dtype=np.int8)
    heap_d_arr = np.zeros(4 * n + 4, dtype=np.float64)
    heap_v_arr = np.zeros(4 * n + 4, dtype=np.int32)

    cdef double[::1] dist = dist_arr
    cdef int[::1] pv = pv_arr
    cdef int[::1] pe = pe_arr
    cdef signed char[::1] done = done_arr
    cdef double[::1] heap_d = heap_d_arr
    cdef int[::1] heap_v = heap_v_arr

    cdef int heap_len = 0
    cdef int heap_cap = heap_d_arr.shape[0]
    cdef int u, v, k, i, child, parent
    cdef double d, nd, td
    cdef int tv

    dist[root] = 0.0
    heap_d[0] = 0.0
    heap_v[0] = root
    heap_len = 1

    while heap_len > 0:
        d = heap_d[0]
        u = heap_v[0]
        heap_len -= 1
        heap_d[0] = heap_d[heap_len]
        heap_v[0] = heap_v[heap_len]
        i = 0
        while True:
            child = 2 * i + 1
            if child >= heap_len:
                break
            if child + 1 < heap_len and _less(heap_d[child + 1], heap_v[child + 1],
                                              heap_d[child], heap_v[child]):
                child += 1
            if _less(heap_d[child], heap_v[child], heap_d[i], heap_v[i]):
                heap_d[i], heap_d[child] = heap_d[child], heap_d[i]
                heap_v[i], heap_v[child] = heap_v[child], heap_v[i]
                i = child
            else:
                break

        if done[u] or d > dist[u]:
            continue
        done[u] = 1
        for k in range(indptr[u], indptr[u + 1]):
            v = edge_dst[k]
            if done[v]:
                continue
            nd = d + edge_cost[k]
            if nd < dist[v]:
                dist[v] = nd
                pv[v] = u
                pe[v] = edge_rank[k]
                if heap_len >= heap_cap:
                    heap_d_arr = np.resize(heap_d_arr, 2 * heap_cap)
                    heap_v_arr = np.resize(heap_v_arr, 2 * heap_cap)
                    heap_d = heap_d_arr
                    heap_v = heap_v_arr
                    heap_cap = 2 * heap_cap
                i = heap_len
                heap_d[i] = nd
                heap_v[i] = v
                heap_len += 1
                while i > 0:
                    parent = (i - 1) // 2
                    if _less(heap_d[i], heap_v[i], heap_d[parent], heap_v[parent]):
                        heap_d[i], heap_d[parent] = heap_d[parent], heap_d[i]
                        heap_v[i], heap_v[parent] = heap_v[parent], heap_v[i]
                        i = parent
                    else:
                        break
            elif nd == dist[v]:
                if u < pv[v] or (u == pv[v] and edge_rank[k] < pe[v]):
                    pv[v] = u
                    pe[v] = edge_rank[k]

    return dist_arr.tolist(), pv_arr.tolist(), pe_arr.tolist()


cdef inline bint _less(double d1, int v1, double d2, int v2) nogil:
    if d1 != d2:
        return d1 < d2
    return v1 < v2
