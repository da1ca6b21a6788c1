"""Pure-Python reference kernels.

These mirror ``_ckernels.pyx`` line for line so both backends return
bit-identical results (same heap order, same tie-breaking).
"""

from heapq import heappop, heappush
from math import exp, lgamma, log

INF = 1 << 62


def successive_shortest_paths(n, tail, head, cost, res_fwd, res_bwd, source, sink, demand):
    """Route up to ``demand`` units from ``source`` to ``sink`` at minimum cost.

    Every arc with positive residual capacity must have a non-negative cost on
    entry (forward arcs use ``cost[e]``, backward arcs ``-cost[e]``).
    ``res_fwd`` and ``res_bwd`` are updated in place.  Returns the amount
    routed.
    """
    m = len(tail)
    adj = [[] for _ in range(n)]
    for e in range(m):
        adj[tail[e]].append(2 * e)
        adj[head[e]].append(2 * e + 1)

    pot = [0] * n
    routed = 0
    while routed < demand:
        dist = [INF] * n
        parent = [-1] * n
        done = [False] * n
        dist[source] = 0
        heap = [(0, source)]
        while heap:
            d, u = heappop(heap)
            if done[u]:
                continue
            done[u] = True
            if u == sink:
                break
            pu = pot[u]
            for a in adj[u]:
                e = a >> 1
                if a & 1:
                    v = tail[e]
                    r = res_bwd[e]
                    c = -cost[e]
                else:
                    v = head[e]
                    r = res_fwd[e]
                    c = cost[e]
                if r <= 0 or done[v]:
                    continue
                nd = d + c + pu - pot[v]
                if nd < dist[v]:
                    dist[v] = nd
                    parent[v] = a
                    heappush(heap, (nd, v))
        dt = dist[sink]
        if dt >= INF:
            break
        for v in range(n):
            dv = dist[v]
            pot[v] += dv if dv < dt else dt

        push = demand - routed
        v = sink
        while v != source:
            a = parent[v]
            e = a >> 1
            if a & 1:
                r = res_bwd[e]
                v = head[e]
            else:
                r = res_fwd[e]
                v = tail[e]
            if r < push:
                push = r
        v = sink
        while v != source:
            a = parent[v]
            e = a >> 1
            if a & 1:
                res_bwd[e] -= push
                res_fwd[e] += push
                v = head[e]
            else:
                res_fwd[e] -= push
                res_bwd[e] += push
                v = tail[e]
        routed += push
    return routed


def theta(n, lam):
    """Expected value of min(n, X) for X ~ Poisson(lam)."""
    if n <= 0 or lam <= 0.0:
        return 0.0
    log_lam = log(lam)
    acc = 0.0
    for i in range(n):
        acc += (n - i) * exp(i * log_lam - lam - lgamma(i + 1.0))
    return n - acc
