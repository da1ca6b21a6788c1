# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; see ``_pykernels`` for the reference semantics."""

from libc.math cimport exp, lgamma, log
from libc.stdlib cimport free, malloc
from libc.stdint cimport int64_t

cdef int64_t INF = (<int64_t>1) << 62


cdef inline bint _less(int64_t d1, Py_ssize_t v1, int64_t d2, Py_ssize_t v2) nogil:
    return d1 < d2 or (d1 == d2 and v1 < v2)


cdef void _push(int64_t* hd, Py_ssize_t* hv, Py_ssize_t* size, int64_t d, Py_ssize_t v) nogil:
    cdef Py_ssize_t i = size[0]
    cdef Py_ssize_t p
    size[0] += 1
    while i > 0:
        p = (i - 1) >> 1
        if _less(d, v, hd[p], hv[p]):
            hd[i] = hd[p]
            hv[i] = hv[p]
            i = p
        else:
            break
    hd[i] = d
    hv[i] = v


cdef void _pop(int64_t* hd, Py_ssize_t* hv, Py_ssize_t* size, int64_t* d, Py_ssize_t* v) nogil:
    d[0] = hd[0]
    v[0] = hv[0]
    size[0] -= 1
    cdef Py_ssize_t n = size[0]
    if n == 0:
        return
    cdef int64_t ld = hd[n]
    cdef Py_ssize_t lv = hv[n]
    cdef Py_ssize_t i = 0
    cdef Py_ssize_t c
    while True:
        c = 2 * i + 1
        if c >= n:
            break
        if c + 1 < n and _less(hd[c + 1], hv[c + 1], hd[c], hv[c]):
            c += 1
        if _less(hd[c], hv[c], ld, lv):
            hd[i] = hd[c]
            hv[i] = hv[c]
            i = c
        else:
            break
    hd[i] = ld
    hv[i] = lv


def successive_shortest_paths(Py_ssize_t n, tail, head, cost, res_fwd, res_bwd,
                              Py_ssize_t source, Py_ssize_t sink, int64_t demand):
    cdef Py_ssize_t m = len(tail)
    cdef Py_ssize_t e, a, u, v, k, i
    cdef int64_t d, nd, c, r, push, dt, dv, pu, routed = 0

    cdef Py_ssize_t* t_ = <Py_ssize_t*> malloc(m * sizeof(Py_ssize_t) + 1)
    cdef Py_ssize_t* h_ = <Py_ssize_t*> malloc(m * sizeof(Py_ssize_t) + 1)
    cdef int64_t* c_ = <int64_t*> malloc(m * sizeof(int64_t) + 1)
    cdef int64_t* rf = <int64_t*> malloc(m * sizeof(int64_t) + 1)
    cdef int64_t* rb = <int64_t*> malloc(m * sizeof(int64_t) + 1)
    cdef Py_ssize_t* start = <Py_ssize_t*> malloc((n + 1) * sizeof(Py_ssize_t))
    cdef Py_ssize_t* fill = <Py_ssize_t*> malloc((n + 1) * sizeof(Py_ssize_t))
    cdef Py_ssize_t* adj = <Py_ssize_t*> malloc(2 * m * sizeof(Py_ssize_t) + 1)
    cdef int64_t* pot = <int64_t*> malloc(n * sizeof(int64_t) + 1)
    cdef int64_t* dist = <int64_t*> malloc(n * sizeof(int64_t) + 1)
    cdef Py_ssize_t* parent = <Py_ssize_t*> malloc(n * sizeof(Py_ssize_t) + 1)
    cdef char* done = <char*> malloc(n + 1)
    cdef Py_ssize_t cap = 2 * m + n + 2
    cdef int64_t* hd = <int64_t*> malloc(cap * sizeof(int64_t))
    cdef Py_ssize_t* hv = <Py_ssize_t*> malloc(cap * sizeof(Py_ssize_t))
    cdef Py_ssize_t hsize

    try:
        for e in range(m):
            t_[e] = tail[e]
            h_[e] = head[e]
            c_[e] = cost[e]
            rf[e] = res_fwd[e]
            rb[e] = res_bwd[e]
        for u in range(n + 1):
            start[u] = 0
        for e in range(m):
            start[t_[e] + 1] += 1
            start[h_[e] + 1] += 1
        for u in range(n):
            start[u + 1] += start[u]
            fill[u] = start[u]
        for e in range(m):
            adj[fill[t_[e]]] = 2 * e
            fill[t_[e]] += 1
            adj[fill[h_[e]]] = 2 * e + 1
            fill[h_[e]] += 1
        for u in range(n):
            pot[u] = 0

        with nogil:
            while routed < demand:
                for u in range(n):
                    dist[u] = INF
                    parent[u] = -1
                    done[u] = 0
                dist[source] = 0
                hsize = 0
                _push(hd, hv, &hsize, 0, source)
                while hsize > 0:
                    _pop(hd, hv, &hsize, &d, &u)
                    if done[u]:
                        continue
                    done[u] = 1
                    if u == sink:
                        break
                    pu = pot[u]
                    for k in range(start[u], start[u + 1]):
                        a = adj[k]
                        e = a >> 1
                        if a & 1:
                            v = t_[e]
                            r = rb[e]
                            c = -c_[e]
                        else:
                            v = h_[e]
                            r = rf[e]
                            c = c_[e]
                        if r <= 0 or done[v]:
                            continue
                        nd = d + c + pu - pot[v]
                        if nd < dist[v]:
                            dist[v] = nd
                            parent[v] = a
                            _push(hd, hv, &hsize, nd, v)
                dt = dist[sink]
                if dt >= INF:
                    break
                for u in range(n):
                    dv = dist[u]
                    pot[u] += dv if dv < dt else dt

                push = demand - routed
                v = sink
                while v != source:
                    a = parent[v]
                    e = a >> 1
                    if a & 1:
                        r = rb[e]
                        v = h_[e]
                    else:
                        r = rf[e]
                        v = t_[e]
                    if r < push:
                        push = r
                v = sink
                while v != source:
                    a = parent[v]
                    e = a >> 1
                    if a & 1:
                        rb[e] -= push
                        rf[e] += push
                        v = h_[e]
                    else:
                        rf[e] -= push
                        rb[e] += push
                        v = t_[e]
                routed += push

        for e in range(m):
            res_fwd[e] = rf[e]
            res_bwd[e] = rb[e]
        return routed
    finally:
        free(t_); free(h_); free(c_); free(rf); free(rb)
        free(start); free(fill); free(adj); free(pot); free(dist)
        free(parent); free(done); free(hd); free(hv)


def theta(long n, double lam):
    cdef double acc = 0.0
    cdef double log_lam
    cdef long i
    if n <= 0 or lam <= 0.0:
        return 0.0
    log_lam = log(lam)
    for i in range(n):
        acc += (n - i) * exp(i * log_lam - lam - lgamma(i + 1.0))
    return n - acc
