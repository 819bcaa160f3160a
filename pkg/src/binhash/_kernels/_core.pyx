# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.

Mirrors ``binhash._kernels._fallback``: pair dot products, per-pair losses,
per-bit surrogate coefficients, packed Hamming distances, s-t min cut
(Dinic), and the dual coordinate descent inner loop.
"""

import numpy as np

from libc.float cimport DBL_MAX
from libc.math cimport exp as c_exp
from libc.stdlib cimport free, malloc

KSH = 0
BRE = 1
ESPLH = 2
EE = 3


cdef inline double _loss_one(int kind, int b, double lam, double s,
                             double y, double y_neg) nogil:
    cdef double d2
    if kind == 0:    # KSH
        return (s - b * y) * (s - b * y)
    elif kind == 1:  # BRE
        d2 = 2.0 * (b - s) / b - y
        return d2 * d2
    elif kind == 2:  # eSPLH
        return c_exp(-(y * s) / b)
    else:            # EE
        d2 = 2.0 * (b - s)
        return y * d2 + lam * y_neg * c_exp(-d2)


def pair_dots(signed char[:, ::1] Z, long long[::1] n_idx, long long[::1] m_idx):
    """Code inner products z_n . z_m for the stored pairs, as int32."""
    cdef Py_ssize_t P = n_idx.shape[0]
    cdef Py_ssize_t b = Z.shape[0]
    out_arr = np.empty(P, dtype=np.int32)
    cdef int[::1] out = out_arr
    cdef Py_ssize_t p, i
    cdef int acc
    cdef long long n, m
    with nogil:
        for p in range(P):
            n = n_idx[p]
            m = m_idx[p]
            acc = 0
            for i in range(b):
                acc += Z[i, n] * Z[i, m]
            out[p] = acc
    return out_arr


def pair_losses(int kind, int b, double lam, int[::1] s,
                double[::1] y, double[::1] y_neg):
    """Per-pair loss values given the pair dot products ``s``."""
    cdef Py_ssize_t P = s.shape[0]
    out_arr = np.empty(P, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t p
    with nogil:
        for p in range(P):
            out[p] = _loss_one(kind, b, lam, s[p], y[p], y_neg[p])
    return out_arr


def bit_coeffs(int kind, int b, double lam, int[::1] s_rest,
               double[::1] y, double[::1] y_neg):
    """Surrogate coefficients (a, c) per pair for one bit; see fallback."""
    cdef Py_ssize_t P = s_rest.shape[0]
    a_arr = np.empty(P, dtype=np.float64)
    c_arr = np.empty(P, dtype=np.float64)
    cdef double[::1] a = a_arr
    cdef double[::1] c = c_arr
    cdef Py_ssize_t p
    cdef double f_hi, f_lo
    with nogil:
        for p in range(P):
            f_hi = _loss_one(kind, b, lam, s_rest[p] + 1.0, y[p], y_neg[p])
            f_lo = _loss_one(kind, b, lam, s_rest[p] - 1.0, y[p], y_neg[p])
            a[p] = f_hi - f_lo
            c[p] = 0.5 * (f_hi + f_lo)
    return a_arr, c_arr


cdef inline unsigned long long _popcnt64(unsigned long long x) nogil:
    x = x - ((x >> 1) & 0x5555555555555555ULL)
    x = (x & 0x3333333333333333ULL) + ((x >> 2) & 0x3333333333333333ULL)
    x = (x + (x >> 4)) & 0x0F0F0F0F0F0F0F0FULL
    return (x * 0x0101010101010101ULL) >> 56


def hamming_cross(unsigned long long[:, ::1] q_packed,
                  unsigned long long[:, ::1] b_packed):
    """Hamming distance matrix between packed query and base codes."""
    cdef Py_ssize_t nq = q_packed.shape[0]
    cdef Py_ssize_t nb = b_packed.shape[0]
    cdef Py_ssize_t W = q_packed.shape[1]
    out_arr = np.empty((nq, nb), dtype=np.int32)
    cdef int[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, w
    cdef unsigned long long acc
    with nogil:
        for i in range(nq):
            for j in range(nb):
                acc = 0
                for w in range(W):
                    acc += _popcnt64(q_packed[i, w] ^ b_packed[j, w])
                out[i, j] = <int> acc
    return out_arr


# ---------------------------------------------------------------------------
# Dinic max-flow / min-cut
# ---------------------------------------------------------------------------

cdef struct FlowGraph:
    int n
    int n_edges
    int* eto
    int* enext
    int* ehead
    double* ecap


cdef inline void _add_edge(FlowGraph* g, int u, int v, double cap, double rcap) nogil:
    g.eto[g.n_edges] = v
    g.ecap[g.n_edges] = cap
    g.enext[g.n_edges] = g.ehead[u]
    g.ehead[u] = g.n_edges
    g.n_edges += 1
    g.eto[g.n_edges] = u
    g.ecap[g.n_edges] = rcap
    g.enext[g.n_edges] = g.ehead[v]
    g.ehead[v] = g.n_edges
    g.n_edges += 1


cdef bint _bfs(FlowGraph* g, int s, int t, int* level, int* queue) nogil:
    cdef int head = 0, tail = 0, u, v, eid
    for u in range(g.n):
        level[u] = -1
    level[s] = 0
    queue[tail] = s
    tail += 1
    while head < tail:
        u = queue[head]
        head += 1
        eid = g.ehead[u]
        while eid >= 0:
            v = g.eto[eid]
            if g.ecap[eid] > 0.0 and level[v] < 0:
                level[v] = level[u] + 1
                queue[tail] = v
                tail += 1
            eid = g.enext[eid]
    return level[t] >= 0


cdef double _augment(FlowGraph* g, int s, int t, int* level, int* cur,
                     int* path) nogil:
    cdef int u = s, v, eid, depth = 0, k
    cdef double bottleneck
    while True:
        if u == t:
            bottleneck = DBL_MAX
            for k in range(depth):
                if g.ecap[path[k]] < bottleneck:
                    bottleneck = g.ecap[path[k]]
            for k in range(depth):
                g.ecap[path[k]] -= bottleneck
                g.ecap[path[k] ^ 1] += bottleneck
            return bottleneck
        eid = cur[u]
        while eid >= 0:
            v = g.eto[eid]
            if g.ecap[eid] > 0.0 and level[v] == level[u] + 1:
                break
            eid = g.enext[eid]
            cur[u] = eid
        if eid >= 0:
            path[depth] = eid
            depth += 1
            u = g.eto[eid]
            continue
        if depth == 0:
            return 0.0
        level[u] = -1
        depth -= 1
        eid = path[depth]
        u = g.eto[eid ^ 1]
        cur[u] = g.enext[eid]


def mincut_side(int n, long long[::1] edge_u, long long[::1] edge_v,
                double[::1] edge_cap, double[::1] src_cap, double[::1] snk_cap):
    """s-t min cut; returns uint8 per node, 1 = source side. See fallback."""
    cdef int n_internal = <int> edge_u.shape[0]
    cdef int n_nodes = n + 2
    cdef int s = n, t = n + 1
    cdef int max_edges = 2 * (n_internal + 2 * n)
    cdef FlowGraph g
    cdef int i, u, eid, vv
    cdef int* level
    cdef int* queue
    cdef int* cur
    cdef int* path

    g.n = n_nodes
    g.n_edges = 0
    g.eto = <int*> malloc(max_edges * sizeof(int))
    g.enext = <int*> malloc(max_edges * sizeof(int))
    g.ecap = <double*> malloc(max_edges * sizeof(double))
    g.ehead = <int*> malloc(n_nodes * sizeof(int))
    level = <int*> malloc(n_nodes * sizeof(int))
    queue = <int*> malloc(n_nodes * sizeof(int))
    cur = <int*> malloc(n_nodes * sizeof(int))
    path = <int*> malloc(n_nodes * sizeof(int))

    side_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] side = side_arr
    try:
        if (g.eto == NULL or g.enext == NULL or g.ecap == NULL or
                g.ehead == NULL or level == NULL or queue == NULL or
                cur == NULL or path == NULL):
            raise MemoryError("min-cut graph allocation failed")
        with nogil:
            for i in range(n_nodes):
                g.ehead[i] = -1
            for i in range(n_internal):
                _add_edge(&g, <int> edge_u[i], <int> edge_v[i],
                          edge_cap[i], edge_cap[i])
            for i in range(n):
                if src_cap[i] > 0.0:
                    _add_edge(&g, s, i, src_cap[i], 0.0)
                if snk_cap[i] > 0.0:
                    _add_edge(&g, i, t, snk_cap[i], 0.0)
            while _bfs(&g, s, t, level, queue):
                for i in range(n_nodes):
                    cur[i] = g.ehead[i]
                while _augment(&g, s, t, level, cur, path) > 0.0:
                    pass
            # residual BFS from s marks the source side of the cut
            for i in range(n_nodes):
                level[i] = -1
            level[s] = 0
            queue[0] = s
            i = 0
            vv = 1
            while i < vv:
                u = queue[i]
                i += 1
                eid = g.ehead[u]
                while eid >= 0:
                    if g.ecap[eid] > 0.0 and level[g.eto[eid]] < 0:
                        level[g.eto[eid]] = 1
                        queue[vv] = g.eto[eid]
                        vv += 1
                    eid = g.enext[eid]
            for i in range(n):
                if level[i] >= 0:
                    side[i] = 1
    finally:
        free(g.eto)
        free(g.enext)
        free(g.ecap)
        free(g.ehead)
        free(level)
        free(queue)
        free(cur)
        free(path)
    return side_arr


def dcd_linear(double[:, ::1] X, double[::1] targets, double C,
               int max_epochs, double tol, long long[:, ::1] orders,
               bint squared):
    """Dual coordinate descent for the L2-regularized hinge objective.

    Same contract as the fallback: one visiting order per epoch (rows of
    ``orders``, recycled), best primal iterate returned.
    """
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t d = X.shape[1]
    cdef Py_ssize_t n_orders = orders.shape[0]
    w_arr = np.zeros(d, dtype=np.float64)
    cdef double[::1] w = w_arr
    best_arr = np.zeros(d, dtype=np.float64)
    cdef double[::1] best_w = best_arr
    alpha_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] alpha = alpha_arr
    qii_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] qii = qii_arr
    cdef double diag, upper, grad, pg, new, best_obj, obj, acc, m
    cdef Py_ssize_t i, j, k, epoch
    cdef int epochs_run = 0
    cdef int stall = 0

    if squared:
        diag = 1.0 / (2.0 * C)
        upper = DBL_MAX
    else:
        diag = 0.0
        upper = C

    with nogil:
        for i in range(n):
            acc = 0.0
            for j in range(d):
                acc += X[i, j] * X[i, j]
            qii[i] = acc + diag

        best_obj = 0.0
        for i in range(n):
            best_obj += 1.0  # objective at w = 0: hinge is 1 per sample

        for epoch in range(max_epochs):
            for k in range(n):
                i = orders[epoch % n_orders, k]
                acc = 0.0
                for j in range(d):
                    acc += w[j] * X[i, j]
                grad = targets[i] * acc - 1.0 + diag * alpha[i]
                if alpha[i] <= 0.0:
                    pg = grad if grad < 0.0 else 0.0
                elif alpha[i] >= upper:
                    pg = grad if grad > 0.0 else 0.0
                else:
                    pg = grad
                if pg > 1e-12 or pg < -1e-12:
                    new = alpha[i] - grad / qii[i]
                    if new < 0.0:
                        new = 0.0
                    elif new > upper:
                        new = upper
                    if new != alpha[i]:
                        acc = (new - alpha[i]) * targets[i]
                        for j in range(d):
                            w[j] += acc * X[i, j]
                        alpha[i] = new
            epochs_run += 1
            # primal objective: (1/(2C))||w||^2 + sum hinge
            obj = 0.0
            for j in range(d):
                obj += w[j] * w[j]
            obj *= 0.5 / C
            for i in range(n):
                acc = 0.0
                for j in range(d):
                    acc += w[j] * X[i, j]
                m = 1.0 - targets[i] * acc
                if m > 0.0:
                    if squared:
                        obj += m * m
                    else:
                        obj += m
            if obj < best_obj - tol:
                stall = 0
            else:
                stall += 1
            if obj < best_obj:
                best_obj = obj
                for j in range(d):
                    best_w[j] = w[j]
            if stall >= 10:
                break
    return best_arr, epochs_run
