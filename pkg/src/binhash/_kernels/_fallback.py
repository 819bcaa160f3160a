"""Pure NumPy/Python implementations of the hot kernels.

Selected at import time when the compiled extension is not available (or
when ``BINHASH_PURE_PYTHON=1``). Signatures and results match
``binhash._kernels._core`` up to floating-point rounding of transcendental
terms; integer-valued quantities (dot products, Hamming distances, cut
assignments) are identical.
"""

import numpy as np

# loss kind codes shared with the compiled kernels
KSH = 0
BRE = 1
ESPLH = 2
EE = 3

_QUERY_CHUNK = 512


def pair_dots(Z, n_idx, m_idx):
    """Code inner products z_n . z_m for the stored pairs.

    Z is an int8 (b, N) matrix with +-1 entries; returns int32 of length P.
    """
    zn = Z[:, n_idx].astype(np.int32)
    zm = Z[:, m_idx].astype(np.int32)
    return np.einsum("ij,ij->j", zn, zm).astype(np.int32)


def _loss_from_dots(kind, b, lam, s, y, y_neg):
    s = np.asarray(s, dtype=np.float64)
    if kind == KSH:
        return (s - b * y) ** 2
    if kind == BRE:
        return (2.0 * (b - s) / b - y) ** 2
    if kind == ESPLH:
        return np.exp(-(y * s) / b)
    if kind == EE:
        d2 = 2.0 * (b - s)  # squared euclidean distance between +-1 codes
        return y * d2 + lam * y_neg * np.exp(-d2)
    raise ValueError(f"unknown loss kind code {kind}")


def pair_losses(kind, b, lam, s, y, y_neg):
    """Per-pair loss values given the pair dot products ``s``."""
    return _loss_from_dots(kind, b, lam, s, y, y_neg)


def bit_coeffs(kind, b, lam, s_rest, y, y_neg):
    """Quadratic-surrogate coefficients for one bit.

    ``s_rest`` is the pair dot product excluding the active bit. Returns
    ``(a, c)`` with ``a = l(1,1) - l(1,-1)`` and ``c = (l(1,1)+l(1,-1))/2``,
    so that ``0.5*z1*z2*a + c`` reproduces the loss restricted to that bit.
    """
    s_rest = np.asarray(s_rest, dtype=np.int32)
    f_hi = _loss_from_dots(kind, b, lam, s_rest + 1, y, y_neg)
    f_lo = _loss_from_dots(kind, b, lam, s_rest - 1, y, y_neg)
    return f_hi - f_lo, 0.5 * (f_hi + f_lo)


def hamming_cross(q_packed, b_packed):
    """Hamming distance matrix between packed query and base codes.

    Both inputs are uint64 arrays of shape (n, words); returns int32
    (n_queries, n_base).
    """
    nq = q_packed.shape[0]
    nb = b_packed.shape[0]
    out = np.empty((nq, nb), dtype=np.int32)
    for start in range(0, nq, _QUERY_CHUNK):
        stop = min(start + _QUERY_CHUNK, nq)
        x = q_packed[start:stop, None, :] ^ b_packed[None, :, :]
        out[start:stop] = np.bitwise_count(x).sum(axis=2, dtype=np.int32)
    return out


class _Dinic:
    """Max-flow on a small graph; adjacency kept as edge-id lists."""

    def __init__(self, n):
        self.n = n
        self.to = []
        self.cap = []
        self.adj = [[] for _ in range(n)]

    def add_edge(self, u, v, cap, rcap=0.0):
        self.adj[u].append(len(self.to))
        self.to.append(v)
        self.cap.append(cap)
        self.adj[v].append(len(self.to))
        self.to.append(u)
        self.cap.append(rcap)

    def _bfs(self, s, t):
        level = [-1] * self.n
        level[s] = 0
        queue = [s]
        for u in queue:
            for eid in self.adj[u]:
                v = self.to[eid]
                if self.cap[eid] > 0.0 and level[v] < 0:
                    level[v] = level[u] + 1
                    queue.append(v)
        self.level = level
        return level[t] >= 0

    def _augment(self, s, t):
        # iterative DFS over the level graph; path kept as a stack of edges
        path = []
        u = s
        while True:
            if u == t:
                bottleneck = min(self.cap[eid] for eid in path)
                for eid in path:
                    self.cap[eid] -= bottleneck
                    self.cap[eid ^ 1] += bottleneck
                return bottleneck
            advanced = False
            while self.it[u] < len(self.adj[u]):
                eid = self.adj[u][self.it[u]]
                v = self.to[eid]
                if self.cap[eid] > 0.0 and self.level[v] == self.level[u] + 1:
                    path.append(eid)
                    u = v
                    advanced = True
                    break
                self.it[u] += 1
            if advanced:
                continue
            if not path:
                return 0.0
            # dead end: retreat and retire the edge that led here
            self.level[u] = -1
            eid = path.pop()
            u = self.to[eid ^ 1]
            self.it[u] += 1

    def max_flow(self, s, t):
        flow = 0.0
        while self._bfs(s, t):
            self.it = [0] * self.n
            while True:
                pushed = self._augment(s, t)
                if pushed <= 0.0:
                    break
                flow += pushed
        return flow

    def source_side(self, s):
        seen = [False] * self.n
        seen[s] = True
        queue = [s]
        for u in queue:
            for eid in self.adj[u]:
                v = self.to[eid]
                if self.cap[eid] > 0.0 and not seen[v]:
                    seen[v] = True
                    queue.append(v)
        return seen


def mincut_side(n, edge_u, edge_v, edge_cap, src_cap, snk_cap):
    """Solve an s-t min cut and report which nodes sit on the source side.

    Nodes are 0..n-1; ``edge_*`` describe undirected internal edges with
    nonnegative capacities; ``src_cap``/``snk_cap`` give terminal-edge
    capacities per node (entries <= 0 mean no edge). Returns a uint8 array
    with 1 for source-side nodes.
    """
    g = _Dinic(n + 2)
    s, t = n, n + 1
    for u, v, c in zip(edge_u, edge_v, edge_cap):
        g.add_edge(int(u), int(v), float(c), float(c))
    for i in range(n):
        if src_cap[i] > 0.0:
            g.add_edge(s, i, float(src_cap[i]))
        if snk_cap[i] > 0.0:
            g.add_edge(i, t, float(snk_cap[i]))
    g.max_flow(s, t)
    side = g.source_side(s)
    return np.array(side[:n], dtype=np.uint8)


_DCD_PATIENCE = 10


def dcd_linear(X, targets, C, max_epochs, tol, orders, squared):
    """Dual coordinate descent for an L2-regularized linear hinge classifier.

    Minimizes (1/(2C))||w||^2 + sum_n loss(1 - t_n w.x_n) with loss = hinge
    (or squared hinge). ``X`` already carries the bias column; ``orders``
    holds one precomputed visiting order per epoch (recycled when epochs
    exceed the rows). Returns ``(w, epochs_run)`` with ``w`` the best
    primal iterate seen; stops once the best objective has improved by
    less than ``tol`` over the last few epochs.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = X.shape[0]
    w = np.zeros(X.shape[1])
    alpha = np.zeros(n)
    if squared:
        diag = 1.0 / (2.0 * C)
        upper = np.inf
    else:
        diag = 0.0
        upper = C
    qii = np.einsum("ij,ij->i", X, X) + diag

    def primal():
        margins = 1.0 - targets * (X @ w)
        np.maximum(margins, 0.0, out=margins)
        if squared:
            hinge = float(np.dot(margins, margins))
        else:
            hinge = float(margins.sum())
        return 0.5 / C * float(np.dot(w, w)) + hinge

    best_obj = primal()
    best_w = w.copy()
    stall = 0
    epochs_run = 0
    for epoch in range(max_epochs):
        for i in orders[epoch % len(orders)]:
            xi = X[i]
            grad = targets[i] * float(np.dot(w, xi)) - 1.0 + diag * alpha[i]
            if alpha[i] <= 0.0:
                pg = min(grad, 0.0)
            elif alpha[i] >= upper:
                pg = max(grad, 0.0)
            else:
                pg = grad
            if abs(pg) > 1e-12:
                new = min(max(alpha[i] - grad / qii[i], 0.0), upper)
                if new != alpha[i]:
                    w += (new - alpha[i]) * targets[i] * xi
                    alpha[i] = new
        epochs_run += 1
        obj = primal()
        if obj < best_obj - tol:
            stall = 0
        else:
            stall += 1
        if obj < best_obj:
            best_obj = obj
            best_w = w.copy()
        if stall >= _DCD_PATIENCE:
            break
    return best_w, epochs_run
